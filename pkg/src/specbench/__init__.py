"""Simulation workbench for a programmable spectral-filter camera that
classifies materials per pixel by computing learned spectral projections
optically."""

__version__ = "0.1.0"

from .exceptions import (
    CalibrationError,
    DegenerateApertureError,
    FormatError,
    GridMismatchError,
    SpecbenchError,
    TrainingError,
    ValidationError,
)
from .filters import SpectralFilterBank, load_bank_csv, matched_filter, save_bank_csv
from .hsi import (
    DEFAULT_GRID,
    AbundanceMap,
    HsiCube,
    IlluminantAndResponse,
    LabelMap,
    Spectrum,
    WavelengthGrid,
)
from .optics import (
    CodedApertureModel,
    MeasurementSet,
    NoiseModel,
    acquire_measurements,
    build_aperture_model,
    identity_aperture,
)

__all__ = [
    "__version__",
    "CalibrationError",
    "DegenerateApertureError",
    "FormatError",
    "GridMismatchError",
    "SpecbenchError",
    "TrainingError",
    "ValidationError",
    "SpectralFilterBank",
    "load_bank_csv",
    "matched_filter",
    "save_bank_csv",
    "DEFAULT_GRID",
    "AbundanceMap",
    "HsiCube",
    "IlluminantAndResponse",
    "LabelMap",
    "Spectrum",
    "WavelengthGrid",
    "CodedApertureModel",
    "MeasurementSet",
    "NoiseModel",
    "acquire_measurements",
    "build_aperture_model",
    "identity_aperture",
]
