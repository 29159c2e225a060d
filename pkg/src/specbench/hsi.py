"""Hyperspectral data model and scene synthesis.

Array conventions
-----------------
Cubes are stored as ``data[row, col, band]`` (``height x width x bands``) and
label maps as ``labels[row, col]``. Wavelengths are in nanometres. Wavelength
integrals are Riemann sums weighted by the band pitch ``delta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import GridMismatchError, ValidationError

__all__ = [
    "WavelengthGrid",
    "Spectrum",
    "HsiCube",
    "LabelMap",
    "AbundanceMap",
    "IlluminantAndResponse",
    "DEFAULT_GRID",
    "synthesize_pure_scene",
    "synthesize_mixed_scene",
    "apply_illumination",
    "resample_spectrum",
    "resample_cube",
]

_GRID_TOL = 1e-6


def _frozen(arr):
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class WavelengthGrid:
    """Uniform grid of band centres from ``lambda_min`` to ``lambda_max``.

    ``bandwidth`` is only consulted for single-band grids, where the pitch
    cannot be inferred from the end points.
    """

    lambda_min: float
    lambda_max: float
    bands: int
    bandwidth: float = 1.0

    def __post_init__(self):
        if int(self.bands) != self.bands or self.bands < 1:
            raise ValidationError(f"bands must be a positive integer, got {self.bands}")
        object.__setattr__(self, "bands", int(self.bands))
        object.__setattr__(self, "lambda_min", float(self.lambda_min))
        object.__setattr__(self, "lambda_max", float(self.lambda_max))
        if not (np.isfinite(self.lambda_min) and np.isfinite(self.lambda_max)):
            raise ValidationError("grid end points must be finite")
        if self.bands == 1:
            if self.lambda_min != self.lambda_max:
                raise ValidationError("a single-band grid needs lambda_min == lambda_max")
            if not self.bandwidth > 0:
                raise ValidationError("bandwidth must be positive")
        elif not self.lambda_max > self.lambda_min:
            raise ValidationError("lambda_max must exceed lambda_min")

    @property
    def delta(self) -> float:
        if self.bands == 1:
            return float(self.bandwidth)
        return (self.lambda_max - self.lambda_min) / (self.bands - 1)

    @property
    def centers(self) -> np.ndarray:
        if self.bands == 1:
            return np.array([self.lambda_min])
        c = self.lambda_min + self.delta * np.arange(self.bands)
        c[-1] = self.lambda_max
        return c

    @classmethod
    def from_centers(cls, centers) -> "WavelengthGrid":
        """Rebuild a grid from stored centres (e.g. float32 file headers)."""
        centers = np.asarray(centers, dtype=float)
        if centers.ndim != 1 or centers.size == 0:
            raise ValidationError("centers must be a non-empty 1-D array")
        if centers.size == 1:
            return cls(centers[0], centers[0], 1)
        steps = np.diff(centers)
        if np.any(steps <= 0):
            raise ValidationError("wavelength centers must be strictly increasing")
        mean_step = (centers[-1] - centers[0]) / (centers.size - 1)
        # float32 headers only keep ~7 significant digits
        if np.max(np.abs(steps - mean_step)) > 1e-4 * max(1.0, abs(centers[-1])):
            raise ValidationError("wavelength centers are not uniformly spaced")
        return cls(centers[0], centers[-1], centers.size)

    def index_of(self, wavelength: float) -> float:
        """Fractional band index of ``wavelength``."""
        return (wavelength - self.lambda_min) / self.delta

    def matches(self, other: "WavelengthGrid", tol: float = _GRID_TOL) -> bool:
        return (
            self.bands == other.bands
            and abs(self.lambda_min - other.lambda_min) <= tol
            and abs(self.lambda_max - other.lambda_max) <= tol
            and abs(self.delta - other.delta) <= tol
        )


DEFAULT_GRID = WavelengthGrid(600.0, 900.0, 100)


def check_same_grid(*grids: WavelengthGrid) -> WavelengthGrid:
    first = grids[0]
    for g in grids[1:]:
        if not first.matches(g):
            raise GridMismatchError(f"wavelength grids differ: {first} vs {g}")
    return first


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Non-negative samples of a spectral quantity on ``grid``."""

    grid: WavelengthGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size != self.grid.bands:
            raise ValidationError(
                f"spectrum has {v.size} values but grid has {self.grid.bands} bands"
            )
        if not np.all(np.isfinite(v)):
            raise ValidationError("spectrum values must be finite")
        if np.any(v < 0):
            raise ValidationError("spectrum values must be non-negative")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def constant(cls, grid: WavelengthGrid, value: float = 1.0) -> "Spectrum":
        return cls(grid, np.full(grid.bands, float(value)))

    def __len__(self):
        return self.grid.bands


@dataclass(frozen=True, eq=False)
class HsiCube:
    """Hyperspectral image ``data[row, col, band]``.

    Floating dtypes are kept as given so that float32 cubes survive a file
    round trip bit for bit; anything else is promoted to float64.
    """

    grid: WavelengthGrid
    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data)
        if not np.issubdtype(d.dtype, np.floating):
            d = d.astype(float)
        d = np.array(d, copy=True)
        if d.ndim != 3:
            raise ValidationError(f"cube data must be 3-D (rows, cols, bands), got {d.shape}")
        if d.shape[2] != self.grid.bands:
            raise ValidationError(
                f"cube has {d.shape[2]} bands but grid has {self.grid.bands}"
            )
        if not np.all(np.isfinite(d)):
            raise ValidationError("cube contains non-finite values")
        if np.any(d < 0):
            raise ValidationError("cube contains negative values")
        object.__setattr__(self, "data", _frozen(d))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def pixels(self) -> np.ndarray:
        """All pixel spectra as an ``(height * width, bands)`` matrix."""
        return self.data.reshape(-1, self.grid.bands)

    def with_data(self, data) -> "HsiCube":
        return HsiCube(self.grid, data)


@dataclass(frozen=True, eq=False)
class LabelMap:
    labels: np.ndarray
    class_names: tuple = ()

    def __post_init__(self):
        lab = np.array(self.labels, copy=True)
        if lab.ndim != 2:
            raise ValidationError("labels must be a 2-D array")
        if lab.size and not np.issubdtype(lab.dtype, np.integer):
            if not np.all(lab == np.round(lab)):
                raise ValidationError("labels must be integers")
        lab = lab.astype(np.int64)
        names = tuple(str(n) for n in self.class_names)
        if not names:
            k = int(lab.max()) + 1 if lab.size else 0
            names = tuple(f"class_{i}" for i in range(k))
        if lab.size and (lab.min() < 0 or lab.max() >= len(names)):
            raise ValidationError(f"labels must lie in [0, {len(names)})")
        object.__setattr__(self, "labels", _frozen(lab))
        object.__setattr__(self, "class_names", names)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True, eq=False)
class AbundanceMap:
    """Per-pixel material fractions ``abundances[row, col, k]``."""

    abundances: np.ndarray

    def __post_init__(self):
        a = np.array(self.abundances, dtype=float, copy=True)
        if a.ndim != 3:
            raise ValidationError("abundances must be 3-D (rows, cols, K)")
        if not np.all(np.isfinite(a)) or np.any(a < 0) or np.any(a > 1):
            raise ValidationError("abundances must lie in [0, 1]")
        if np.any(a.sum(axis=2) > 1 + 1e-9):
            raise ValidationError("per-pixel abundances must sum to at most 1")
        object.__setattr__(self, "abundances", _frozen(a))

    @property
    def n_classes(self) -> int:
        return self.abundances.shape[2]


@dataclass(frozen=True, eq=False)
class IlluminantAndResponse:
    """Light source spectrum and the optical system response."""

    illuminant: Spectrum
    response: Spectrum
    grid: WavelengthGrid = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "grid", check_same_grid(self.illuminant.grid, self.response.grid)
        )

    @classmethod
    def flat(cls, grid: WavelengthGrid) -> "IlluminantAndResponse":
        return cls(Spectrum.constant(grid), Spectrum.constant(grid))


def _library_matrix(library: Sequence[Spectrum]):
    if len(library) == 0:
        raise ValidationError("spectrum library is empty")
    grid = check_same_grid(*(s.grid for s in library))
    return grid, np.stack([s.values for s in library])


def synthesize_pure_scene(labels: LabelMap, library: Sequence[Spectrum], alpha) -> HsiCube:
    """Scene where every pixel is a scaled copy of one library spectrum."""
    grid, lib = _library_matrix(library)
    if labels.n_classes != lib.shape[0]:
        raise ValidationError(
            f"label map declares {labels.n_classes} classes, library has {lib.shape[0]}"
        )
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), labels.labels.shape)
    if not np.all(alpha > 0):
        raise ValidationError("alpha must be strictly positive")
    data = alpha[..., None] * lib[labels.labels]
    return HsiCube(grid, data)


def synthesize_mixed_scene(abund: AbundanceMap, library: Sequence[Spectrum]) -> HsiCube:
    """Linear mixing of library spectra weighted by per-pixel abundances."""
    grid, lib = _library_matrix(library)
    if abund.n_classes != lib.shape[0]:
        raise ValidationError(
            f"abundance map has {abund.n_classes} materials, library has {lib.shape[0]}"
        )
    data = np.einsum("rck,kb->rcb", abund.abundances, lib)
    return HsiCube(grid, data)


def apply_illumination(reflectance: HsiCube, ir: IlluminantAndResponse) -> HsiCube:
    """Radiance seen by the camera: reflectance times the illuminant.

    The system response is applied at capture time, not here.
    """
    check_same_grid(reflectance.grid, ir.grid)
    return HsiCube(reflectance.grid, reflectance.data * ir.illuminant.values)


def resample_spectrum(s: Spectrum, target: WavelengthGrid) -> Spectrum:
    """Linear interpolation of ``s`` onto the band centres of ``target``."""
    src = s.grid.centers
    dst = target.centers
    tol = 1e-9 * max(1.0, abs(src[-1]))
    if dst[0] < src[0] - tol or dst[-1] > src[-1] + tol:
        raise ValidationError(
            f"target range [{dst[0]}, {dst[-1]}] exceeds source range [{src[0]}, {src[-1]}]"
        )
    if s.grid.bands == 1:
        return Spectrum(target, np.full(target.bands, s.values[0]))
    vals = np.interp(np.clip(dst, src[0], src[-1]), src, s.values)
    return Spectrum(target, np.maximum(vals, 0.0))


def resample_cube(cube: HsiCube, target: WavelengthGrid) -> HsiCube:
    """Linear interpolation of every pixel spectrum onto ``target``."""
    src = cube.grid.centers
    dst = target.centers
    tol = 1e-9 * max(1.0, abs(src[-1]))
    if dst[0] < src[0] - tol or dst[-1] > src[-1] + tol:
        raise ValidationError(
            f"target range [{dst[0]}, {dst[-1]}] exceeds source range [{src[0]}, {src[-1]}]"
        )
    # interpolation matrix: column j of np.interp applied to unit vectors
    M = np.stack([np.interp(np.clip(dst, src[0], src[-1]), src, e) for e in np.eye(src.size)], axis=1)
    return HsiCube(target, np.maximum(np.asarray(cube.data, dtype=float) @ M.T, 0.0))
