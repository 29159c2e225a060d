"""Forward model of the programmable spectral-filter camera.

A grating at the first image plane disperses light so that the pupil plane
(the "rainbow plane") holds the scene spectrum blurred by the aperture code;
an SLM there applies a spectral transmittance profile and the sensor on the
final image plane records the spectrally filtered, spatially blurred image.

Mask axis 0 is the dispersion direction. Mask pixels are centred on
rainbow-plane band positions, so with the default pitch one mask column maps
to exactly one spectral band.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve

from .exceptions import DegenerateApertureError, ValidationError
from .filters import SpectralFilterBank
from .hsi import (
    DEFAULT_GRID,
    HsiCube,
    IlluminantAndResponse,
    Spectrum,
    WavelengthGrid,
    check_same_grid,
)
from .slm import DEFAULT_DC_ROWS, DEFAULT_SLM_ROWS, encode_filter_to_slm

__all__ = [
    "CodedApertureModel",
    "NoiseModel",
    "MeasurementSet",
    "default_mask",
    "build_aperture_model",
    "identity_aperture",
    "convolve_spectral",
    "apply_coded_blur",
    "capture_filtered_image",
    "rainbow_plane_spectrum",
    "measurement_plan",
    "acquire_measurements",
    "DEFAULT_FOCAL_LENGTH_MM",
    "DEFAULT_GROOVE_DENSITY",
]

DEFAULT_FOCAL_LENGTH_MM = 100.0
DEFAULT_GROOVE_DENSITY = 300.0  # grooves per mm
_NM_TO_MM = 1e-6


# --------------------------------------------------------------------------
# aperture


@lru_cache(maxsize=8)
def _best_code(length: int, seed: int, candidates: int) -> tuple:
    """Random binary code with the largest minimum |DFT| (zero padded to 2n)."""
    rng = np.random.default_rng(seed)
    best, best_margin = None, -1.0
    for _ in range(candidates):
        code = rng.integers(0, 2, length)
        code[0] = code[-1] = 1
        margin = np.min(np.abs(np.fft.rfft(code, 2 * length))) / code.sum()
        if margin > best_margin:
            best, best_margin = code, margin
    return tuple(int(v) for v in best), float(best_margin)


def default_mask(size: int = 32, seed: int = 2019, candidates: int = 400) -> np.ndarray:
    """Separable pseudo-random binary mask ``outer(code_x, code_y)``.

    Each 1-D code is the best of ``candidates`` seeded draws by minimum DFT
    magnitude, so both the spectral kernel (a scaled copy of ``code_x``) and
    the spatial PSF (``|DFT(code_x)|^2 |DFT(code_y)|^2``) are invertible.
    """
    cx, _ = _best_code(size, seed, candidates)
    cy, _ = _best_code(size, seed + 1, candidates)
    return np.outer(cx, cy).astype(np.uint8)


def _kernel_with_center_convention(taps: dict) -> np.ndarray:
    """Pack ``{offset: weight}`` into an array whose tap ``t`` sits at offset
    ``t - (P - 1) // 2``."""
    nz = [j for j, v in taps.items() if v > 0]
    lo, hi = min(nz), max(nz)
    while -lo != (hi - lo) // 2:
        if -lo > (hi - lo) // 2:
            hi += 1
        else:
            lo -= 1
    return np.array([taps.get(j, 0.0) for j in range(lo, hi + 1)])


def _spectral_kernel(mask, pitch_mm, band_width_mm):
    profile = mask.sum(axis=1).astype(float)
    M = profile.size
    centre = (M - 1) // 2
    taps = {}
    for i, w in enumerate(profile):
        if w == 0:
            continue
        x0 = ((i - centre) - 0.5) * pitch_mm / band_width_mm
        x1 = ((i - centre) + 0.5) * pitch_mm / band_width_mm
        # overlap of [x0, x1) with band bins [j - 0.5, j + 0.5)
        for j in range(int(np.floor(x0 + 0.5)), int(np.ceil(x1 + 0.5)) + 1):
            ov = min(x1, j + 0.5) - max(x0, j - 0.5)
            if ov > 1e-12:
                taps[j] = taps.get(j, 0.0) + w * ov / (x1 - x0)
    k = _kernel_with_center_convention(taps)
    return k / k.sum()


def _binning_matrix(bins_per_pixel, n_fine, oversample, half):
    """0/1 matrix assigning fine frequency samples to sensor pixels."""
    # fine samples cover one period of the mask spectrum, in DFT-bin units
    u = (np.arange(n_fine) - n_fine // 2) / oversample
    pix = np.floor(u / bins_per_pixel + 0.5).astype(np.int64)
    B = np.zeros((2 * half + 1, n_fine))
    B[pix + half, np.arange(n_fine)] = 1.0
    return B


def _psf_stack(mask, pitch_mm, pixel_pitch_mm, focal_mm, wavelengths_nm, oversample=8):
    """Per-band PSFs ``|A(x / (lambda f), y / (lambda f))|^2`` integrated over
    sensor pixels.

    ``|A|^2`` is sampled once, over one period, on a grid ``oversample`` times
    finer than the DFT bins; each band then bins those samples into pixels
    after stretching by its wavelength. Because every fine sample lands at a
    pixel radius that only grows with the stretch, the PSF second moment is
    non-decreasing in wavelength.
    """
    M, N = mask.shape
    F = np.abs(np.fft.fftshift(np.fft.fft2(mask.astype(float), (M * oversample, N * oversample)))) ** 2
    lam = np.asarray(wavelengths_nm, dtype=float) * _NM_TO_MM
    # DFT bins per sensor pixel along each axis
    bx = pixel_pitch_mm * pitch_mm * M / (lam * focal_mm)
    by = pixel_pitch_mm * pitch_mm * N / (lam * focal_mm)
    half = int(np.ceil(max(M / 2 / bx.min(), N / 2 / by.min()) + 0.5))
    total = F.sum()
    psfs = np.empty((lam.size, 2 * half + 1, 2 * half + 1))
    for b in range(lam.size):
        Bx = _binning_matrix(bx[b], M * oversample, oversample, half)
        By = _binning_matrix(by[b], N * oversample, oversample, half)
        psfs[b] = Bx @ F @ By.T / total
    # trim border rings that are empty for every band
    while psfs.shape[1] > 1 and not np.any(psfs[:, [0, -1], :]) and not np.any(psfs[:, :, [0, -1]]):
        psfs = psfs[:, 1:-1, 1:-1]
    return psfs


@dataclass(frozen=True, eq=False)
class CodedApertureModel:
    """Binary pupil code plus the blurs it induces.

    Attributes
    ----------
    spectral_kernel : ndarray, shape (P,)
        Energy-normalised 1-D blur along wavelength; tap ``t`` acts at band
        offset ``t - (P - 1) // 2``.
    psfs : ndarray, shape (bands, S, S)
        Per-band spatial PSFs, each summing to one, centred at ``S // 2``.
    """

    mask: np.ndarray
    grid: WavelengthGrid
    pitch_mm: float
    focal_length_mm: float
    groove_density: float
    pixel_pitch_mm: float
    spectral_kernel: np.ndarray
    psfs: np.ndarray
    invertibility_margin: float = field(default=float("nan"))

    @property
    def is_identity(self) -> bool:
        return self.spectral_kernel.size == 1 and self.psfs.shape[1] == 1

    def psf(self, band: int | None = None) -> np.ndarray:
        """PSF of ``band`` (default: centre band)."""
        if band is None:
            band = self.grid.bands // 2
        return self.psfs[band]

    @staticmethod
    def second_moment_radius(psf) -> float:
        s = psf.shape[0]
        r = np.arange(s) - s // 2
        rr = r[:, None] ** 2 + r[None, :] ** 2
        return float(np.sqrt(np.sum(psf * rr) / np.sum(psf)))


def build_aperture_model(
    mask=None,
    focal_length_mm: float = DEFAULT_FOCAL_LENGTH_MM,
    groove_density: float = DEFAULT_GROOVE_DENSITY,
    grid: WavelengthGrid = DEFAULT_GRID,
    pitch_mm: float | None = None,
    pixel_pitch_mm: float | None = None,
    oversample: int = 8,
) -> CodedApertureModel:
    """Derive spectral kernel and spatial PSFs from a binary pupil mask.

    ``pitch_mm`` defaults to the rainbow-plane width of one spectral band
    (``delta * groove_density * focal_length``). ``pixel_pitch_mm`` defaults
    to the value at which, at ``grid.lambda_max``, sensor pixels sample the
    mask spectrum exactly on its DFT bins; shorter wavelengths give narrower
    PSFs. With ``oversample=1`` the PSF of the last band is then exactly the
    normalised ``|DFT(mask)|^2``.
    """
    if mask is None:
        mask = default_mask()
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.size == 0:
        raise ValidationError("mask must be a non-empty 2-D array")
    if not np.all((mask == 0) | (mask == 1)):
        raise ValidationError("mask entries must be 0 or 1")
    mask = mask.astype(np.uint8)
    if not mask.any():
        raise DegenerateApertureError("mask is fully closed; no light reaches the sensor")
    if focal_length_mm <= 0 or groove_density <= 0:
        raise ValidationError("focal length and groove density must be positive")
    band_width_mm = grid.delta * _NM_TO_MM * groove_density * focal_length_mm
    if pitch_mm is None:
        pitch_mm = band_width_mm
    if pixel_pitch_mm is None:
        pixel_pitch_mm = grid.lambda_max * _NM_TO_MM * focal_length_mm / (max(mask.shape) * pitch_mm)
    kernel = _spectral_kernel(mask, pitch_mm, band_width_mm)
    psfs = _psf_stack(mask, pitch_mm, pixel_pitch_mm, focal_length_mm, grid.centers, int(oversample))
    margin = float(np.min(np.abs(np.fft.rfft(kernel, 2 * kernel.size))))
    for arr in (mask, kernel, psfs):
        arr.setflags(write=False)
    return CodedApertureModel(
        mask=mask,
        grid=grid,
        pitch_mm=float(pitch_mm),
        focal_length_mm=float(focal_length_mm),
        groove_density=float(groove_density),
        pixel_pitch_mm=float(pixel_pitch_mm),
        spectral_kernel=kernel,
        psfs=psfs,
        invertibility_margin=margin,
    )


def identity_aperture(grid: WavelengthGrid) -> CodedApertureModel:
    """Single-pixel pupil: no spectral blur and delta PSFs."""
    return build_aperture_model(np.ones((1, 1), np.uint8), grid=grid)


# --------------------------------------------------------------------------
# blurs


def convolve_spectral(data, kernel) -> np.ndarray:
    """Same-size, zero-padded convolution along the last axis.

    Tap ``t`` of ``kernel`` contributes ``kernel[t] * data[..., b - (t - c)]``
    to band ``b`` with ``c = (len(kernel) - 1) // 2``.
    """
    data = np.asarray(data, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    B = data.shape[-1]
    c = (kernel.size - 1) // 2
    out = np.zeros_like(data)
    for t, w in enumerate(kernel):
        if w == 0:
            continue
        off = t - c
        if off >= 0:
            if off < B:
                out[..., off:] += w * data[..., : B - off]
        elif -off < B:
            out[..., : B + off] += w * data[..., -off:]
    return out


def apply_coded_blur(cube: HsiCube, ap: CodedApertureModel) -> HsiCube:
    """Spatial blur of every band by its PSF, then spectral blur by the code."""
    check_same_grid(cube.grid, ap.grid)
    data = np.asarray(cube.data, dtype=float)
    if ap.psfs.shape[1] > 1:
        planes = np.transpose(data, (2, 0, 1))
        blurred = fftconvolve(planes, ap.psfs, mode="same", axes=(1, 2))
        data = np.transpose(blurred, (1, 2, 0))
    if ap.spectral_kernel.size > 1:
        data = convolve_spectral(data, ap.spectral_kernel)
    return HsiCube(cube.grid, np.maximum(data, 0.0))


# --------------------------------------------------------------------------
# capture


@dataclass(frozen=True)
class NoiseModel:
    """Shot plus read noise.

    ``peak_photons`` is the expected photon count at the brightest pixel of
    the noiseless sum image. Acquisition routines may treat it as a total
    budget to be shared by all images of a sequence.
    """

    peak_photons: float
    read_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.peak_photons > 0:
            raise ValidationError("peak_photons must be positive")
        if self.read_sigma < 0:
            raise ValidationError("read_sigma must be non-negative")


def _weights(grid, ir):
    if ir is None:
        return np.full(grid.bands, grid.delta)
    check_same_grid(grid, ir.grid)
    return ir.response.values * grid.delta


def _project(data, profile, weights):
    return np.asarray(data, dtype=float) @ (profile * weights)


def _noisy(image, scale, read_sigma, rng):
    counts = rng.poisson(np.maximum(image, 0.0) * scale).astype(float)
    if read_sigma > 0:
        counts += rng.normal(0.0, read_sigma, size=counts.shape)
    return counts / scale


def _check_profile(s, bands):
    values = s.values if isinstance(s, Spectrum) else np.asarray(s, dtype=float).ravel()
    if values.size != bands:
        raise ValidationError(f"profile has {values.size} samples, expected {bands}")
    if np.any(values < 0) or np.any(values > 1) or not np.all(np.isfinite(values)):
        raise ValidationError("SLM transmittance must lie in [0, 1]")
    return values


def capture_filtered_image(cube_hat: HsiCube, s, ir: IlluminantAndResponse | None = None,
                           noise: NoiseModel | None = None) -> np.ndarray:
    """Image recorded with SLM transmittance profile ``s``.

    Noiseless value: ``sum_b cube_hat[..., b] * s[b] * c[b] * delta``. With
    ``noise``, the photon scale maps the brightest pixel of the noiseless sum
    image (``s = 1``) to ``noise.peak_photons``.
    """
    values = _check_profile(s, cube_hat.grid.bands)
    w = _weights(cube_hat.grid, ir)
    img = _project(cube_hat.data, values, w)
    if noise is None:
        return img
    peak = float(np.max(_project(cube_hat.data, np.ones_like(values), w)))
    if peak <= 0:
        raise ValidationError("scene is dark; cannot anchor photon scale")
    rng = np.random.default_rng(noise.seed)
    return _noisy(img, noise.peak_photons / peak, noise.read_sigma, rng)


def rainbow_plane_spectrum(cube: HsiCube, ap: CodedApertureModel,
                           ir: IlluminantAndResponse | None = None) -> Spectrum:
    """Spatially integrated spectrum, weighted by the system response and
    blurred by the aperture code, as seen on the rainbow plane."""
    check_same_grid(cube.grid, ap.grid)
    total = np.asarray(cube.data, dtype=float).sum(axis=(0, 1))
    if ir is not None:
        check_same_grid(cube.grid, ir.grid)
        total = total * ir.response.values
    return Spectrum(cube.grid, np.maximum(convolve_spectral(total, ap.spectral_kernel), 0.0))


# --------------------------------------------------------------------------
# acquisition


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Captured sum image and reconstructed signed filter images.

    ``filter_images[k]`` estimates ``sum_b cube_hat * d_k * c * delta`` for
    the original (unnormalised) filter ``d_k``.
    """

    sum_image: np.ndarray
    filter_images: np.ndarray
    images_captured: int
    bank_id: str = ""
    gains: np.ndarray = None
    noise: NoiseModel | None = None
    plan: tuple = ()

    @property
    def n_filters(self) -> int:
        return self.filter_images.shape[0]


def measurement_plan(bank: SpectralFilterBank | None, dc_rows: int = 0) -> list:
    """Ordered list of captures: ``sum``, then ``k+`` / ``k-`` per filter.

    Signed filters need a positive and a negative pattern; the always-on
    centre rows cancel in their difference. Non-negative filters need a
    single pattern, and, when ``dc_rows > 0``, one shared DC-only capture to
    remove the centre-row offset.
    """
    plan = ["sum"]
    if bank is None:
        return plan
    needs_dc = False
    for k, d in enumerate(bank.filters):
        plan.append(f"{k}+")
        if np.any(d < 0):
            plan.append(f"{k}-")
        else:
            needs_dc = True
    if needs_dc and dc_rows > 0:
        plan.append("dc")
    return plan


def acquire_measurements(
    cube: HsiCube,
    ap: CodedApertureModel | None,
    ir: IlluminantAndResponse | None,
    bank: SpectralFilterBank | None,
    noise: NoiseModel | None = None,
    slm_rows: int | None = DEFAULT_SLM_ROWS,
    dc_rows: int = DEFAULT_DC_ROWS,
    split_budget: bool = True,
) -> MeasurementSet:
    """Simulate the capture sequence for ``bank``.

    ``slm_rows=None`` models an ideal analogue SLM (no quantisation, no
    centre rows). With ``split_budget`` the photon budget
    ``noise.peak_photons`` is shared evenly by every image in the sequence.
    ``bank=None`` captures the sum image only.
    """
    filters = np.zeros((0, cube.grid.bands)) if bank is None else bank.filters
    if filters.shape[1] != cube.grid.bands:
        raise ValidationError(f"bank has {filters.shape[1]} bands, cube has {cube.grid.bands}")
    if ap is not None:
        check_same_grid(cube.grid, ap.grid)
    cube_hat = cube if ap is None or ap.is_identity else apply_coded_blur(cube, ap)
    w = _weights(cube.grid, ir)
    data = np.asarray(cube_hat.data, dtype=float)
    ideal = slm_rows is None
    if ideal:
        dc_rows = 0
    plan = measurement_plan(bank, dc_rows)

    sum_clean = _project(data, np.ones(cube.grid.bands), w)
    if noise is not None:
        peak = float(np.max(sum_clean))
        if peak <= 0:
            raise ValidationError("scene is dark; cannot anchor photon scale")
        budget = noise.peak_photons / len(plan) if split_budget else noise.peak_photons
        scale = budget / peak
        streams = np.random.SeedSequence(noise.seed).spawn(len(plan))
        rngs = {name: np.random.default_rng(ss) for name, ss in zip(plan, streams)}

    def shoot(name, profile):
        img = sum_clean if name == "sum" else _project(data, profile, w)
        if noise is None:
            return img
        return _noisy(img, scale, noise.read_sigma, rngs[name])

    sum_image = shoot("sum", None)
    dc_image = None
    if "dc" in plan:
        dc_image = shoot("dc", np.full(cube.grid.bands, dc_rows / slm_rows))

    feats, gains = [], []
    for k, d in enumerate(filters):
        signed = f"{k}-" in plan
        if ideal:
            m = float(np.max(np.abs(d)))
            if m == 0:
                pos = neg = np.zeros_like(d)
            else:
                pos, neg = np.maximum(d, 0) / m, np.maximum(-d, 0) / m
            gain = m
        else:
            pair = encode_filter_to_slm(d, slm_rows, dc_rows)
            pos, neg = pair.transmittance("positive"), pair.transmittance("negative")
            gain = pair.gain * slm_rows / (slm_rows - dc_rows)
        i_pos = shoot(f"{k}+", pos)
        if signed:
            diff = i_pos - shoot(f"{k}-", neg)
        elif dc_image is not None:
            diff = i_pos - dc_image
        else:
            diff = i_pos
        feats.append(gain * diff)
        gains.append(gain)

    return MeasurementSet(
        sum_image=sum_image,
        filter_images=np.array(feats).reshape(filters.shape[0], *sum_image.shape),
        images_captured=len(plan),
        bank_id="" if bank is None else bank.bank_id,
        gains=np.array(gains),
        noise=noise,
        plan=tuple(plan),
    )
