"""Surrogate material spectra and synthetic labelled data.

The material spectra used with the camera are not published as numbers, so
the classes here are smooth Gaussian-mixture reflectance profiles. They are
stand-ins that exercise the pipeline, not measurements of real materials.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ValidationError
from .hsi import (
    DEFAULT_GRID,
    AbundanceMap,
    HsiCube,
    LabelMap,
    Spectrum,
    WavelengthGrid,
)

__all__ = [
    "surrogate_library",
    "sample_class_spectra",
    "random_label_map",
    "random_abundances",
    "synthetic_scene",
    "two_class_scene",
]


def surrogate_library(grid: WavelengthGrid = DEFAULT_GRID, n_classes: int = 5, seed: int = 0,
                      bumps: int = 3) -> list:
    """``n_classes`` smooth, strictly positive reflectance-like spectra.

    Each is a floor plus ``bumps`` Gaussians with random centre, width and
    height, scaled to a maximum of one.
    """
    if n_classes < 1:
        raise ValidationError("need at least one class")
    rng = np.random.default_rng(seed)
    lam = grid.centers
    span = max(grid.lambda_max - grid.lambda_min, grid.bandwidth)
    out = []
    for _ in range(n_classes):
        v = np.full(lam.size, rng.uniform(0.1, 0.3))
        for _ in range(bumps):
            mu = rng.uniform(grid.lambda_min, grid.lambda_max)
            sd = rng.uniform(0.05, 0.25) * span
            v = v + rng.uniform(0.2, 1.0) * np.exp(-0.5 * ((lam - mu) / sd) ** 2)
        out.append(Spectrum(grid, v / v.max()))
    return out


def _smooth_basis(bands, n):
    # low-order Legendre polynomials over the band axis
    t = np.linspace(-1.0, 1.0, bands)
    return np.stack([np.polynomial.legendre.Legendre.basis(j + 1)(t) for j in range(n)])


def sample_class_spectra(library, n_per_class, variability: float = 0.1, noise: float = 0.01,
                         brightness=(0.5, 1.5), modes: int = 4, seed: int = 0):
    """Draw labelled spectra around each library member.

    A sample of class ``k`` is ``alpha * s_k * (1 + sum_j a_j phi_j) + e``
    with smooth modes ``phi_j``, ``a_j ~ N(0, variability)``, brightness
    ``alpha ~ U(brightness)`` and white noise ``e`` of standard deviation
    ``noise * alpha * mean(s_k)``. Values are clipped at zero.

    Returns
    -------
    X : ndarray, shape (n_per_class * K, B)
    y : ndarray of int, shape (n_per_class * K,)
    """
    lib = np.stack([s.values for s in library])
    k, b = lib.shape
    rng = np.random.default_rng(seed)
    phi = _smooth_basis(b, modes) if modes > 0 else np.zeros((0, b))
    n = int(n_per_class)
    y = np.repeat(np.arange(k), n)
    a = rng.normal(0.0, variability, (y.size, phi.shape[0]))
    alpha = rng.uniform(brightness[0], brightness[1], y.size)
    shape = 1.0 + a @ phi
    X = alpha[:, None] * lib[y] * shape
    X += rng.normal(0.0, 1.0, X.shape) * (noise * alpha * lib[y].mean(axis=1))[:, None]
    return np.maximum(X, 0.0), y


def random_label_map(shape, n_classes: int, seed: int = 0, regions: int | None = None) -> LabelMap:
    """Piecewise-constant label map from a seeded Voronoi partition.

    Every class owns at least one region when ``regions >= n_classes``.
    """
    h, w = shape
    regions = max(n_classes, regions or 2 * n_classes)
    rng = np.random.default_rng(seed)
    centres = rng.uniform(0, 1, (regions, 2)) * [h, w]
    owner = np.concatenate([np.arange(n_classes), rng.integers(0, n_classes, regions - n_classes)])
    rr, cc = np.mgrid[0:h, 0:w]
    d = (rr[..., None] - centres[:, 0]) ** 2 + (cc[..., None] - centres[:, 1]) ** 2
    return LabelMap(owner[np.argmin(d, axis=2)], tuple(f"material_{i}" for i in range(n_classes)))


def random_abundances(shape, n_classes: int, seed: int = 0, concentration: float = 0.5) -> AbundanceMap:
    """Dirichlet-distributed per-pixel abundances (each pixel sums to one)."""
    rng = np.random.default_rng(seed)
    a = rng.dirichlet(np.full(n_classes, concentration), size=tuple(shape))
    return AbundanceMap(a / np.maximum(a.sum(axis=2, keepdims=True), 1.0))


def synthetic_scene(shape, library, seed: int = 0, variability: float = 0.1, noise: float = 0.01,
                    brightness=(0.5, 1.5), labels: LabelMap | None = None):
    """Labelled cube whose pixels are drawn by :func:`sample_class_spectra`."""
    grid = library[0].grid
    if labels is None:
        labels = random_label_map(shape, len(library), seed)
    rng = np.random.default_rng(seed)
    lab = labels.labels
    X, y = sample_class_spectra(library, lab.size, variability, noise, brightness,
                                seed=int(rng.integers(2**31)))
    data = np.empty((lab.size, grid.bands))
    for k in range(len(library)):
        sel = lab.ravel() == k
        data[sel] = X[y == k][: sel.sum()]
    return HsiCube(grid, data.reshape(*lab.shape, grid.bands)), labels


def two_class_scene(shape=(32, 32), bands: int = 32, seed: int = 0, contrast: float = 0.05,
                    variability: float = 0.0):
    """Two nearly identical materials split down the middle of the frame.

    The second spectrum is the first times ``1 + contrast * bump`` so the
    classes differ by a small, smooth spectral feature.
    """
    grid = WavelengthGrid(DEFAULT_GRID.lambda_min, DEFAULT_GRID.lambda_max, bands)
    base = surrogate_library(grid, 1, seed)[0].values
    t = np.linspace(-1, 1, bands)
    bump = np.sin(np.pi * t) + 0.5 * np.cos(2 * np.pi * t)
    second = base * (1.0 + contrast * bump)
    lib = [Spectrum(grid, base), Spectrum(grid, second)]
    h, w = shape
    lab = np.zeros((h, w), dtype=np.int64)
    lab[:, w // 2 :] = 1
    labels = LabelMap(lab, ("material_0", "material_1"))
    if variability > 0:
        cube, _ = synthetic_scene(shape, lib, seed, variability, 0.0, (1.0, 1.0), labels)
    else:
        cube = HsiCube(grid, np.stack([s.values for s in lib])[lab])
    return cube, labels, lib
