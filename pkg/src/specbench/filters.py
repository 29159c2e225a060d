"""Spectral filter banks: the linear projections the camera computes optically."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .exceptions import FormatError, ValidationError
from .hsi import Spectrum, check_same_grid

__all__ = ["SpectralFilterBank", "matched_filter", "save_bank_csv", "load_bank_csv"]


@dataclass(repr=False, eq=False)
class SpectralFilterBank(TransformerMixin, BaseEstimator):
    """Signed filters ``filters[k]`` with offsets ``offsets[k]``.

    ``transform(X)`` returns ``X @ filters.T + offsets`` for spectra stored row
    wise, which is the digital counterpart of what one filtered capture
    measures (plus the offset, added in software).
    """

    filters: np.ndarray
    offsets: np.ndarray = None
    source: str = "custom"

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.filters, dtype=float))
        if d.ndim != 2 or d.shape[0] < 1:
            raise ValidationError("a filter bank needs at least one filter")
        if not np.all(np.isfinite(d)):
            raise ValidationError("filters must be finite")
        b = np.zeros(d.shape[0]) if self.offsets is None else np.asarray(self.offsets, float).ravel()
        if b.shape != (d.shape[0],):
            raise ValidationError(f"expected {d.shape[0]} offsets, got {b.shape}")
        if not np.all(np.isfinite(b)):
            raise ValidationError("offsets must be finite")
        self.filters = d
        self.offsets = b

    @property
    def n_filters(self) -> int:
        return self.filters.shape[0]

    @property
    def n_bands(self) -> int:
        return self.filters.shape[1]

    @property
    def is_nonnegative(self) -> bool:
        return bool(np.all(self.filters >= 0))

    @property
    def bank_id(self) -> str:
        h = hashlib.sha1(self.filters.astype("<f8").tobytes())
        h.update(self.offsets.astype("<f8").tobytes())
        return f"{self.source}-{h.hexdigest()[:12]}"

    def fit(self, X=None, y=None):
        return self

    def project(self, X) -> np.ndarray:
        """Filter responses without offsets."""
        X = check_array(X)
        if X.shape[1] != self.n_bands:
            raise ValidationError(f"expected {self.n_bands} bands, got {X.shape[1]}")
        return X @ self.filters.T

    def transform(self, X) -> np.ndarray:
        return self.project(X) + self.offsets

    def subset(self, index) -> "SpectralFilterBank":
        index = np.atleast_1d(index)
        return SpectralFilterBank(self.filters[index], self.offsets[index], self.source)


def matched_filter(positive: Spectrum, negative: Spectrum) -> SpectralFilterBank:
    """Single filter ``positive - negative``; a positive response votes for
    the first spectrum's class."""
    check_same_grid(positive.grid, negative.grid)
    d = positive.values - negative.values
    return SpectralFilterBank(d[None, :], np.zeros(1), "matched")


def save_bank_csv(bank: SpectralFilterBank, path, wavelengths=None) -> None:
    """One row per filter: offset first, then the filter samples."""
    if wavelengths is None:
        wavelengths = np.arange(bank.n_bands)
    lines = [f"# source={bank.source}", "beta," + ",".join(f"{w:.6g}" for w in wavelengths)]
    for beta, row in zip(bank.offsets, bank.filters):
        lines.append(",".join(repr(float(v)) for v in (beta, *row)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_bank_csv(path) -> SpectralFilterBank:
    source = "custom"
    rows = []
    for line in Path(path).read_text("utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "source=" in line:
                source = line.split("source=", 1)[1].strip()
            continue
        if line.startswith("beta"):
            continue
        try:
            rows.append([float(v) for v in line.split(",")])
        except ValueError as exc:
            raise FormatError(f"{path}: bad filter row: {line[:40]}") from exc
    if not rows:
        raise FormatError(f"{path}: no filters found")
    if len({len(r) for r in rows}) != 1:
        raise FormatError(f"{path}: ragged filter rows")
    arr = np.array(rows)
    return SpectralFilterBank(arr[:, 1:], arr[:, 0], source)
