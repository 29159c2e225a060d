"""Labelled spectra, stratified splits and sum normalisation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from ..exceptions import ValidationError

__all__ = ["LabeledSpectra", "split_dataset", "sum_normalize", "SumNormalizer", "DEFAULT_FRACTIONS"]

DEFAULT_FRACTIONS = (0.20, 0.05, 0.75)
SPLIT_NAMES = ("train", "val", "test")


def sum_normalize(X, weights=None) -> np.ndarray:
    """Divide each spectrum by its (weighted) sum.

    This is the training-side mirror of dividing a filtered image by the
    all-ones capture, so features computed either way share one scale.
    """
    X = np.asarray(X, dtype=float)
    w = np.ones(X.shape[-1]) if weights is None else np.asarray(weights, dtype=float)
    totals = X @ w
    if np.any(totals <= 0):
        raise ValidationError("cannot sum-normalise spectra with non-positive total")
    return X * (w / totals[..., None]) if weights is not None else X / totals[..., None]


class SumNormalizer(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapping :func:`sum_normalize`."""

    def __init__(self, weights=None):
        self.weights = weights

    def fit(self, X, y=None):
        X = check_array(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        return sum_normalize(check_array(X), self.weights)


@dataclass(frozen=True, eq=False)
class LabeledSpectra:
    """Spectra ``X`` (rows), labels ``y`` and a split tag per row."""

    X: np.ndarray
    y: np.ndarray
    split: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y).astype(np.int64)
        split = np.asarray(self.split).astype(str)
        if X.ndim != 2 or y.shape != (X.shape[0],) or split.shape != y.shape:
            raise ValidationError("X, y and split must agree in length")
        if not np.all(np.isfinite(X)):
            raise ValidationError("spectra must be finite")
        train = y[split == "train"]
        if np.setdiff1d(np.unique(y), np.unique(train)).size:
            raise ValidationError("every class must appear in the training split")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "split", split)

    def part(self, name):
        sel = self.split == name
        return self.X[sel], self.y[sel]

    @property
    def train(self):
        return self.part("train")

    @property
    def val(self):
        return self.part("val")

    @property
    def test(self):
        return self.part("test")


def _allocate(n, fractions):
    """Largest-remainder allocation of ``n`` items to the given fractions."""
    raw = np.asarray(fractions) * n
    counts = np.floor(raw).astype(int)
    rest = n - counts.sum() if np.isclose(np.sum(fractions), 1.0) else int(np.floor(raw.sum() + 1e-9)) - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:rest]] += 1
    return counts


def split_dataset(X, y, fractions=DEFAULT_FRACTIONS, seed: int = 0) -> LabeledSpectra:
    """Deterministic stratified train/val/test split.

    Within each class the rows are permuted with ``seed`` and cut according to
    ``fractions`` (largest-remainder rounding). Rows not covered when the
    fractions sum to less than one are tagged ``unused``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(np.int64)
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or sum(fractions) > 1 + 1e-9:
        raise ValidationError("fractions must be three non-negative numbers summing to <= 1")
    active = [i for i, f in enumerate(fractions) if f > 0]
    rng = np.random.default_rng(seed)
    split = np.full(y.shape, "unused", dtype=object)
    for cls in np.unique(y):
        rows = np.flatnonzero(y == cls)
        if rows.size < len(active):
            raise ValidationError(
                f"class {cls} has {rows.size} samples, fewer than the {len(active)} non-empty splits"
            )
        rows = rows[rng.permutation(rows.size)]
        counts = _allocate(rows.size, fractions)
        # every non-empty split gets at least one sample of every class
        for i in active:
            if counts[i] == 0:
                donor = int(np.argmax(counts))
                counts[donor] -= 1
                counts[i] += 1
        edges = np.concatenate([[0], np.cumsum(counts)])
        for i, name in enumerate(SPLIT_NAMES):
            split[rows[edges[i] : edges[i + 1]]] = name
    return LabeledSpectra(X, y, split.astype(str))
