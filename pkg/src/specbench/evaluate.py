"""Feature normalisation, per-pixel inference and evaluation metrics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn import metrics

from .exceptions import SpecbenchError, ValidationError
from .filters import SpectralFilterBank
from .hsi import HsiCube, IlluminantAndResponse, LabelMap, check_same_grid
from .learn.data import LabeledSpectra
from .learn.mlp import FilterMLPClassifier
from .learn.models import MatchedFilterClassifier
from .learn.svm import OneVsAllSVM
from .optics import (
    CodedApertureModel,
    MeasurementSet,
    NoiseModel,
    _noisy,
    _weights,
    apply_coded_blur,
)

__all__ = [
    "UNKNOWN_LABEL",
    "DEFAULT_REL_FLOOR",
    "FeatureImageSet",
    "ScoreMap",
    "EvalReport",
    "SweepResult",
    "normalize_features",
    "classify_pixels",
    "binary_scores",
    "full_scan_then_project",
    "roc_curve",
    "confusion_and_accuracy",
    "sweep_filter_count",
]

UNKNOWN_LABEL = -1
DEFAULT_REL_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class FeatureImageSet:
    """Sum-normalised features ``features[k, row, col]``.

    Pixels whose sum image falls below the floor are flagged in ``valid``
    and hold NaN in ``features``.
    """

    features: np.ndarray
    valid: np.ndarray
    images_captured: int = 0
    floor: float = 0.0

    @property
    def n_features(self) -> int:
        return self.features.shape[0]

    @property
    def shape(self):
        return self.valid.shape

    def matrix(self) -> np.ndarray:
        """Valid pixels as an ``(n_valid, Q)`` matrix, row-major pixel order."""
        return self.features[:, self.valid].T


def normalize_features(ms: MeasurementSet, floor: float | None = None,
                       rel_floor: float = DEFAULT_REL_FLOOR) -> FeatureImageSet:
    """Divide every filter image by the sum image.

    ``floor`` is absolute; when omitted it is ``rel_floor * max(I_sum)``.
    """
    s = np.asarray(ms.sum_image, dtype=float)
    if floor is None:
        top = float(np.max(s)) if s.size else 0.0
        floor = rel_floor * top if top > 0 else np.finfo(float).tiny
    if floor <= 0:
        raise ValidationError("floor must be positive")
    valid = s >= floor
    with np.errstate(divide="ignore", invalid="ignore"):
        feats = np.where(valid, np.asarray(ms.filter_images, dtype=float) / np.where(valid, s, 1.0), np.nan)
    return FeatureImageSet(feats, valid, ms.images_captured, float(floor))


@dataclass(frozen=True, eq=False)
class ScoreMap:
    """Per-pixel class scores ``scores[row, col, k]`` and argmax labels.

    Invalid pixels carry NaN scores and ``UNKNOWN_LABEL``.
    """

    scores: np.ndarray
    labels: np.ndarray
    classes: np.ndarray

    @property
    def known(self) -> np.ndarray:
        return self.labels != UNKNOWN_LABEL


def classify_pixels(fs: FeatureImageSet, model, threshold: float | None = None) -> ScoreMap:
    """Classify normalised optical features.

    ``model`` decides how features become scores:

    * :class:`OneVsAllSVM` whose own hyperplanes were captured: scores are
      the features plus the intercepts.
    * :class:`FilterMLPClassifier`: the layers after the filter layer.
    * :class:`MatchedFilterClassifier`: feature minus threshold, two classes.
    * ``None`` with a ``threshold``: a single feature thresholded, label 1
      where it exceeds the threshold.
    """
    F = fs.matrix()
    q = fs.n_features
    if model is None:
        if threshold is None:
            raise ValidationError("threshold mode needs a threshold")
        if q != 1:
            raise ValidationError(f"threshold mode needs one feature, got {q}")
        margin = F[:, 0] - float(threshold)
        S = np.stack([-margin, margin], axis=1)
        classes = np.array([0, 1])
    elif isinstance(model, OneVsAllSVM):
        if q != model.coef_.shape[0]:
            raise ValidationError(f"SVM has {model.coef_.shape[0]} classes, features have {q} planes")
        S = F + model.intercept_
        classes = model.classes_
    elif isinstance(model, FilterMLPClassifier):
        S = model.features_to_logits(F) if F.shape[0] else np.zeros((0, model.classes_.size))
        classes = model.classes_
    elif isinstance(model, MatchedFilterClassifier):
        if q != 1:
            raise ValidationError(f"matched filtering needs one feature, got {q}")
        margin = F[:, 0] - model.threshold_
        S = np.stack([-margin, margin], axis=1)
        classes = model.classes_
    else:
        raise ValidationError(f"unsupported model {type(model).__name__}")
    h, w = fs.shape
    scores = np.full((h, w, S.shape[1]), np.nan)
    scores[fs.valid] = S
    labels = np.full((h, w), UNKNOWN_LABEL, dtype=np.int64)
    # np.argmax picks the first maximum: ties go to the lowest class index
    labels[fs.valid] = np.asarray(classes)[np.argmax(S, axis=1)] if S.shape[0] else []
    return ScoreMap(scores, labels, np.asarray(classes))


def binary_scores(sm: ScoreMap) -> np.ndarray:
    """Scalar score per pixel for a two-class map (higher means class 1)."""
    if sm.scores.shape[-1] != 2:
        raise ValidationError("binary scores need exactly two classes")
    return sm.scores[..., 1] - sm.scores[..., 0]


def full_scan_then_project(cube: HsiCube, ap: CodedApertureModel | None, ir: IlluminantAndResponse | None,
                           bank: SpectralFilterBank, noise: NoiseModel | None = None,
                           floor: float | None = None) -> FeatureImageSet:
    """Baseline: scan one band per capture, then project digitally.

    ``noise.peak_photons`` is the total budget, split evenly over the ``B``
    band captures with the same sum-image anchoring as
    :func:`~specbench.optics.acquire_measurements`.
    """
    if bank.n_bands != cube.grid.bands:
        raise ValidationError(f"bank has {bank.n_bands} bands, cube has {cube.grid.bands}")
    if ap is not None:
        check_same_grid(cube.grid, ap.grid)
    cube_hat = cube if ap is None or ap.is_identity else apply_coded_blur(cube, ap)
    w = _weights(cube.grid, ir)
    bands = np.asarray(cube_hat.data, dtype=float) * w
    b = cube.grid.bands
    if noise is not None:
        peak = float(np.max(bands.sum(axis=2)))
        if peak <= 0:
            raise ValidationError("scene is dark; cannot anchor photon scale")
        scale = noise.peak_photons / b / peak
        streams = np.random.SeedSequence(noise.seed).spawn(b)
        bands = np.stack(
            [_noisy(bands[..., i], scale, noise.read_sigma, np.random.default_rng(streams[i])) for i in range(b)],
            axis=2,
        )
    ms = MeasurementSet(
        sum_image=bands.sum(axis=2),
        filter_images=np.moveaxis(bands @ bank.filters.T, 2, 0),
        images_captured=b,
        bank_id=bank.bank_id,
        noise=noise,
        plan=tuple(f"band{i}" for i in range(b)),
    )
    return normalize_features(ms, floor)


def roc_curve(scores, truth, valid=None):
    """ROC points and trapezoid AUC for a binary task.

    Returns ``(fpr, tpr, thresholds, auc)``; NaN scores and pixels outside
    ``valid`` are ignored.
    """
    s = np.asarray(scores, dtype=float).ravel()
    t = np.asarray(truth.labels if isinstance(truth, LabelMap) else truth).ravel()
    keep = np.isfinite(s)
    if valid is not None:
        keep &= np.asarray(valid, bool).ravel()
    s, t = s[keep], t[keep]
    classes = np.unique(t)
    if classes.size != 2:
        raise ValidationError(f"ROC needs two classes in the truth, found {classes.size}")
    fpr, tpr, thr = metrics.roc_curve(t == classes[1], s, drop_intermediate=False)
    return fpr, tpr, thr, float(metrics.auc(fpr, tpr))


@dataclass(eq=False)
class EvalReport:
    accuracy: float
    per_class_accuracy: np.ndarray
    confusion: np.ndarray
    class_names: tuple
    images_captured: dict = field(default_factory=dict)
    roc: tuple | None = None
    auc: float | None = None
    n_excluded: int = 0

    @property
    def confusion_normalized(self) -> np.ndarray:
        rows = self.confusion.sum(axis=1, keepdims=True)
        return np.divide(self.confusion, rows, out=np.zeros(self.confusion.shape), where=rows > 0)

    def to_dict(self) -> dict:
        out = {
            "accuracy": self.accuracy,
            "per_class_accuracy": [None if np.isnan(v) else float(v) for v in self.per_class_accuracy],
            "class_names": list(self.class_names),
            "confusion": self.confusion.tolist(),
            "images_captured": dict(self.images_captured),
            "excluded_pixels": self.n_excluded,
        }
        if self.auc is not None:
            out["auc"] = self.auc
        return out

    def save(self, directory, stem: str = "report") -> list:
        """Write ``<stem>.json`` plus confusion (and ROC) CSV files."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = [directory / f"{stem}.json", directory / f"{stem}_confusion.csv",
                 directory / f"{stem}_confusion_normalized.csv"]
        paths[0].write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        for path, mat, fmt in ((paths[1], self.confusion, "{:d}"),
                               (paths[2], self.confusion_normalized, "{:.6f}")):
            with open(path, "w", newline="", encoding="utf-8") as fh:
                wr = csv.writer(fh)
                wr.writerow(["truth\\pred", *self.class_names])
                for name, row in zip(self.class_names, mat):
                    wr.writerow([name, *(fmt.format(v) for v in row)])
        if self.roc is not None:
            paths.append(directory / f"{stem}_roc.csv")
            with open(paths[-1], "w", newline="", encoding="utf-8") as fh:
                wr = csv.writer(fh)
                wr.writerow(["fpr", "tpr", "threshold"])
                for row in zip(*self.roc):
                    wr.writerow([f"{v:.9g}" for v in row])
        return paths


def confusion_and_accuracy(pred, truth, n_classes: int | None = None, class_names=None,
                           images_captured=None) -> EvalReport:
    """Confusion matrix (rows are truth) and accuracies.

    Pixels predicted as ``UNKNOWN_LABEL`` are excluded and counted in
    ``n_excluded``.
    """
    p = np.asarray(pred.labels if isinstance(pred, (LabelMap, ScoreMap)) else pred).ravel()
    t = np.asarray(truth.labels if isinstance(truth, LabelMap) else truth).ravel()
    if p.shape != t.shape:
        raise ValidationError(f"prediction has {p.size} pixels, truth has {t.size}")
    if class_names is None and isinstance(truth, LabelMap):
        class_names = truth.class_names
    keep = p != UNKNOWN_LABEL
    if not np.any(keep):
        raise ValidationError("no valid pixels to evaluate")
    k = n_classes or (len(class_names) if class_names else int(max(p[keep].max(), t.max())) + 1)
    names = tuple(class_names) if class_names else tuple(f"class_{i}" for i in range(k))
    cm = metrics.confusion_matrix(t[keep], p[keep], labels=np.arange(k))
    counts = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(counts > 0, np.diag(cm) / np.maximum(counts, 1), np.nan)
    acc = float(np.trace(cm) / cm.sum())
    return EvalReport(acc, per_class, cm, names, dict(images_captured or {}), n_excluded=int((~keep).sum()))


@dataclass(frozen=True)
class SweepResult:
    q_values: tuple
    accuracy: tuple
    errors: tuple
    knee: int | None
    margin: float

    def rows(self):
        return list(zip(self.q_values, self.accuracy, self.errors))


def sweep_filter_count(data: LabeledSpectra, q_values, margin: float = 0.01, **mlp_params) -> SweepResult:
    """Train one MLP per filter count and report test accuracy.

    The knee is the smallest Q whose accuracy is within ``margin`` (absolute)
    of the best accuracy in the sweep. A failed training is recorded with a
    NaN accuracy and its message.
    """
    q_values = tuple(int(q) for q in q_values)
    if not q_values:
        raise ValidationError("empty filter-count list")
    if list(q_values) != sorted(q_values):
        raise ValidationError("filter counts must be sorted ascending")
    accs, errs = [], []
    for q in q_values:
        try:
            model = FilterMLPClassifier(n_filters=q, **mlp_params)
            model.fit(*data.train, *data.val)
            accs.append(float(model.score(*data.test)))
            errs.append("")
        except (SpecbenchError, ValueError) as exc:
            accs.append(float("nan"))
            errs.append(str(exc))
    finite = [a for a in accs if np.isfinite(a)]
    knee = None
    if finite:
        best = max(finite)
        knee = next(q for q, a in zip(q_values, accs) if np.isfinite(a) and a >= best - margin)
    return SweepResult(q_values, tuple(accs), tuple(errs), knee, float(margin))
