"""Matched-filter classifier, filter extraction and model files."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..exceptions import FormatError, TruncatedFileError, ValidationError
from ..filters import SpectralFilterBank
from .mlp import FilterMLPClassifier
from .svm import OneVsAllSVM

__all__ = ["MatchedFilterClassifier", "extract_filters", "save_model", "load_model"]

MODEL_MAGIC = "SBMODEL1"


class MatchedFilterClassifier(ClassifierMixin, BaseEstimator):
    """Two-class classifier thresholding ``d . x`` with ``d = mu_1 - mu_0``.

    ``mu_k`` are the class-mean spectra, so the filter is the difference of
    the two class spectra and a positive response votes for the second
    class. With ``threshold=None`` the cut is placed midway between the
    projected class means.
    """

    def __init__(self, threshold=None):
        self.threshold = threshold

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if self.classes_.size != 2:
            raise ValidationError("matched filtering is a two-class method")
        mu0 = X[y == self.classes_[0]].mean(axis=0)
        mu1 = X[y == self.classes_[1]].mean(axis=0)
        self.filter_ = mu1 - mu0
        if self.threshold is None:
            self.threshold_ = float(0.5 * (self.filter_ @ mu0 + self.filter_ @ mu1))
        else:
            self.threshold_ = float(self.threshold)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "filter_")
        return check_array(X, dtype=np.float64) @ self.filter_ - self.threshold_

    def predict(self, X) -> np.ndarray:
        return self.classes_[(self.decision_function(X) > 0).astype(int)]


def extract_filters(model) -> SpectralFilterBank:
    """Filter bank realised optically for a trained classifier.

    SVM: one filter per class (rows of ``W``, offsets ``c``). MLP: the rows
    of the first layer and its bias. Matched: the single difference filter
    with offset ``-threshold``.
    """
    if isinstance(model, OneVsAllSVM):
        check_is_fitted(model, "coef_")
        return SpectralFilterBank(model.coef_.copy(), model.intercept_.copy(), "svm")
    if isinstance(model, FilterMLPClassifier):
        check_is_fitted(model, "layers_")
        return SpectralFilterBank(model.filters_.copy(), model.filter_offsets_.copy(), "mlp")
    if isinstance(model, MatchedFilterClassifier):
        check_is_fitted(model, "filter_")
        return SpectralFilterBank(model.filter_[None, :].copy(), np.array([-model.threshold_]), "matched")
    raise ValidationError(f"cannot extract filters from {type(model).__name__}")


def _arrays(model):
    if isinstance(model, OneVsAllSVM):
        return "svm", [("W", model.coef_), ("c", model.intercept_)]
    if isinstance(model, FilterMLPClassifier):
        out = []
        for i, (W, b) in enumerate(model.layers_):
            out += [(f"W{i}", W), (f"b{i}", b)]
        return "mlp", out
    if isinstance(model, MatchedFilterClassifier):
        return "matched", [("d", model.filter_), ("threshold", np.array([model.threshold_]))]
    raise ValidationError(f"cannot save {type(model).__name__}")


def save_model(model, path, extra=None) -> None:
    """Write a ``key=value`` header followed by float32 blobs.

    The header lists every array as ``name:dim1xdim2`` in storage order and
    ends with an ``end_header`` line; the blobs follow, little-endian.
    """
    kind, arrays = _arrays(model)
    header = {"type": kind, "classes": ",".join(str(int(c)) for c in model.classes_)}
    for key, value in sorted(model.get_params().items()):
        header[f"param.{key}"] = ",".join(map(str, value)) if isinstance(value, tuple) else str(value)
    for key, value in (extra or {}).items():
        header[key] = str(value)
    header["arrays"] = ";".join(f"{n}:{'x'.join(map(str, a.shape))}" for n, a in arrays)
    lines = [MODEL_MAGIC] + [f"{k}={v}" for k, v in header.items()] + ["end_header"]
    blob = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for _, a in arrays)
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8") + blob)


def _parse_param(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if "," in text:
        return tuple(_parse_param(t) for t in text.split(","))
    return {"None": None, "True": True, "False": False}.get(text, text)


def load_model(path):
    """Inverse of :func:`save_model` (weights come back as float32 values)."""
    raw = Path(path).read_bytes()
    marker = b"\nend_header\n"
    cut = raw.find(marker)
    if not raw.startswith(MODEL_MAGIC.encode()) or cut < 0:
        raise FormatError(f"{path}: not a specbench model file")
    header = {}
    for line in raw[:cut].decode("utf-8").splitlines()[1:]:
        key, _, value = line.partition("=")
        header[key] = value
    blob = raw[cut + len(marker):]
    arrays, offset = {}, 0
    for spec in header.get("arrays", "").split(";"):
        name, _, shape_text = spec.partition(":")
        shape = tuple(int(s) for s in shape_text.split("x")) if shape_text else ()
        count = int(np.prod(shape)) if shape else 1
        if offset + 4 * count > len(blob):
            raise TruncatedFileError(f"{path}: weight blob truncated at {name}")
        arrays[name] = np.frombuffer(blob, "<f4", count, offset).astype(float).reshape(shape)
        offset += 4 * count
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    params = {k[6:]: _parse_param(v) for k, v in header.items() if k.startswith("param.")}
    if "hidden" in params and not isinstance(params["hidden"], tuple):
        params["hidden"] = (params["hidden"],) if params["hidden"] != "" else ()
    classes = np.array([int(c) for c in header["classes"].split(",")])
    kind = header.get("type")
    if kind == "svm":
        model = OneVsAllSVM(**params)
        model.coef_, model.intercept_ = arrays["W"], arrays["c"]
        model.n_features_in_ = model.coef_.shape[1]
    elif kind == "mlp":
        model = FilterMLPClassifier(**params)
        n = len(arrays) // 2
        model.layers_ = [[arrays[f"W{i}"], arrays[f"b{i}"]] for i in range(n)]
        model.n_features_in_ = model.layers_[0][0].shape[1]
    elif kind == "matched":
        model = MatchedFilterClassifier(**params)
        model.filter_, model.threshold_ = arrays["d"], float(arrays["threshold"][0])
        model.n_features_in_ = model.filter_.size
    else:
        raise FormatError(f"{path}: unknown model type {kind!r}")
    model.classes_ = classes
    return model
