"""Fully connected classifier whose first linear layer is the filter bank.

Written directly in numpy so the forward pass can be split after the first
layer: ``W1 @ x`` is what the camera computes optically, and
:meth:`FilterMLPClassifier.predict_from_features` runs the remainder.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..exceptions import TrainingError, ValidationError
from .pca import principal_components

__all__ = [
    "FilterMLPClassifier",
    "init_layers",
    "forward",
    "loss_and_gradients",
    "softmax_cross_entropy",
    "DEFAULT_HIDDEN",
]

DEFAULT_HIDDEN = (64, 32, 16)


def softmax_cross_entropy(logits, y_idx):
    """Mean cross-entropy and its gradient with respect to ``logits``."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), y_idx].mean()
    grad = np.exp(logp)
    grad[np.arange(n), y_idx] -= 1.0
    return loss, grad / n


def init_layers(sizes, rng, first=None):
    """Weights ``(out, in)`` and biases drawn from U(-1/sqrt(in), 1/sqrt(in));
    ``first`` optionally replaces layer 0 with a given ``(W, b)``."""
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(n_in)
        W = rng.uniform(-bound, bound, (n_out, n_in))
        b = rng.uniform(-bound, bound, n_out)
        layers.append([W, b])
    if first is not None:
        layers[0] = [np.array(first[0], dtype=float), np.array(first[1], dtype=float)]
    return layers


def forward(layers, X, dropout=0.0, rng=None, start=0):
    """Logits plus the cache needed for backprop.

    ReLU (and inverted dropout when ``dropout > 0``) follow every layer but
    the last. With ``start > 0``, ``X`` is the pre-activation of layer
    ``start - 1``; for ``start=1`` that is the optical features plus bias.
    """
    h = np.maximum(X, 0.0) if start > 0 else X
    cache = []
    last = len(layers) - 1
    for i in range(start, len(layers)):
        W, b = layers[i]
        z = h @ W.T + b
        if i == last:
            cache.append((h, None, None))
            return z, cache
        a = np.maximum(z, 0.0)
        keep = None
        if dropout > 0 and rng is not None:
            keep = (rng.random(a.shape) >= dropout) / (1.0 - dropout)
            a = a * keep
        cache.append((h, z, keep))
        h = a
    raise ValidationError("network has no layers")


def loss_and_gradients(layers, X, y_idx, dropout=0.0, rng=None):
    """Cross-entropy and ``[(dW, db), ...]`` for every layer."""
    logits, cache = forward(layers, X, dropout, rng)
    loss, g = softmax_cross_entropy(logits, y_idx)
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        h_in, z, keep = cache[i]
        if z is not None:
            if keep is not None:
                g = g * keep
            g = g * (z > 0)
        W = layers[i][0]
        grads[i] = (g.T @ h_in, g.sum(axis=0))
        if i > 0:
            g = g @ W
    return loss, grads


class _Adam:
    def __init__(self, layers, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [[np.zeros_like(p) for p in layer] for layer in layers]
        self.v = [[np.zeros_like(p) for p in layer] for layer in layers]
        self.t = 0

    def step(self, layers, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for layer, grad, m, v in zip(layers, grads, self.m, self.v):
            for j in range(2):
                m[j] = self.b1 * m[j] + (1 - self.b1) * grad[j]
                v[j] = self.b2 * v[j] + (1 - self.b2) * grad[j] ** 2
                layer[j] -= self.lr * (m[j] / c1) / (np.sqrt(v[j] / c2) + self.eps)


class _SGD:
    def __init__(self, layers, lr):
        self.lr = lr

    def step(self, layers, grads):
        for layer, grad in zip(layers, grads):
            layer[0] -= self.lr * grad[0]
            layer[1] -= self.lr * grad[1]


class FilterMLPClassifier(ClassifierMixin, BaseEstimator):
    """``B -> Q -> hidden... -> K`` network trained on softmax cross-entropy.

    The first layer starts from the top-Q principal directions of the
    training spectra, scaled by the inverse standard deviation along each so
    the initial features are whitened, with bias ``-W mu``. The remaining
    layers use the seeded uniform scheme of :func:`init_layers`.

    Training keeps the epoch with the best validation accuracy (the first one
    on ties). When no validation data is passed to :meth:`fit`, training
    accuracy is used instead.

    Parameters
    ----------
    n_filters : int
        Q, the width of the first layer.
    hidden : tuple of int
    dropout : float
    learning_rate : float
    epochs : int
    batch_size : int
    optimizer : {"adam", "sgd"}
    seed : int
    """

    def __init__(self, n_filters=5, hidden=DEFAULT_HIDDEN, dropout=0.1, learning_rate=1e-3,
                 epochs=60, batch_size=256, optimizer="adam", seed=0):
        self.n_filters = n_filters
        self.hidden = hidden
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.seed = seed

    def _initial_layers(self, X, n_classes, rng):
        comps, var, mean = principal_components(X, self.n_filters)
        W1 = comps / np.sqrt(np.maximum(var, 1e-300))[:, None]
        sizes = [X.shape[1], int(self.n_filters), *[int(h) for h in self.hidden], n_classes]
        return init_layers(sizes, rng, first=(W1, -W1 @ mean))

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if self.classes_.size < 2:
            raise ValidationError("need at least two classes")
        if not 0 <= self.dropout < 1:
            raise ValidationError("dropout must lie in [0, 1)")
        y_idx = np.searchsorted(self.classes_, y)
        if X_val is None:
            X_val, yv_idx = X, y_idx
        else:
            X_val = check_array(X_val, dtype=np.float64)
            yv_idx = np.searchsorted(self.classes_, np.asarray(y_val))
        rng = np.random.default_rng(self.seed)
        layers = self._initial_layers(X, self.classes_.size, rng)
        if self.optimizer == "adam":
            opt = _Adam(layers, self.learning_rate)
        elif self.optimizer == "sgd":
            opt = _SGD(layers, self.learning_rate)
        else:
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")

        n = X.shape[0]
        bs = max(1, min(int(self.batch_size), n))
        best_acc = -1.0
        best_layers = None
        self.loss_history_ = []
        self.val_accuracy_history_ = []
        for epoch in range(int(self.epochs)):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, bs):
                rows = order[start : start + bs]
                loss, grads = loss_and_gradients(layers, X[rows], y_idx[rows], self.dropout, rng)
                if not np.isfinite(loss):
                    raise TrainingError(f"loss became non-finite in epoch {epoch}", epoch=epoch)
                opt.step(layers, grads)
                total += loss * rows.size
            self.loss_history_.append(total / n)
            logits, _ = forward(layers, X_val)
            if not np.all(np.isfinite(logits)):
                raise TrainingError(f"network output became non-finite in epoch {epoch}", epoch=epoch)
            acc = float(np.mean(np.argmax(logits, axis=1) == yv_idx))
            self.val_accuracy_history_.append(acc)
            if acc > best_acc:
                best_acc = acc
                best_layers = [[W.copy(), b.copy()] for W, b in layers]
                self.best_epoch_ = epoch
        if best_layers is None:
            best_layers = layers
            self.best_epoch_ = -1
        self.layers_ = best_layers
        self.best_val_accuracy_ = best_acc
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def filters_(self):
        check_is_fitted(self, "layers_")
        return self.layers_[0][0]

    @property
    def filter_offsets_(self):
        check_is_fitted(self, "layers_")
        return self.layers_[0][1]

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "layers_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} bands, got {X.shape[1]}")
        return forward(self.layers_, X)[0]

    def features_to_logits(self, F) -> np.ndarray:
        """Logits from first-layer projections ``F = X @ W1.T`` (no bias)."""
        check_is_fitted(self, "layers_")
        F = check_array(F, dtype=np.float64)
        if F.shape[1] != self.layers_[0][0].shape[0]:
            raise ValidationError(f"expected {self.layers_[0][0].shape[0]} features, got {F.shape[1]}")
        return forward(self.layers_, F + self.layers_[0][1], start=1)[0]

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def predict_from_features(self, F) -> np.ndarray:
        return self.classes_[np.argmax(self.features_to_logits(F), axis=1)]

    def predict_proba(self, X) -> np.ndarray:
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)
