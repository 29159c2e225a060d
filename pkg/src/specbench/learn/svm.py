"""One-vs-all linear SVM trained by mini-batch sub-gradient descent."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import GridSearchCV, StratifiedKFold
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..exceptions import ValidationError

__all__ = ["OneVsAllSVM", "svm_objective", "svm_hyperparameter_search", "DEFAULT_REG_GRID"]

# descending so that GridSearchCV's first-best rule prefers stronger regularisation
DEFAULT_REG_GRID = tuple(np.logspace(0, -5, 6))


def _signed_targets(y_idx, n_classes):
    Y = -np.ones((y_idx.size, n_classes))
    Y[np.arange(y_idx.size), y_idx] = 1.0
    return Y


def svm_objective(W, c, X, Y, reg) -> np.ndarray:
    """Per-class objective ``mean(hinge) + reg * ||w_k||^2``.

    ``Y`` holds one-vs-all targets in {-1, +1}, shape (N, K).
    """
    margins = Y * (X @ W.T + c)
    return np.mean(np.maximum(0.0, 1.0 - margins), axis=0) + reg * np.sum(W * W, axis=1)


class OneVsAllSVM(ClassifierMixin, BaseEstimator):
    """K linear hinge-loss classifiers, one per class against the rest.

    Each class ``k`` minimises ``(1/N) sum_i max(0, 1 - y_ik (w_k . x_i + c_k))
    + reg * ||w_k||^2`` with the intercept left unregularised.

    Optimisation is deterministic mini-batch sub-gradient descent with
    per-coordinate (AdaGrad) step sizes, so the step adapts to the small
    scale of sum-normalised spectra. Rows are reshuffled every epoch from
    ``seed``. After each epoch both the last iterate and the epoch average are
    scored on the full objective and the best point seen so far is kept, so
    ``objective_history_`` is non-increasing.

    Parameters
    ----------
    reg : float
        Regularisation weight lambda.
    epochs : int
    batch_size : int
    learning_rate : float
        Base AdaGrad step.
    seed : int
    """

    def __init__(self, reg=1e-3, epochs=50, batch_size=64, learning_rate=0.5, seed=0):
        self.reg = reg
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if self.classes_.size < 2:
            raise ValidationError("SVM training needs at least two classes")
        if self.reg < 0:
            raise ValidationError("reg must be non-negative")
        y_idx = np.searchsorted(self.classes_, y)
        n, b = X.shape
        k = self.classes_.size
        Y = _signed_targets(y_idx, k)
        rng = np.random.default_rng(self.seed)
        bs = max(1, min(int(self.batch_size), n))

        W = np.zeros((k, b))
        c = np.zeros(k)
        gW = np.full((k, b), 1e-12)
        gc = np.full(k, 1e-12)
        best_W, best_c = W.copy(), c.copy()
        best = svm_objective(W, c, X, Y, self.reg)
        history = [float(best.mean())]
        eta = float(self.learning_rate)
        for _ in range(int(self.epochs)):
            order = rng.permutation(n)
            avg_W = np.zeros_like(W)
            avg_c = np.zeros_like(c)
            steps = 0
            for start in range(0, n, bs):
                rows = order[start : start + bs]
                Xb, Yb = X[rows], Y[rows]
                active = (Yb * (Xb @ W.T + c)) < 1.0
                coef = -(Yb * active) / rows.size
                dW = coef.T @ Xb + 2.0 * self.reg * W
                dc = coef.sum(axis=0)
                gW += dW * dW
                gc += dc * dc
                W -= eta * dW / np.sqrt(gW)
                c -= eta * dc / np.sqrt(gc)
                avg_W += W
                avg_c += c
                steps += 1
            avg_W /= steps
            avg_c /= steps
            for cand_W, cand_c in ((W, c), (avg_W, avg_c)):
                obj = svm_objective(cand_W, cand_c, X, Y, self.reg)
                better = obj < best
                best = np.where(better, obj, best)
                best_W[better] = cand_W[better]
                best_c[better] = cand_c[better]
            history.append(float(best.mean()))
        self.coef_ = best_W
        self.intercept_ = best_c
        self.objective_ = best
        self.objective_history_ = np.array(history)
        self.n_features_in_ = b
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X @ self.coef_.T + self.intercept_

    def predict(self, X) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. ties go to the lowest class
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def svm_hyperparameter_search(X, y, grid=DEFAULT_REG_GRID, folds: int = 3, seed: int = 0, **svm_params):
    """Pick ``reg`` by stratified k-fold validation accuracy.

    Ties are broken toward the larger ``reg``. Returns ``(best_reg, model)``
    where the model is refit on all of ``X``.
    """
    X, y = check_X_y(X, y, dtype=np.float64)
    grid = sorted({float(g) for g in np.atleast_1d(grid)}, reverse=True)
    if not grid:
        raise ValidationError("regularisation grid is empty")
    folds = int(folds)
    if folds < 2:
        raise ValidationError("need at least two folds")
    if folds > X.shape[0]:
        raise ValidationError(f"{folds} folds requested for {X.shape[0]} samples")
    if np.min(np.unique(y, return_counts=True)[1]) < folds:
        raise ValidationError("every class needs at least one sample per fold")
    cv = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    search = GridSearchCV(
        OneVsAllSVM(seed=seed, **svm_params),
        {"reg": grid},
        cv=cv,
        scoring="accuracy",
        refit=True,
    )
    search.fit(X, y)
    return float(search.best_params_["reg"]), search.best_estimator_
