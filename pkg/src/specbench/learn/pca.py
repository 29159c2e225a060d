"""Principal directions used to initialise the filter layer."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from ..exceptions import ValidationError

__all__ = ["pca_init", "principal_components"]


def _fix_signs(rows):
    # make the largest-magnitude entry of every row positive
    idx = np.argmax(np.abs(rows), axis=1)
    signs = np.sign(rows[np.arange(rows.shape[0]), idx])
    signs[signs == 0] = 1.0
    return rows * signs[:, None]


def principal_components(X, n_components: int, rtol: float = 1e-10):
    """Top principal directions of mean-centred ``X``.

    Returns
    -------
    components : ndarray, shape (Q, B)
        Orthonormal rows, sign-fixed so each row's largest-|entry| is positive.
    variances : ndarray, shape (Q,)
        Eigenvalues of the sample covariance (``ddof=1``), descending.
    mean : ndarray, shape (B,)
    """
    X = check_array(X, dtype=np.float64)
    n, b = X.shape
    q = int(n_components)
    if q < 1 or q > b:
        raise ValidationError(f"need 1 <= Q <= {b}, got {q}")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    rank = int(np.sum(s > rtol * max(s[0] if s.size else 0.0, np.finfo(float).tiny)))
    if q > rank:
        raise ValidationError(f"Q={q} exceeds the rank {rank} of the centred training spectra")
    variances = s[:q] ** 2 / max(n - 1, 1)
    return _fix_signs(vt[:q]), variances, mean


def pca_init(X, n_components: int) -> np.ndarray:
    """``Q x B`` matrix of the top-Q principal directions of ``X``."""
    return principal_components(X, n_components)[0]
