"""Binary SLM patterns that realise grayscale, signed spectral filters.

Each SLM column sees one spectral band. Grayscale transmittance is obtained
by switching on a number of rows proportional to the target value, stacked
outward from a band of always-on centre rows that suppresses diffraction
from the pattern edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ValidationError

__all__ = [
    "SlmPatternPair",
    "encode_filter_to_slm",
    "column_pattern",
    "decode_pattern",
    "DEFAULT_SLM_ROWS",
    "DEFAULT_DC_ROWS",
]

DEFAULT_SLM_ROWS = 1080
DEFAULT_DC_ROWS = 16


def column_pattern(heights, rows: int, dc_rows: int) -> np.ndarray:
    """Build a ``rows x len(heights)`` boolean pattern.

    The ``dc_rows`` centre rows are always on; ``heights[j]`` further rows in
    column ``j`` are switched on alternately above and below that band.
    """
    heights = np.asarray(heights, dtype=np.int64)
    if np.any(heights < 0) or np.any(heights > rows - dc_rows):
        raise ValidationError("column heights must lie in [0, rows - dc_rows]")
    start = (rows - dc_rows) // 2
    above = np.arange(start - 1, -1, -1)
    below = np.arange(start + dc_rows, rows)
    fill_order = []
    for i in range(max(above.size, below.size)):
        if i < below.size:
            fill_order.append(below[i])
        if i < above.size:
            fill_order.append(above[i])
    # rank[r] = how many on-pixels a column needs before row r lights up;
    # centre rows get -1 so they are always on
    rank = np.full(rows, -1, dtype=np.int64)
    rank[np.array(fill_order, dtype=np.int64)] = np.arange(len(fill_order))
    return rank[:, None] < heights[None, :]


def decode_pattern(pattern, dc_rows: int) -> np.ndarray:
    """Column heights of a pattern, excluding the always-on centre rows."""
    return np.asarray(pattern, bool).sum(axis=0) - dc_rows


@dataclass(frozen=True, eq=False)
class SlmPatternPair:
    positive: np.ndarray
    negative: np.ndarray
    column_heights_pos: np.ndarray
    column_heights_neg: np.ndarray
    dc_rows: int
    gain: float

    @property
    def rows(self) -> int:
        return self.positive.shape[0]

    @property
    def levels(self) -> int:
        return self.rows - self.dc_rows

    def transmittance(self, which="positive") -> np.ndarray:
        """Physical per-column transmittance, centre rows included."""
        pat = self.positive if which == "positive" else self.negative
        return pat.sum(axis=0) / self.rows

    def decoded(self, which="positive") -> np.ndarray:
        """Normalised filter values in [0, 1] represented by the pattern."""
        pat = self.positive if which == "positive" else self.negative
        return decode_pattern(pat, self.dc_rows) / self.levels


def encode_filter_to_slm(d, rows: int = DEFAULT_SLM_ROWS, dc_rows: int = DEFAULT_DC_ROWS) -> SlmPatternPair:
    """Split ``d`` into positive and negative parts and quantise both.

    Both parts are scaled by ``m = max|d|`` so that they fit in [0, 1]; the
    returned ``gain`` is ``m``. Quantisation error per column is at most
    ``0.5 / (rows - dc_rows)`` in normalised units.
    """
    if rows <= dc_rows or dc_rows < 0:
        raise ValidationError(f"need rows > dc_rows >= 0, got rows={rows}, dc_rows={dc_rows}")
    d = np.asarray(d, dtype=float).ravel()
    if not np.all(np.isfinite(d)):
        raise ValidationError("filter must be finite")
    m = float(np.max(np.abs(d))) if d.size else 0.0
    levels = rows - dc_rows
    if m == 0.0:
        h_pos = np.zeros(d.size, dtype=np.int64)
        h_neg = np.zeros(d.size, dtype=np.int64)
    else:
        h_pos = np.rint(np.maximum(d, 0.0) / m * levels).astype(np.int64)
        h_neg = np.rint(np.maximum(-d, 0.0) / m * levels).astype(np.int64)
    return SlmPatternPair(
        positive=column_pattern(h_pos, rows, dc_rows),
        negative=column_pattern(h_neg, rows, dc_rows),
        column_heights_pos=h_pos,
        column_heights_neg=h_neg,
        dc_rows=int(dc_rows),
        gain=m,
    )
