"""Split-conformal calibration of symmetric quantile intervals.

With ``m`` quantile levels ``alpha_j = j / (m + 1)`` the interval ``j`` pairs
level ``alpha_j`` with ``alpha_{m+1-j} = 1 - alpha_j`` and has nominal
coverage ``1 - 2 alpha_j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

_CEIL_TOL = 1e-9


def quantile_levels(m: int) -> np.ndarray:
    """The grid ``j / (m + 1)`` for ``j = 1..m``; ``m`` must be even and >= 2."""
    if m < 2 or m % 2:
        raise ValueError(f"number of quantiles must be an even integer >= 2, got {m}")
    return np.arange(1, m + 1) / (m + 1)


@dataclass(frozen=True)
class IntervalPair:
    j: int
    lo_level: float
    hi_level: float

    @property
    def nominal_coverage(self) -> float:
        return 1.0 - 2.0 * self.lo_level


def interval_pairs(m: int) -> List[IntervalPair]:
    levels = quantile_levels(m)
    return [IntervalPair(j, float(levels[j - 1]), float(levels[m - j])) for j in range(1, m // 2 + 1)]


@dataclass(frozen=True)
class ConformalCorrection:
    """Offsets ``gamma[j-1]`` for intervals ``j = 1..m/2``; entries may be negative."""

    gamma: Tuple[float, ...]
    val_size: int

    def for_level(self, j: int, m: int) -> float:
        """Signed shift applied to quantile ``j`` (1-based) of an ``m``-level grid."""
        if j <= m // 2:
            return -self.gamma[j - 1]
        return self.gamma[m - j]


def conformity_scores(pred_lo, pred_hi, y) -> np.ndarray:
    """``max(lo - y, y - hi)`` per point; negative iff ``y`` lies strictly inside ``(lo, hi)``."""
    lo = np.asarray(pred_lo, dtype=float)
    hi = np.asarray(pred_hi, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (lo.shape == hi.shape == y.shape) or lo.ndim != 1:
        raise ValueError(f"length mismatch: lo={lo.shape}, hi={hi.shape}, y={y.shape}")
    if lo.size == 0:
        raise ValueError("conformity scores need at least one point")
    return np.maximum(lo - y, y - hi)


def gamma_correction(scores, alpha_j: float, val_size: int | None = None) -> float:
    """Empirical ``(1 - 2 alpha_j)(1 + 1/n)``-quantile of the scores.

    Uses the order statistic at 1-based rank ``ceil((1 - 2 alpha_j)(n + 1))``
    clamped to ``[1, n]``; a level at or above one returns the largest score.
    """
    s = np.sort(np.asarray(scores, dtype=float))
    n = s.size
    if n == 0:
        raise ValueError("gamma correction of an empty score set")
    if val_size is not None and val_size != n:
        raise ValueError(f"val_size={val_size} but {n} scores were given")
    rank = (1.0 - 2.0 * alpha_j) * (n + 1)
    if rank >= n:
        return float(s[-1])
    k = min(max(math.ceil(rank - _CEIL_TOL), 1), n)
    return float(s[k - 1])


def conformalize(lo, hi, gamma_j):
    """Shift an interval outward by ``gamma_j`` (inward when negative)."""
    return lo - gamma_j, hi + gamma_j


def fit_correction(val_predictions: np.ndarray, y_val: Sequence[float]) -> ConformalCorrection:
    """Corrections for every interval from an ``(m, n_val)`` prediction matrix.

    Rows must be ordered by ascending quantile level on the ``j/(m+1)`` grid.
    """
    preds = np.asarray(val_predictions, dtype=float)
    m = preds.shape[0]
    y_val = np.asarray(y_val, dtype=float)
    gammas = []
    for pair in interval_pairs(m):
        scores = conformity_scores(preds[pair.j - 1], preds[m - pair.j], y_val)
        gammas.append(gamma_correction(scores, pair.lo_level))
    return ConformalCorrection(tuple(gammas), int(y_val.size))


def coverage(lo, hi, y) -> float:
    """Fraction of ``y`` inside ``[lo, hi]``; crossed intervals cover nothing."""
    lo, hi, y = (np.asarray(a, dtype=float) for a in (lo, hi, y))
    return float(np.mean((lo <= y) & (y <= hi)))
