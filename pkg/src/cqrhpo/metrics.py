"""Regret trajectories, average ranks and surrogate quality metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

DEFAULT_N_FRACTIONS = 50
DEFAULT_CALIBRATION_LEVELS = tuple(np.arange(1, 6) / 6)
METRIC_COLUMNS = ("method", "task", "seed", "fraction", "regret", "rank")


def normalized_regret(y_t, y_min: float, y_max: float):
    """``(y_t - y_min) / (y_max - y_min)``, deliberately not clipped to [0, 1]."""
    if not y_max > y_min:
        raise ValueError(f"need y_max > y_min, got y_min={y_min}, y_max={y_max}")
    out = (np.asarray(y_t, dtype=float) - y_min) / (y_max - y_min)
    return float(out) if out.ndim == 0 else out


@dataclass
class RegretCurve:
    counts: np.ndarray
    times: np.ndarray
    best: np.ndarray
    regret: np.ndarray

    def at(self, budget_points: np.ndarray, axis: str = "count", before_first: float = 1.0):
        """Regret of the best value seen at or before each budget point."""
        if axis not in ("count", "time"):
            raise ValueError(f"axis must be 'count' or 'time', got {axis!r}")
        xs = self.counts if axis == "count" else self.times
        idx = np.searchsorted(xs, budget_points, side="right") - 1
        out = np.full(len(budget_points), before_first, dtype=float)
        ok = idx >= 0
        out[ok] = self.regret[idx[ok]]
        return out


def regret_curve(values: Sequence[float], times: Sequence[float], y_min: float,
                 y_max: float) -> RegretCurve:
    """Best-so-far trajectory over a chronological sequence of results."""
    values = np.asarray(values, dtype=float)
    best = np.minimum.accumulate(values) if values.size else values
    return RegretCurve(np.arange(1, values.size + 1), np.asarray(times, dtype=float), best,
                       normalized_regret(best, y_min, y_max) if values.size else best)


def fractions(n: int = DEFAULT_N_FRACTIONS) -> np.ndarray:
    return np.arange(1, n + 1) / n


def rank_methods(regrets: np.ndarray) -> np.ndarray:
    """Ranks along axis 0 (methods), 1 = lowest regret, ties share the mean rank."""
    return rankdata(np.asarray(regrets, dtype=float), method="average", axis=0)


def average_rank(curves: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Mean rank trajectory per method.

    ``curves[method]`` has shape ``(n_runs, n_fractions)``; run ``i`` of every
    method must refer to the same (task, seed) pair.
    """
    if not curves:
        raise ValueError("average_rank needs at least one method")
    names = list(curves)
    stacked = np.stack([np.atleast_2d(np.asarray(curves[k], dtype=float)) for k in names])
    ranks = rank_methods(stacked)
    return {k: ranks[i].mean(axis=0) for i, k in enumerate(names)}


def calibration_error(predicted_quantiles, y, levels: Sequence[float] = DEFAULT_CALIBRATION_LEVELS) -> float:
    """Root-sum-square gap between ``P(alpha) = mean(y < q_alpha(x))`` and ``alpha``.

    ``predicted_quantiles`` has one row per level.
    """
    q = np.atleast_2d(np.asarray(predicted_quantiles, dtype=float))
    levels = np.asarray(levels, dtype=float)
    y = np.asarray(y, dtype=float)
    if q.shape != (levels.size, y.size):
        raise ValueError(f"expected predictions of shape {(levels.size, y.size)}, got {q.shape}")
    if np.any((levels <= 0) | (levels >= 1)):
        raise ValueError("calibration levels must lie in (0, 1)")
    p = np.mean(y[None, :] < q, axis=1)
    return float(np.sqrt(np.sum((p - levels) ** 2)))


def rmse_from_quantiles(predicted_quantiles, y) -> float:
    """RMSE of the point forecast given by averaging the predicted quantiles."""
    q = np.atleast_2d(np.asarray(predicted_quantiles, dtype=float))
    y = np.asarray(y, dtype=float)
    if q.shape[0] < 1 or q.shape[1] != y.size:
        raise ValueError(f"predictions of shape {q.shape} do not match {y.size} targets")
    return float(np.sqrt(np.mean((q.mean(axis=0) - y) ** 2)))


def write_metrics_csv(rows: Iterable[Mapping], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                             for k, v in row.items()})
