"""Configuration suggestion with (conformalized) quantile-regression surrogates.

The surrogate is ``m`` boosted-tree quantile models on the grid
``j / (m + 1)``. A suggestion draws ``N`` uniform candidates, samples one
quantile level per candidate (independent Thompson sampling) and returns the
candidate with the lowest sampled value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import quantile_gbm
from .config_space import Config, ConfigSpace
from .conformal import ConformalCorrection, fit_correction, quantile_levels
from .quantile_gbm import GbmParams, QuantileModel

Dataset = List[Tuple[Config, float]]

DEFAULT_M = 4
DEFAULT_NUM_CANDIDATES = 2000
DEFAULT_VAL_FRACTION = 0.1
DEFAULT_CONFORMAL_THRESHOLD = 32
DEFAULT_N_INIT = 10


def split_train_val(data: Sequence, val_fraction: float, rng: np.random.Generator):
    """Shuffle ``data`` and hold out ``max(1, round(val_fraction * n))`` rows."""
    n = len(data)
    if n < 2:
        raise ValueError(f"need at least 2 rows to split, got {n}")
    if not 0 < val_fraction < 1:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    n_val = min(max(1, math.floor(val_fraction * n + 0.5)), n - 1)
    perm = rng.permutation(n)
    val = [data[i] for i in perm[:n_val]]
    train = [data[i] for i in perm[n_val:]]
    return train, val


@dataclass
class QuantileSurrogate:
    levels: np.ndarray
    models: List[QuantileModel]
    correction: Optional[ConformalCorrection]
    n_obs: int

    @property
    def m(self) -> int:
        return len(self.models)

    def predict_quantiles(self, X) -> np.ndarray:
        """Raw predictions, shape ``(m, n)``, rows in ascending level order."""
        return np.vstack([model.predict(X) for model in self.models])

    def shifts(self) -> np.ndarray:
        if self.correction is None:
            return np.zeros(self.m)
        return np.array([self.correction.for_level(j, self.m) for j in range(1, self.m + 1)])

    def predict_adjusted(self, X) -> np.ndarray:
        """Predictions with lower quantiles moved down by ``gamma`` and upper ones up."""
        return self.predict_quantiles(X) + self.shifts()[:, None]

    def thompson_sample(self, X, rng: np.random.Generator) -> np.ndarray:
        q = self.predict_adjusted(X)
        j = rng.integers(self.m, size=q.shape[1])
        return q[j, np.arange(q.shape[1])]


def fit_surrogate(
    X,
    y,
    rng: np.random.Generator,
    m: int = DEFAULT_M,
    params: GbmParams = GbmParams(),
    val_fraction: float = DEFAULT_VAL_FRACTION,
    conformal_threshold: int = DEFAULT_CONFORMAL_THRESHOLD,
    conformalize: bool = True,
) -> QuantileSurrogate:
    """Fit ``m`` quantile models, calibrating them when ``conformalize`` is set.

    With ``conformalize`` the rows are split into train/validation; corrections
    are computed only when more than ``conformal_threshold`` rows are given.
    Without it (plain quantile regression) every row is used for training.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    levels = quantile_levels(m)
    n = len(y)
    if conformalize:
        train, val = split_train_val(np.arange(n), val_fraction, rng)
        train, val = np.asarray(train), np.asarray(val)
    else:
        train, val = np.arange(n), None
    models = [quantile_gbm.fit(X[train], y[train], a, params) for a in levels]
    correction = None
    if conformalize and n > conformal_threshold:
        val_pred = np.vstack([mdl.predict(X[val]) for mdl in models])
        correction = fit_correction(val_pred, y[val])
    return QuantileSurrogate(levels, models, correction, n)


def suggest(
    data: Dataset,
    space: ConfigSpace,
    rng: np.random.Generator,
    m: int = DEFAULT_M,
    num_candidates: int = DEFAULT_NUM_CANDIDATES,
    params: GbmParams = GbmParams(),
    val_fraction: float = DEFAULT_VAL_FRACTION,
    conformal_threshold: int = DEFAULT_CONFORMAL_THRESHOLD,
    n_init: int = DEFAULT_N_INIT,
    conformalize: bool = True,
) -> Config:
    """Next configuration to evaluate given observed ``(config, value)`` rows.

    Draws from ``rng`` in a fixed order: train/validation shuffle, candidate
    coordinates, then one quantile index per candidate.
    """
    quantile_levels(m)
    if num_candidates < 1:
        raise ValueError("num_candidates must be >= 1")
    if len(data) < max(n_init, 2):
        return space.sample(rng)
    X = space.encode_many([c for c, _ in data])
    y = np.array([z for _, z in data], dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("observed targets must be finite")
    surrogate = fit_surrogate(X, y, rng, m, params, val_fraction, conformal_threshold, conformalize)
    batch = space.sample_batch(rng, num_candidates)
    sampled = surrogate.thompson_sample(batch.features, rng)
    return batch.config(int(np.argmin(sampled)))


class RandomSearcher:
    name = "rs"

    def __init__(self, space: ConfigSpace):
        self.space = space

    def suggest(self, data: Dataset, rng: np.random.Generator) -> Config:
        return self.space.sample(rng)


class QuantileSearcher:
    """Stateless wrapper around :func:`suggest` holding its settings.

    ``conformalize=False`` gives the plain quantile-regression ablation.
    """

    def __init__(
        self,
        space: ConfigSpace,
        m: int = DEFAULT_M,
        num_candidates: int = DEFAULT_NUM_CANDIDATES,
        val_fraction: float = DEFAULT_VAL_FRACTION,
        conformal_threshold: int = DEFAULT_CONFORMAL_THRESHOLD,
        n_init: int = DEFAULT_N_INIT,
        gbm_params: GbmParams = GbmParams(),
        conformalize: bool = True,
    ):
        quantile_levels(m)
        self.space = space
        self.m = m
        self.num_candidates = num_candidates
        self.val_fraction = val_fraction
        self.conformal_threshold = conformal_threshold
        self.n_init = n_init
        self.gbm_params = gbm_params
        self.conformalize = conformalize

    @property
    def name(self) -> str:
        return "cqr" if self.conformalize else "qr"

    def suggest(self, data: Dataset, rng: np.random.Generator) -> Config:
        return suggest(
            data, self.space, rng, m=self.m, num_candidates=self.num_candidates,
            params=self.gbm_params, val_fraction=self.val_fraction,
            conformal_threshold=self.conformal_threshold, n_init=self.n_init,
            conformalize=self.conformalize,
        )
