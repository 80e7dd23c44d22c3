import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from cqrhpo.metrics import (
    DEFAULT_CALIBRATION_LEVELS,
    RegretCurve,
    average_rank,
    calibration_error,
    fractions,
    normalized_regret,
    rank_methods,
    regret_curve,
    rmse_from_quantiles,
    write_metrics_csv,
)


def test_regret_examples():
    assert normalized_regret(0.1, 0.1, 0.5) == 0.0
    assert normalized_regret(0.5, 0.1, 0.5) == 1.0
    assert normalized_regret(0.3, 0.1, 0.5) == pytest.approx(0.5)
    # not clipped
    assert normalized_regret(0.0, 0.1, 0.5) == pytest.approx(-0.25)


def test_regret_needs_a_range():
    with pytest.raises(ValueError):
        normalized_regret(0.3, 0.5, 0.5)


@settings(max_examples=200, deadline=None)
@given(y=st.floats(-1e3, 1e3), lo=st.floats(-1e3, 1e3), span=st.floats(1e-3, 1e3),
       a=st.floats(1e-3, 1e3), b=st.floats(-1e3, 1e3))
def test_regret_is_affine_invariant(y, lo, span, a, b):
    hi = lo + span
    r1 = normalized_regret(y, lo, hi)
    r2 = normalized_regret(a * y + b, a * lo + b, a * hi + b)
    assert r2 == pytest.approx(r1, rel=1e-6, abs=1e-6)


def test_regret_curve_tracks_best_so_far():
    c = regret_curve([3.0, 1.0, 2.0, 0.5], [1.0, 2.0, 2.5, 4.0], 0.0, 4.0)
    np.testing.assert_array_equal(c.best, [3.0, 1.0, 1.0, 0.5])
    np.testing.assert_allclose(c.regret, [0.75, 0.25, 0.25, 0.125])
    np.testing.assert_allclose(c.at(np.array([0.5, 1, 2, 3, 4]), axis="count"),
                               [1.0, 0.75, 0.25, 0.25, 0.125])
    np.testing.assert_allclose(c.at(np.array([0.9, 2.4, 3.9]), axis="time"), [1.0, 0.25, 0.25])
    with pytest.raises(ValueError):
        c.at(np.array([1.0]), axis="epochs")


def test_fractions():
    f = fractions()
    assert f.size == 50 and f[0] == 0.02 and f[-1] == 1.0


def test_rank_examples():
    r = average_rank({"a": [[0.1, 0.2]], "b": [[0.3, 0.4]]})
    np.testing.assert_array_equal(r["a"], [1, 1])
    np.testing.assert_array_equal(r["b"], [2, 2])
    r = average_rank({"a": [[0.2]], "b": [[0.2]]})
    assert r["a"][0] == r["b"][0] == 1.5
    np.testing.assert_array_equal(rank_methods(np.array([[0.1], [0.2], [0.2]]))[:, 0], [1, 2.5, 2.5])


def test_rank_averages_over_runs():
    r = average_rank({"a": [[0.1], [0.9]], "b": [[0.5], [0.5]]})
    assert r["a"][0] == r["b"][0] == 1.5
    with pytest.raises(ValueError):
        average_rank({})


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_rank_invariant_to_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    curves = {k: rng.uniform(0.01, 1, size=(4, 5)).round(2) for k in "abc"}
    transformed = {k: np.exp(3 * v) - 7 for k, v in curves.items()}
    a, b = average_rank(curves), average_rank(transformed)
    for k in curves:
        np.testing.assert_array_equal(a[k], b[k])


def test_calibration_of_constant_low_predictor():
    levels = (0.1, 0.3, 0.5, 0.7, 0.9)
    y = np.linspace(1, 2, 10)
    err = calibration_error(np.zeros((5, 10)), y, levels)
    assert err == pytest.approx(math.sqrt(1.65))


def test_calibration_of_true_quantiles():
    y = np.random.default_rng(0).standard_normal(100_000)
    q = np.repeat(norm.ppf(DEFAULT_CALIBRATION_LEVELS)[:, None], y.size, axis=1)
    assert calibration_error(q, y) < 0.01


def test_perfect_calibration_is_zero():
    y = np.arange(10.0)
    q = np.vstack([np.full(10, 1.5), np.full(10, 4.5), np.full(10, 7.5)])
    assert calibration_error(q, y, (0.2, 0.5, 0.8)) == 0.0


def test_calibration_shape_checks():
    with pytest.raises(ValueError):
        calibration_error(np.zeros((3, 4)), np.zeros(4), (0.2, 0.5))
    with pytest.raises(ValueError):
        calibration_error(np.zeros((1, 4)), np.zeros(4), (1.0,))


def test_rmse_examples():
    y = np.array([0.5, 1.0, 2.0])
    assert rmse_from_quantiles(np.vstack([y, y, y]), y) == 0.0
    assert rmse_from_quantiles(np.vstack([np.zeros(5), np.full(5, 2.0)]), np.ones(5)) == 0.0


def test_rmse_of_symmetric_oracle_quantiles_is_noise_std():
    rng = np.random.default_rng(1)
    x = rng.uniform(size=100_000)
    y = 3 * x + 0.4 * rng.standard_normal(x.size)
    q = 3 * x[None, :] + 0.4 * norm.ppf([0.2, 0.4, 0.6, 0.8])[:, None]
    assert rmse_from_quantiles(q, y) == pytest.approx(0.4, rel=0.05)


def test_metrics_csv(tmp_path):
    path = tmp_path / "m.csv"
    write_metrics_csv([{"method": "rs", "task": "t", "seed": 0, "fraction": 0.5,
                        "regret": np.float64(0.1), "rank": 1.0}], path)
    assert path.read_text() == "method,task,seed,fraction,regret,rank\nrs,t,0,0.5,0.1,1.0\n"


def test_empty_curve_reports_initial_regret():
    c = regret_curve([], [], 0.0, 1.0)
    assert isinstance(c, RegretCurve)
    np.testing.assert_array_equal(c.at(np.array([1.0, 2.0])), [1.0, 1.0])
