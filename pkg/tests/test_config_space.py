import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from cqrhpo.config_space import (
    Categorical,
    ConfigSpace,
    FiniteRange,
    LogUniform,
    Uniform,
    domain_from_dict,
)


def mixed_space():
    return ConfigSpace([
        ("opt", Categorical(("adam", "sgd", "rmsprop"))),
        ("lr", LogUniform(1e-4, 1e-1)),
        ("wd", Uniform(0.0, 0.5)),
        ("batch", FiniteRange((16.0, 32.0, 64.0), log=True)),
        ("flag", Categorical((True, False))),
    ])


def test_single_label_categorical_always_returns_it():
    space = ConfigSpace([("c", Categorical(("a",)))])
    rng = np.random.default_rng(0)
    assert {space.sample(rng)["c"] for _ in range(50)} == {"a"}


def test_uniform_sample_in_range_and_reproducible():
    space = ConfigSpace([("u", Uniform(0.0, 1.0))])
    a = space.sample(np.random.default_rng(7))["u"]
    b = space.sample(np.random.default_rng(7))["u"]
    assert 0.0 <= a <= 1.0
    assert a == b


def test_log_uniform_median_is_geometric_mean():
    dom = LogUniform(1e-4, 1e-1)
    draws = dom.sample_many(np.random.default_rng(1), 100_000)
    assert np.all((draws >= 1e-4) & (draws <= 1e-1))
    assert np.median(draws) == pytest.approx(math.sqrt(1e-4 * 1e-1), rel=0.1)


def test_encode_examples():
    cat = ConfigSpace([("c", Categorical(("a", "b")))])
    assert cat.encode(cat.make(["a"])).tolist() == [1.0, 0.0]
    u = ConfigSpace([("u", Uniform(0.0, 1.0))])
    assert u.encode(u.make([0.5])).tolist() == [0.5]
    lu = ConfigSpace([("lr", LogUniform(1e-4, 1e-1))])
    assert lu.encode(lu.make([1e-2])).tolist() == [math.log(1e-2)]


def test_finite_range_encodes_value_not_one_hot():
    space = ConfigSpace([("b", FiniteRange((16.0, 32.0), log=True)), ("d", FiniteRange((0.0, 0.5)))])
    assert space.encode(space.make([32.0, 0.5])).tolist() == [math.log(32.0), 0.5]


def test_feature_layout_follows_declaration_order():
    space = mixed_space()
    assert space.n_features == 3 + 1 + 1 + 1 + 2
    x = space.encode(space.make(["sgd", 1e-3, 0.25, 64.0, False]))
    np.testing.assert_array_equal(x, [0, 1, 0, math.log(1e-3), 0.25, math.log(64.0), 0, 1])


@pytest.mark.parametrize("values", [
    ["nope", 1e-3, 0.1, 16.0, True],
    ["adam", 1.0, 0.1, 16.0, True],
    ["adam", 1e-3, -0.1, 16.0, True],
    ["adam", 1e-3, 0.1, 17.0, True],
    ["adam", 1e-3, 0.1, 16.0],
    ["adam", "x", 0.1, 16.0, True],
])
def test_out_of_domain_values_are_rejected(values):
    with pytest.raises(ValueError):
        mixed_space().make(values)


def test_make_from_mapping_checks_keys():
    space = ConfigSpace([("a", Uniform(0, 1)), ("b", Uniform(0, 1))])
    assert space.make({"b": 0.2, "a": 0.1}).values == (0.1, 0.2)
    with pytest.raises(ValueError, match="missing"):
        space.make({"a": 0.1})


@pytest.mark.parametrize("bad", [
    lambda: Uniform(1.0, 1.0),
    lambda: LogUniform(0.0, 1.0),
    lambda: Categorical(()),
    lambda: Categorical(("a", "a")),
    lambda: FiniteRange((2.0, 1.0)),
    lambda: FiniteRange((0.0, 1.0), log=True),
    lambda: ConfigSpace([("a", Uniform(0, 1)), ("a", Uniform(0, 1))]),
])
def test_invalid_declarations(bad):
    with pytest.raises(ValueError):
        bad()


def test_config_is_hashable_and_exact():
    space = mixed_space()
    a = space.make(["adam", 1e-3, 0.1, 16.0, True])
    b = space.make({"opt": "adam", "lr": 1e-3, "wd": 0.1, "batch": 16.0, "flag": True})
    assert a == b and hash(a) == hash(b)
    assert len({a, b}) == 1
    assert a["lr"] == 1e-3
    assert space.make(["adam", 1e-3 + 1e-15, 0.1, 16.0, True]) != a


def test_json_round_trip():
    space = mixed_space()
    again = ConfigSpace.from_json(space.to_json())
    assert again == space
    assert domain_from_dict({"kind": "finite_range", "values": [1, 2], "log": True}) == \
        FiniteRange((1.0, 2.0), log=True)
    with pytest.raises(ValueError):
        ConfigSpace.from_dict({"dims": [{"name": "a", "kind": "normal"}]})


def test_samples_are_members_of_the_space():
    space = mixed_space()
    rng = np.random.default_rng(3)
    for c in space.sample_batch(rng, 500).configs():
        assert space.contains(c)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_encoded_length_is_fixed(seed):
    space = mixed_space()
    batch = space.sample_batch(np.random.default_rng(seed), 10_000)
    assert batch.features.shape == (10_000, space.n_features)
    # the batch fast path agrees with per-config encoding
    first = batch.configs()[:20]
    np.testing.assert_array_equal(space.encode_many(first), batch.features[:20])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_same_seed_same_configs(seed):
    space = mixed_space()
    a = space.sample_batch(np.random.default_rng(seed), 50).configs()
    b = space.sample_batch(np.random.default_rng(seed), 50).configs()
    assert a == b


def test_categorical_sampling_is_uniform():
    space = mixed_space()
    batch = space.sample_batch(np.random.default_rng(11), 100_000)
    for col, dom in zip(batch.columns, (d for _, d in space.dims)):
        if isinstance(dom, (Categorical, FiniteRange)):
            idx = col if isinstance(dom, Categorical) else np.searchsorted(dom.values, col)
            counts = np.bincount(idx.astype(int), minlength=len(dom.values))
            assert chisquare(counts).pvalue > 0.001
