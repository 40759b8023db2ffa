import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fsbo.space import (
    Config,
    ParamSpec,
    SearchSpace,
    SpaceError,
    decode,
    encode,
    lhs_sample,
    sample_uniform,
    space_from_dict,
    space_to_dict,
    validate,
)


def test_param_spec_invariants():
    with pytest.raises(SpaceError):
        ParamSpec("p", "continuous", bounds=(1.0, 1.0))
    with pytest.raises(SpaceError):
        ParamSpec("p", "continuous", bounds=(0.0, 1.0), scale="log2")
    with pytest.raises(SpaceError):
        ParamSpec("p", "categorical", choices=("a",))
    with pytest.raises(SpaceError):
        ParamSpec("p", "unknown")


def test_condition_must_name_earlier_categorical():
    with pytest.raises(SpaceError):
        SearchSpace((
            ParamSpec("child", "continuous", bounds=(0, 1), condition=("parent", "x")),
            ParamSpec("parent", "categorical", choices=("x", "y")),
        ))


def test_encoded_dim(svm_space, glmnet_space):
    # kernel one-hot(3) + C(1) + degree one-hot(4)+flag + gamma(1)+flag
    assert svm_space.encoded_dim == 11
    assert glmnet_space.encoded_dim == 2


def test_validate_svm_linear_ok(svm_space):
    assert validate(Config({"kernel": "linear", "C": 1.0}), svm_space) == []


def test_validate_inactive_param_present(svm_space):
    v = validate(Config({"kernel": "linear", "C": 1.0, "degree": "3"}), svm_space)
    assert any("degree" in msg and "inactive" in msg for msg in v)


def test_validate_out_of_bounds(glmnet_space):
    v = validate(Config({"alpha": 1.5, "lambda": 1.0}), glmnet_space)
    assert any("alpha" in msg and "out of" in msg for msg in v)


def test_validate_missing_param(glmnet_space):
    v = validate(Config({"alpha": 0.5}), glmnet_space)
    assert any("lambda" in msg and "missing" in msg for msg in v)


def test_encode_glmnet_bounds(glmnet_space):
    low = encode(Config({"alpha": 0.0, "lambda": 2.0**-10}), glmnet_space)
    high = encode(Config({"alpha": 1.0, "lambda": 2.0**10}), glmnet_space)
    np.testing.assert_allclose(low, [0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(high, [1.0, 1.0], atol=1e-15)


def test_encode_glmnet_midpoint(glmnet_space):
    # log2(1) = 0 is the midpoint of [-10, 10]
    mid = encode(Config({"alpha": 0.5, "lambda": 1.0}), glmnet_space)
    np.testing.assert_allclose(mid, [0.5, 0.5], atol=1e-15)


def test_encode_inactive_block_zero(svm_space):
    x = encode(Config({"kernel": "linear", "C": 1.0}), svm_space)
    # degree one-hot + flag and gamma value + flag all zero
    np.testing.assert_array_equal(x[4:], np.zeros(7))


def test_encode_rejects_invalid(glmnet_space):
    with pytest.raises(SpaceError):
        encode(Config({"alpha": 2.0, "lambda": 1.0}), glmnet_space)


def test_decode_roundtrip_continuous(glmnet_space, rng):
    for _ in range(50):
        cfg = sample_uniform(glmnet_space, rng)
        back = decode(encode(cfg, glmnet_space), glmnet_space)
        assert abs(back["alpha"] - cfg["alpha"]) < 1e-12
        assert abs(math.log2(back["lambda"]) - math.log2(cfg["lambda"])) < 1e-9


def test_sample_uniform_valid_and_in_unit_cube(svm_space, rng):
    for _ in range(200):
        cfg = sample_uniform(svm_space, rng)
        assert validate(cfg, svm_space) == []
        x = encode(cfg, svm_space)
        assert np.all(x >= 0.0) and np.all(x <= 1.0)


def test_sample_uniform_conditional_rule(svm_space, rng):
    for _ in range(10_000):
        cfg = sample_uniform(svm_space, rng)
        assert ("degree" in cfg) == (cfg["kernel"] == "polynomial")
        assert ("gamma" in cfg) == (cfg["kernel"] == "rbf")


def test_sample_uniform_mean_alpha(glmnet_space, rng):
    xs = np.array([encode(sample_uniform(glmnet_space, rng), glmnet_space)
                   for _ in range(10_000)])
    assert 0.48 <= xs[:, 0].mean() <= 0.52


def test_lhs_single_point(rng):
    space = SearchSpace((ParamSpec("x", "continuous", bounds=(0.0, 1.0)),))
    [cfg] = lhs_sample(space, 1, rng)
    assert 0.0 <= cfg["x"] <= 1.0


def test_lhs_stratification_n4(rng):
    space = SearchSpace((ParamSpec("x", "continuous", bounds=(0.0, 1.0)),))
    xs = sorted(c["x"] for c in lhs_sample(space, 4, rng))
    for i, x in enumerate(xs):
        assert i / 4 <= x <= (i + 1) / 4


def test_lhs_glmnet_deciles(glmnet_space, rng):
    configs = lhs_sample(glmnet_space, 10, rng)
    X = np.array([encode(c, glmnet_space) for c in configs])
    for col in X.T:
        assert sorted(np.floor(np.clip(col, 0, 1 - 1e-12) * 10).astype(int)) == list(range(10))


def test_lhs_stratification_exhaustive(glmnet_space, rng):
    for n in range(1, 65):
        X = np.array([encode(c, glmnet_space) for c in lhs_sample(glmnet_space, n, rng)])
        for col in X.T:
            strata = sorted(np.floor(np.clip(col, 0, 1 - 1e-12) * n).astype(int))
            assert strata == list(range(n))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_encode_injective_on_samples(glmnet_space, seed):
    r = np.random.default_rng(seed)
    a, b = sample_uniform(glmnet_space, r), sample_uniform(glmnet_space, r)
    if a != b:
        assert not np.allclose(encode(a, glmnet_space), encode(b, glmnet_space), atol=0)


def test_space_dict_roundtrip(svm_space):
    assert space_from_dict(space_to_dict(svm_space)) == svm_space
    assert space_from_dict(space_to_dict(svm_space)).fingerprint() == svm_space.fingerprint()
