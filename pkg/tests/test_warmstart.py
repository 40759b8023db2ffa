import itertools

import numpy as np
import pytest

from fsbo import dkgp
from fsbo.metatrain import TrainConfig, meta_train
from fsbo.space import Config
from fsbo.warmstart import (
    EaConfig,
    ResponseMatrix,
    build_response_matrix,
    crossover,
    evolve,
    init_weight,
    load_init_configs,
    mutate,
    sample_initial_set,
    save_init_configs,
    set_loss,
    source_candidate_pool,
    _weighted_draw,
)
from conftest import make_toy_dataset


def make_matrix(values):
    values = np.asarray(values, dtype=np.float64)
    C = values.shape[0]
    candidates = tuple(Config({"i": i}) for i in range(C))
    return ResponseMatrix(candidates, values, np.zeros_like(values, dtype=bool))


def test_source_candidate_pool_first_seen_dedup(toy_dataset):
    pool = source_candidate_pool(toy_dataset.tasks)
    assert len(pool) == len(set(pool))
    # first task's configs appear first, in record order
    first = [c for c, _ in toy_dataset.tasks[0].records]
    assert pool[: len(first)] == first


@pytest.fixture(scope="module")
def toy_ckpt():
    ds = make_toy_dataset(n_tasks=3, n_records=10, seed=1)
    ckpt = meta_train(ds, TrainConfig(
        outer_iterations=30, batch_size=6, hidden=(8, 4), seed=0))
    return ds, ckpt


def test_response_matrix_observed_passthrough(toy_ckpt):
    ds, ckpt = toy_ckpt
    task = ds.tasks[0]
    candidates = [c for c, _ in task.records]
    matrix = build_response_matrix(ckpt, [task], candidates, ds.space,
                                   fine_tune_steps=0)
    assert matrix.values.shape == (len(candidates), 1)
    assert not matrix.imputed_mask.any()
    raw = np.array([y for _, y in task.records])
    expected = (raw - raw.min()) / (raw.max() - raw.min())
    np.testing.assert_allclose(matrix.values[:, 0], expected, atol=1e-12)


def test_response_matrix_imputation_matches_posterior_oracle(toy_ckpt):
    """Unobserved cells equal the checkpoint's posterior mean, then min-max."""
    ds, ckpt = toy_ckpt
    task_a, task_b = ds.tasks[0], ds.tasks[1]
    candidates = source_candidate_pool([task_a, task_b])
    matrix = build_response_matrix(ckpt, [task_a, task_b], candidates, ds.space,
                                   fine_tune_steps=0)
    from fsbo.space import encode
    enc = np.array([encode(c, ds.space) for c in candidates])
    for t, task in enumerate([task_a, task_b]):
        observed = dict(task.records)
        raw = np.empty(len(candidates))
        missing = [i for i, c in enumerate(candidates) if c not in observed]
        for i, c in enumerate(candidates):
            if c not in observed:
                continue
            raw[i] = observed[c]
        X, y = task.encoded(ds.space), task.objectives()
        post = dkgp.posterior(ckpt.surrogate, (X, y), enc[missing])
        raw[missing] = post.mean
        expected = (raw - raw.min()) / (raw.max() - raw.min())
        np.testing.assert_allclose(matrix.values[:, t], expected, atol=1e-8)
        assert set(np.nonzero(matrix.imputed_mask[:, t])[0]) == set(missing)
    assert matrix.imputation_failures == 0


def test_set_loss_brute_force(rng):
    values = rng.uniform(size=(8, 3))
    matrix = make_matrix(values)
    for members in itertools.combinations(range(8), 2):
        manual = sum(min(values[i, t] for i in members) for t in range(3))
        assert set_loss(members, matrix) == pytest.approx(manual, rel=1e-12)


def test_set_loss_superset_dominates(rng):
    values = rng.uniform(size=(6, 4))
    matrix = make_matrix(values)
    assert set_loss({0, 1, 2}, matrix) <= set_loss({0, 1}, matrix)
    with pytest.raises(ValueError):
        set_loss(set(), matrix)


def test_init_weight_examples():
    assert init_weight(np.array([0.0, 0.7])) == 1.0
    assert init_weight(np.ones(3)) == pytest.approx(np.exp(-1.0))
    # lower best response means higher weight
    assert init_weight(np.array([0.1])) > init_weight(np.array([0.9]))


def test_weighted_draw_frequencies(rng):
    weights = np.array([2.0, 1.0, 1.0])
    counts = np.zeros(3)
    for _ in range(40_000):
        counts[_weighted_draw(weights, set(), rng)] += 1
    np.testing.assert_allclose(counts / 40_000, [0.5, 0.25, 0.25], atol=0.01)


def test_weighted_draw_respects_exclusions(rng):
    weights = np.array([10.0, 1.0, 1.0])
    for _ in range(200):
        assert _weighted_draw(weights, {0}, rng) != 0


def test_sample_initial_set_properties(rng):
    matrix = make_matrix(rng.uniform(size=(10, 2)))
    s = sample_initial_set(matrix, 4, rng)
    assert len(s) == 4
    assert all(0 <= i < 10 for i in s)


def test_mutate_swaps_exactly_one(rng):
    matrix = make_matrix(rng.uniform(size=(10, 2)))
    parent = frozenset({1, 4, 7})
    for _ in range(100):
        child = mutate(parent, matrix, rng)
        assert len(child) == 3
        assert len(parent ^ child) == 2  # one out, one different one in


def test_crossover_properties(rng):
    a, b = frozenset({0, 1, 2}), frozenset({2, 3, 4})
    for _ in range(100):
        child = crossover(a, b, rng)
        assert len(child) == 3
        assert child <= (a | b)


def test_evolve_zero_steps(rng):
    matrix = make_matrix(rng.uniform(size=(8, 3)))
    cfg = EaConfig(set_size=2, population_size=5, steps=0, seed=0)
    best, trace = evolve(matrix, cfg)
    assert len(best) == 2
    assert len(trace) == 1


def test_evolve_finds_brute_force_optimum():
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        values = rng.uniform(size=(6, 3))
        matrix = make_matrix(values)
        target = min(itertools.combinations(range(6), 2),
                     key=lambda m: set_loss(m, matrix))
        best, trace = evolve(matrix, EaConfig(
            set_size=2, population_size=10, steps=500, seed=seed))
        found = frozenset(matrix.candidates.index(c) for c in best)
        if found == frozenset(target):
            hits += 1
    assert hits >= 19


def test_evolve_trace_monotone(rng):
    matrix = make_matrix(rng.uniform(size=(12, 4)))
    _, trace = evolve(matrix, EaConfig(set_size=3, population_size=8,
                                       steps=300, seed=2))
    assert all(a >= b for a, b in zip(trace, trace[1:]))
    assert len(trace) == 301


def test_evolve_deterministic(rng):
    values = rng.uniform(size=(10, 3))
    cfg = EaConfig(set_size=3, population_size=6, steps=200, seed=7)
    b1, t1 = evolve(make_matrix(values), cfg)
    b2, t2 = evolve(make_matrix(values), cfg)
    assert b1 == b2 and t1 == t2


def test_evolve_rejects_small_pool(rng):
    matrix = make_matrix(rng.uniform(size=(2, 2)))
    with pytest.raises(ValueError):
        evolve(matrix, EaConfig(set_size=3, population_size=4, steps=1))


def test_init_configs_roundtrip(tmp_path):
    configs = [Config({"alpha": 0.5, "lambda": 2.0}),
               Config({"kernel": "rbf", "gamma": 0.1})]
    p = tmp_path / "init.json"
    save_init_configs(configs, p)
    assert load_init_configs(p) == configs


def test_ea_config_validation():
    with pytest.raises(ValueError):
        EaConfig(set_size=0)
    with pytest.raises(ValueError):
        EaConfig(population_size=1)
    with pytest.raises(ValueError):
        EaConfig(mutation_prob=1.0)
