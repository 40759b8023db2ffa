"""Data-driven initialization: evolve a small set of configs that covers
the source tasks well.

A candidate-by-task matrix of normalized responses is filled with recorded
values where available and surrogate predictions elsewhere. The set loss is
the sum over tasks of the best (lowest) normalized response inside the set;
a steady-state EA with elitist truncation minimizes it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dkgp
from .metadata import Task
from .metatrain import Checkpoint
from .space import Config, SearchSpace, encode


@dataclass(frozen=True)
class EaConfig:
    set_size: int = 5
    population_size: int = 100
    steps: int = 100_000
    mutation_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.set_size < 1:
            raise ValueError("set_size must be >= 1")
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if not 0 < self.mutation_prob < 1:
            raise ValueError("mutation_prob must be in (0, 1)")


@dataclass(frozen=True)
class ResponseMatrix:
    candidates: tuple[Config, ...]
    values: np.ndarray  # (C, T) normalized responses
    imputed_mask: np.ndarray  # (C, T) True where surrogate-imputed
    imputation_failures: int = 0


def source_candidate_pool(source_tasks) -> list[Config]:
    """Union of all configs observed in any source task, in first-seen order."""
    seen = {}
    for task in source_tasks:
        for cfg in task.configs:
            seen.setdefault(cfg, None)
    return list(seen)


def build_response_matrix(checkpoint: Checkpoint, source_tasks,
                          candidates, space: SearchSpace,
                          fine_tune_steps: int = 100,
                          fine_tune_lr: float = 1e-3) -> ResponseMatrix:
    """Fill the candidate-by-task table, imputing unobserved cells.

    Per task: fine-tune the checkpoint on the task's records, predict the
    posterior mean at unobserved candidates, then rescale the union of
    observed and predicted values into [0,1].
    """
    candidates = tuple(candidates)
    C, T = len(candidates), len(source_tasks)
    enc = np.array([encode(c, space) for c in candidates])
    values = np.zeros((C, T))
    mask = np.zeros((C, T), dtype=bool)
    failures = 0
    for t, task in enumerate(source_tasks):
        observed = {cfg: y for cfg, y in task.records}
        raw = np.empty(C)
        missing = []
        for i, cfg in enumerate(candidates):
            if cfg in observed:
                raw[i] = observed[cfg]
            else:
                missing.append(i)
                mask[i, t] = True
        if missing:
            X = task.encoded(space)
            y = task.objectives()
            result = dkgp.fine_tune(checkpoint.surrogate, X, y,
                                    steps=fine_tune_steps, lr=fine_tune_lr)
            try:
                post = dkgp.posterior(result.surrogate, (X, y), enc[missing])
                pred = post.mean
                if not np.all(np.isfinite(pred)):
                    raise dkgp.NumericalError("non-finite prediction")
            except dkgp.NumericalError:
                failures += 1
                pred = np.full(len(missing), float(np.mean(y)))
            raw[missing] = pred
        lo, hi = raw.min(), raw.max()
        if hi <= lo:
            raise ValueError(f"task {task.id}: degenerate response range")
        values[:, t] = (raw - lo) / (hi - lo)
    return ResponseMatrix(candidates, values, mask, failures)


def set_loss(members, matrix: ResponseMatrix) -> float:
    """Sum over tasks of the set's best normalized response."""
    idx = np.asarray(list(members), dtype=int)
    if idx.size == 0:
        raise ValueError("set must be nonempty")
    return float(matrix.values[idx].min(axis=0).sum())


def init_weight(row: np.ndarray) -> float:
    """Unnormalized sampling weight of one candidate row."""
    return float(np.exp(-np.min(row)))


def _weights(matrix: ResponseMatrix) -> np.ndarray:
    return np.exp(-matrix.values.min(axis=1))


def _weighted_draw(weights: np.ndarray, exclude: set[int],
                   rng: np.random.Generator) -> int:
    w = weights.copy()
    if exclude:
        w[list(exclude)] = 0.0
    total = w.sum()
    if total <= 0:
        free = [i for i in range(len(w)) if i not in exclude]
        return int(rng.choice(free))
    return int(rng.choice(len(w), p=w / total))


def sample_initial_set(matrix: ResponseMatrix, size: int,
                       rng: np.random.Generator) -> frozenset:
    weights = _weights(matrix)
    members: set[int] = set()
    while len(members) < size:
        members.add(_weighted_draw(weights, members, rng))
    return frozenset(members)


def mutate(members: frozenset, matrix: ResponseMatrix,
           rng: np.random.Generator) -> frozenset:
    """Drop one member uniformly, add a weighted replacement from outside."""
    out = set(members)
    victim = rng.choice(sorted(out))
    out.remove(int(victim))
    weights = _weights(matrix)
    out.add(_weighted_draw(weights, out | {int(victim)}, rng))
    return frozenset(out)


def crossover(set_a: frozenset, set_b: frozenset,
              rng: np.random.Generator) -> frozenset:
    """Uniform draw of |set_a| distinct members from the parents' union."""
    union = sorted(set_a | set_b)
    picked = rng.choice(len(union), size=len(set_a), replace=False)
    return frozenset(union[i] for i in picked)


def evolve(matrix: ResponseMatrix, config: EaConfig) -> tuple[list[Config], list[float]]:
    """Steady-state EA with elitist truncation; returns (best set, loss trace)."""
    C = len(matrix.candidates)
    if C < config.set_size:
        raise ValueError("fewer candidates than set_size")
    rng = np.random.default_rng(config.seed)
    population: list[frozenset] = []
    losses: list[float] = []
    seen = set()
    attempts = 0
    while len(population) < config.population_size and attempts < config.population_size * 50:
        s = sample_initial_set(matrix, config.set_size, rng)
        attempts += 1
        if s in seen and C > config.set_size:
            continue
        seen.add(s)
        population.append(s)
        losses.append(set_loss(s, matrix))
    best_i = int(np.argmin(losses))
    best_set, best_loss = population[best_i], losses[best_i]
    trace = [best_loss]
    for _ in range(config.steps):
        if rng.uniform() < config.mutation_prob or len(population) < 2:
            parent = population[int(rng.integers(len(population)))]
            child = mutate(parent, matrix, rng)
        else:
            i, j = rng.choice(len(population), size=2, replace=False)
            child = crossover(population[int(i)], population[int(j)], rng)
        child_loss = set_loss(child, matrix)
        population.append(child)
        losses.append(child_loss)
        if child_loss < best_loss:
            best_set, best_loss = child, child_loss
        if len(population) > config.population_size:
            worst = int(np.argmax(losses))
            if population[worst] == best_set:  # elitism: never drop the incumbent
                order = np.argsort(losses)
                worst = int(order[-2]) if population[int(order[-1])] == best_set else int(order[-1])
            population.pop(worst)
            losses.pop(worst)
        trace.append(best_loss)
    return [matrix.candidates[i] for i in sorted(best_set)], trace


def save_init_configs(configs, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump([c.values for c in configs], f, indent=2, sort_keys=True)


def load_init_configs(path: str | Path) -> list[Config]:
    with open(path) as f:
        return [Config(v) for v in json.load(f)]
