"""Synthetic task families for demos and desk-scale benchmarks.

Everything is stored as a loss (lower is better); maximization problems are
negated at generation time.
"""

from __future__ import annotations

import math

import numpy as np

from .metadata import MetaDataset, Task
from .space import Config, ParamSpec, SearchSpace

SINE_X_LOW, SINE_X_HIGH = -5.0, 5.0
SINE_AMPLITUDE = (0.1, 5.0)


def sine_space() -> SearchSpace:
    return SearchSpace((ParamSpec("x", "continuous", bounds=(SINE_X_LOW, SINE_X_HIGH)),))


def sample_sine_params(rng: np.random.Generator) -> tuple[float, float]:
    a = rng.uniform(*SINE_AMPLITUDE)
    b = rng.uniform(0.0, 2.0 * math.pi)
    return a, b


def sine_loss(x: float, a: float, b: float) -> float:
    """Negated sine wave; the minimum -a sits at the wave's maximum."""
    return -a * math.sin(x + b)


def make_sine_task(task_id: str, a: float, b: float, n_points: int = 50) -> Task:
    xs = np.linspace(SINE_X_LOW, SINE_X_HIGH, n_points)
    records = [(Config({"x": float(x)}), sine_loss(float(x), a, b)) for x in xs]
    return Task.from_records(task_id, records)


def make_sine_dataset(n_tasks: int, seed: int, n_points: int = 50) -> MetaDataset:
    rng = np.random.default_rng(seed)
    tasks = []
    for i in range(n_tasks):
        a, b = sample_sine_params(rng)
        tasks.append(make_sine_task(f"sine-{i:03d}", a, b, n_points))
    return MetaDataset.from_tasks(sine_space(), tasks)


def sine_oracle(a: float, b: float):
    def oracle(config: Config) -> float:
        return sine_loss(float(config["x"]), a, b)

    return oracle


# --- shared-structure quadratic family on a fixed grid ---

QUAD_DIM = 3
QUAD_CENTER_SPREAD = 0.12  # task optima cluster inside this radius
QUAD_NOISE = 0.02
QUAD_RIPPLE = 0.06
QUAD_N_DECOYS = 2  # near-optimal basins far from the true one
QUAD_DECOY_GAP = 0.15


def quadratic_space() -> SearchSpace:
    return SearchSpace(tuple(
        ParamSpec(f"x{i}", "continuous", bounds=(0.0, 1.0)) for i in range(QUAD_DIM)
    ))


def make_quadratic_dataset(n_tasks: int = 12, grid_size: int = 200,
                           seed: int = 0) -> MetaDataset:
    """Tasks share a grid, curvature structure, and a common optimum region.

    f^(t)(x) = (x - c^(t))^T A^(t) (x - c^(t)) + ripple + noise, with task
    centers c^(t) clustered around a family-wide center so transfer helps.
    """
    rng = np.random.default_rng(seed)
    space = quadratic_space()
    grid = rng.uniform(0.0, 1.0, size=(grid_size, QUAD_DIM))
    family_center = rng.uniform(0.25, 0.75, size=QUAD_DIM)
    decoy_centers = rng.uniform(0.0, 1.0, size=(QUAD_N_DECOYS, QUAD_DIM))
    ripple_freq = rng.uniform(4.0, 8.0, size=QUAD_DIM)
    tasks = []
    for t in range(n_tasks):
        center = family_center + rng.uniform(-QUAD_CENTER_SPREAD, QUAD_CENTER_SPREAD,
                                             size=QUAD_DIM)
        scales = rng.uniform(0.8, 1.6, size=QUAD_DIM)
        M = rng.normal(size=(QUAD_DIM, QUAD_DIM))
        Q, _ = np.linalg.qr(M)
        A = Q @ np.diag(scales) @ Q.T
        offset = rng.uniform(0.0, 0.5)
        diffs = grid - center
        quad = np.einsum("ni,ij,nj->n", diffs, A, diffs)
        # decoy basins: almost as deep, shared by the family, never optimal
        for c in decoy_centers:
            d2 = ((grid - c) ** 2).sum(axis=1)
            depth = rng.uniform(0.9, 1.1)
            quad = np.minimum(quad, QUAD_DECOY_GAP + depth * d2)
        ripple = QUAD_RIPPLE * np.sin(grid @ ripple_freq + rng.uniform(0, 2 * math.pi))
        ys = offset + quad + ripple + rng.normal(0.0, QUAD_NOISE, size=grid_size)
        records = [
            (Config({f"x{i}": float(v) for i, v in enumerate(row)}), float(y))
            for row, y in zip(grid, ys)
        ]
        tasks.append(Task.from_records(f"quad-{t:03d}", records))
    return MetaDataset.from_tasks(space, tasks)
