"""Sequential Bayesian optimization with Expected Improvement.

The loop minimizes a loss; internally EI is computed for the maximization
objective g = -loss, so `best` below is always the largest observed g.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dkgp
from .metadata import OffGridError, Task, normalize_response
from .metatrain import Checkpoint
from .space import Config, SearchSpace, encode, sample_uniform

SIGMA_FLOOR = 1e-12
GRID_POINTS_1D = 512


class SearchExhausted(RuntimeError):
    """No candidates left to propose."""


@dataclass(frozen=True)
class BoConfig:
    budget: int
    init_configs: tuple[Config, ...]
    fine_tune_steps: int = 100
    fine_tune_lr: float = 1e-3
    candidate_strategy: str = "table"  # "table" | "random"
    n_candidates: int = 1000
    seed: int = 0
    restart_from_checkpoint: bool = True

    def __post_init__(self):
        object.__setattr__(self, "init_configs", tuple(self.init_configs))
        if not 1 <= len(self.init_configs) <= self.budget:
            raise ValueError("need 1 <= |init_configs| <= budget")


@dataclass
class Trial:
    config: Config
    y: float
    incumbent_y: float
    normalized_regret: float | None = None


@dataclass
class RunHistory:
    trials: list[Trial] = field(default_factory=list)
    aborted: bool = False

    def append(self, config: Config, y: float, task: Task | None = None):
        best = min(self.trials[-1].incumbent_y, y) if self.trials else y
        regret = normalize_response(task, best) if task is not None else None
        self.trials.append(Trial(config, y, best, regret))

    @property
    def incumbent(self) -> float:
        return self.trials[-1].incumbent_y

    def regret_at(self, trial: int) -> float:
        """Normalized regret of the incumbent after `trial` evaluations (1-based)."""
        if not 1 <= trial <= len(self.trials):
            raise IndexError(f"trial {trial} out of range 1..{len(self.trials)}")
        return self.trials[trial - 1].normalized_regret

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["trial", "config", "objective", "incumbent", "normalized_regret"])
            for i, t in enumerate(self.trials, start=1):
                writer.writerow([
                    i, t.config.to_json(), f"{t.y:.17g}", f"{t.incumbent_y:.17g}",
                    "" if t.normalized_regret is None else f"{t.normalized_regret:.17g}",
                ])


def expected_improvement(mean: float, variance: float, best: float) -> float:
    """Closed-form EI for maximization; `best` is the incumbent of g = -loss."""
    if variance < 0:
        raise ValueError("variance must be >= 0")
    delta = mean - best
    if variance == 0.0:
        return max(delta, 0.0)
    sigma = max(math.sqrt(variance), SIGMA_FLOOR)
    z = delta / sigma
    pdf = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    cdf = 0.5 * math.erfc(-z / math.sqrt(2.0))
    return max(delta * cdf + sigma * pdf, 0.0)


def select_candidate(means: np.ndarray, variances: np.ndarray, best: float) -> int:
    """Argmax EI; ties broken by higher mean, then lower index."""
    if len(means) == 0:
        raise SearchExhausted("empty candidate set")
    ei = np.array([expected_improvement(m, v, best)
                   for m, v in zip(means, variances)])
    order = max(range(len(ei)), key=lambda i: (ei[i], means[i], -i))
    return order


def propose(predict, observed_y: np.ndarray, candidates_enc: np.ndarray) -> int:
    """Pick the candidate index maximizing EI under the model.

    `predict(X)` must return (mean, variance) arrays for the loss; EI runs
    on the negated values.
    """
    if len(candidates_enc) == 0:
        raise SearchExhausted("empty candidate set")
    mean_loss, var = predict(candidates_enc)
    best_g = -float(np.min(observed_y))
    return select_candidate(-np.asarray(mean_loss), np.asarray(var), best_g)


def candidate_pool(strategy: str, space: SearchSpace, task: Task | None,
                   evaluated: set[Config], rng: np.random.Generator,
                   n_candidates: int = 1000) -> list[Config]:
    """Finite set over which EI is maximized each trial."""
    if strategy == "table":
        if task is None:
            raise ValueError("table strategy requires a task")
        return [cfg for cfg in task.configs if cfg not in evaluated]
    if strategy == "random":
        pool = [sample_uniform(space, rng) for _ in range(n_candidates)]
        continuous = [p for p in space.params if p.kind == "continuous"]
        if len(space.params) == 1 and len(continuous) == 1:
            spec = continuous[0]
            grid = np.linspace(0.0, 1.0, GRID_POINTS_1D)
            pool.extend(Config({spec.name: spec.from_unit(z)}) for z in grid)
        return [cfg for cfg in pool if cfg not in evaluated]
    raise ValueError(f"unknown candidate strategy {strategy!r}")


def _fsbo_model(checkpoint: Checkpoint, config: BoConfig):
    """Per-trial model refresh: fine-tune the checkpoint on all observations."""
    base = checkpoint.surrogate
    state = {"surrogate": base}

    def refit(X, y):
        start = base if config.restart_from_checkpoint else state["surrogate"]
        result = dkgp.fine_tune(start, X, y,
                                steps=config.fine_tune_steps, lr=config.fine_tune_lr)
        state["surrogate"] = result.surrogate

        def predict(Xq):
            post = dkgp.posterior(result.surrogate, (X, y), Xq)
            return post.mean, post.variance

        return predict

    return refit


def _vanilla_model(config: BoConfig, rng: np.random.Generator):
    """From-scratch Matern 5/2 GP fit at every trial (no transfer)."""
    from .baselines import fit_vanilla_gp

    def refit(X, y):
        gp = fit_vanilla_gp(X, y, rng=rng)

        def predict(Xq):
            return gp.predict(X, y, Xq)

        return predict

    return refit


def run_bo(checkpoint: Checkpoint | None, oracle, space: SearchSpace,
           config: BoConfig, task: Task | None = None) -> RunHistory:
    """Evaluate the initial design, then propose-evaluate until the budget.

    With a checkpoint the surrogate is the fine-tuned deep kernel; with
    checkpoint=None a vanilla Matern GP is fit from scratch each trial.
    An off-grid oracle error aborts and returns the partial history.
    """
    rng = np.random.default_rng(config.seed)
    refit = (_fsbo_model(checkpoint, config) if checkpoint is not None
             else _vanilla_model(config, rng))
    history = RunHistory()
    evaluated: set[Config] = set()
    try:
        for cfg in config.init_configs:
            history.append(cfg, float(oracle(cfg)), task)
            evaluated.add(cfg)
        while len(history.trials) < config.budget:
            pool = candidate_pool(config.candidate_strategy, space, task,
                                  evaluated, rng, config.n_candidates)
            if not pool:
                break
            X = np.array([encode(t.config, space) for t in history.trials])
            y = np.array([t.y for t in history.trials])
            predict = refit(X, y)
            pool_enc = np.array([encode(c, space) for c in pool])
            choice = pool[propose(predict, y, pool_enc)]
            history.append(choice, float(oracle(choice)), task)
            evaluated.add(choice)
    except OffGridError:
        history.aborted = True
    return history
