"""Benchmark orchestration: leave-one-task-out runs with repeats, regret
reporting at trial checkpoints, and the 1-D sine few-shot demo.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dkgp, synthetic
from .baselines import random_search
from .bo import BoConfig, RunHistory, expected_improvement, run_bo
from .metadata import (
    DegenerateTaskError,
    LotoSplit,
    MetaDataset,
    Task,
    fixed_splits,
    load_metadata,
    loto_splits,
    normalize_response,
    tabular_oracle,
)
from .metatrain import Checkpoint, TrainConfig, load_checkpoint, meta_train, save_checkpoint
from .space import Config, encode, lhs_sample
from .warmstart import EaConfig, build_response_matrix, evolve, source_candidate_pool

METHODS = ("random", "gp-lhs", "gp-ws", "fsbo")
DEFAULT_REPORT_TRIALS = (15, 33, 50, 67, 100)
LHS_DESIGN_SIZE = 10
WARM_START_SIZE = 5


@dataclass(frozen=True)
class BenchmarkSpec:
    dataset_path: str
    methods: tuple[str, ...] = METHODS
    repeats: int = 10
    budget: int = 100
    report_trials: tuple[int, ...] = DEFAULT_REPORT_TRIALS
    base_seed: int = 0
    use_fixed_split: bool = False
    train: TrainConfig = field(default_factory=lambda: TrainConfig(outer_iterations=2000))
    ea: EaConfig = field(default_factory=lambda: EaConfig(steps=20_000))
    fine_tune_steps: int = 100
    fine_tune_lr: float = 1e-3
    lhs_size: int = LHS_DESIGN_SIZE
    warm_start_size: int = WARM_START_SIZE

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "report_trials", tuple(self.report_trials))
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if any(t > self.budget for t in self.report_trials):
            raise ValueError("report_trials must be <= budget")


@dataclass
class RegretReport:
    # rows: (method, task_id, repeat, trial, regret); regret is NaN on failure
    rows: list[tuple[str, str, int, int, float]] = field(default_factory=list)
    failures: list[tuple[str, str, int, str]] = field(default_factory=list)

    def aggregate(self) -> list[tuple[str, int, float, float, int]]:
        """(method, trial, mean regret, std regret, n) over tasks and repeats."""
        groups: dict[tuple[str, int], list[float]] = {}
        for method, _task, _rep, trial, regret in self.rows:
            if math.isnan(regret):
                continue
            groups.setdefault((method, trial), []).append(regret)
        out = []
        for (method, trial), vals in sorted(groups.items()):
            arr = np.array(vals)
            out.append((method, trial, float(arr.mean()), float(arr.std()), len(arr)))
        return out

    def save(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "report.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["method", "task_id", "repeat", "trial", "regret"])
            for method, task_id, rep, trial, regret in self.rows:
                writer.writerow([method, task_id, rep, trial, f"{regret:.17g}"])
        with open(out_dir / "summary.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["method", "trial", "mean_regret", "std_regret", "n"])
            for method, trial, mean, std, n in self.aggregate():
                writer.writerow([method, trial, f"{mean:.17g}", f"{std:.17g}", n])

    def mean_at(self, method: str, trial: int) -> float:
        for m, t, mean, _std, _n in self.aggregate():
            if m == method and t == trial:
                return mean
        raise KeyError((method, trial))


def normalized_regret(task: Task, history: RunHistory, trial: int) -> float:
    """Incumbent's gap to the task optimum on the [0,1] response scale."""
    if trial > len(history.trials):
        raise IndexError(f"trial {trial} beyond history of {len(history.trials)}")
    return normalize_response(task, history.trials[trial - 1].incumbent_y)


def _cell_seed(base_seed: int, *parts: int) -> int:
    ss = np.random.SeedSequence([base_seed, *parts])
    return int(ss.generate_state(1)[0])


def _snap_to_table(configs, task: Task, space) -> list[Config]:
    """Map off-grid designs to their nearest unused table rows."""
    table_enc = task.encoded(space)
    used: set[int] = set()
    out = []
    for cfg in configs:
        x = encode(cfg, space)
        d = np.linalg.norm(table_enc - x, axis=1)
        for i in np.argsort(d):
            if int(i) not in used:
                used.add(int(i))
                out.append(task.configs[int(i)])
                break
    return out


def _warm_start(checkpoint: Checkpoint, split: LotoSplit, dataset: MetaDataset,
                spec: BenchmarkSpec, seed: int, matrix_cache: dict) -> list[Config]:
    key = id(split)
    if key not in matrix_cache:
        candidates = source_candidate_pool(split.source_tasks)
        matrix_cache[key] = build_response_matrix(
            checkpoint, split.source_tasks, candidates, dataset.space,
            fine_tune_steps=spec.fine_tune_steps, fine_tune_lr=spec.fine_tune_lr,
        )
    ea = replace(spec.ea, set_size=spec.warm_start_size, seed=seed)
    best, _ = evolve(matrix_cache[key], ea)
    return best


def _run_cell(method: str, split: LotoSplit, dataset: MetaDataset,
              spec: BenchmarkSpec, checkpoint: Checkpoint | None,
              matrix_cache: dict, seed: int) -> RunHistory:
    task = split.target_task
    oracle = tabular_oracle(task, dataset.space)
    budget = min(spec.budget, len(task.records))
    rng = np.random.default_rng(seed)
    if method == "random":
        return random_search(oracle, budget, rng, task=task)
    if method == "gp-lhs":
        design = lhs_sample(dataset.space, min(spec.lhs_size, budget), rng)
        init = _snap_to_table(design, task, dataset.space)
        cfg = BoConfig(budget=budget, init_configs=init, seed=seed,
                       fine_tune_steps=spec.fine_tune_steps,
                       fine_tune_lr=spec.fine_tune_lr)
        return run_bo(None, oracle, dataset.space, cfg, task=task)
    if method in ("gp-ws", "fsbo"):
        init = _warm_start(checkpoint, split, dataset, spec, seed, matrix_cache)
        init = _snap_to_table(init, task, dataset.space)[: min(spec.warm_start_size, budget)]
        cfg = BoConfig(budget=budget, init_configs=init, seed=seed,
                       fine_tune_steps=spec.fine_tune_steps,
                       fine_tune_lr=spec.fine_tune_lr)
        ckpt = checkpoint if method == "fsbo" else None
        return run_bo(ckpt, oracle, dataset.space, cfg, task=task)
    raise ValueError(f"unknown method {method!r}")


def _split_checkpoint(split: LotoSplit, dataset: MetaDataset, spec: BenchmarkSpec,
                      split_idx: int, cache_dir: Path | None) -> Checkpoint:
    sources = MetaDataset.from_tasks(dataset.space, split.source_tasks)
    seed = _cell_seed(spec.base_seed, split_idx, 0xC0FFEE)
    cfg = replace(spec.train, seed=seed)
    if cache_dir is not None:
        cache_dir.mkdir(parents=True, exist_ok=True)
        path = cache_dir / f"split-{split.target_task.id}.ckpt"
        if path.exists():
            return load_checkpoint(path, expected_space_fingerprint=dataset.space.fingerprint())
        ckpt = meta_train(sources, cfg)
        save_checkpoint(ckpt, path)
        return ckpt
    return meta_train(sources, cfg)


def run_benchmark(spec: BenchmarkSpec, out_dir: str | Path | None = None,
                  dataset: MetaDataset | None = None,
                  run_histories: dict | None = None) -> RegretReport:
    """Execute every (split, method, repeat) cell and collect regrets.

    All run-level monotonicity/range invariants are asserted here: every
    regret sequence must be nonincreasing and inside [0,1].
    """
    if dataset is None:
        dataset = load_metadata(spec.dataset_path)
    splits = fixed_splits(dataset) if spec.use_fixed_split else loto_splits(dataset)
    cache_dir = Path(out_dir) / "checkpoints" if out_dir is not None else None
    report = RegretReport()
    needs_ckpt = bool({"gp-ws", "fsbo"} & set(spec.methods))
    for split_idx, split in enumerate(splits):
        try:
            normalize_response(split.target_task, split.target_task.f_min)
        except DegenerateTaskError:
            report.failures.append(("*", split.target_task.id, -1, "degenerate task"))
            continue
        checkpoint = (_split_checkpoint(split, dataset, spec, split_idx, cache_dir)
                      if needs_ckpt else None)
        matrix_cache: dict = {}
        for method_idx, method in enumerate(spec.methods):
            for rep in range(spec.repeats):
                seed = _cell_seed(spec.base_seed, split_idx, method_idx, rep)
                try:
                    history = _run_cell(method, split, dataset, spec,
                                        checkpoint, matrix_cache, seed)
                except Exception as e:  # individual failures go to the report
                    report.failures.append((method, split.target_task.id, rep, str(e)))
                    for trial in spec.report_trials:
                        report.rows.append((method, split.target_task.id, rep,
                                            trial, float("nan")))
                    continue
                _check_history_invariants(history)
                if run_histories is not None:
                    run_histories[(method, split.target_task.id, rep)] = history
                for trial in spec.report_trials:
                    if trial <= len(history.trials):
                        regret = normalized_regret(split.target_task, history, trial)
                    else:  # table exhausted early: incumbent stays final
                        regret = normalize_response(split.target_task, history.incumbent)
                    report.rows.append((method, split.target_task.id, rep, trial, regret))
    report.rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    if out_dir is not None:
        report.save(out_dir)
    return report


def _check_history_invariants(history: RunHistory) -> None:
    prev = math.inf
    for t in history.trials:
        if t.incumbent_y > prev + 1e-15:
            raise AssertionError("incumbent sequence not nonincreasing")
        prev = t.incumbent_y
        if t.normalized_regret is not None:
            if not -1e-12 <= t.normalized_regret <= 1.0 + 1e-12:
                raise AssertionError(f"regret {t.normalized_regret} outside [0,1]")


# --- sine few-shot demo ---

@dataclass
class SineDemoResult:
    checkpoint: Checkpoint
    histories: list[RunHistory]
    amplitudes: list[float]
    simple_regrets: list[float]  # incumbent loss minus true optimum, at the end


def sine_demo(n_source_tasks: int = 50, seed: int = 0, n_targets: int = 5,
              n_seed_points: int = 2, n_bo_steps: int = 5,
              out_dir: str | Path | None = None,
              checkpoint: Checkpoint | None = None,
              outer_iterations: int = 8000) -> SineDemoResult:
    """Meta-train on random sine tasks, then run few-shot BO on fresh ones.

    Emits per-step posterior/EI traces over a dense grid when out_dir is set.
    """
    dataset = synthetic.make_sine_dataset(n_source_tasks, seed=seed)
    if checkpoint is None:
        cfg = TrainConfig(outer_iterations=outer_iterations, batch_size=50,
                          hidden=(64, 64), seed=seed)
        checkpoint = meta_train(dataset, cfg)
    rng = np.random.default_rng(seed + 1)
    grid = np.linspace(synthetic.SINE_X_LOW, synthetic.SINE_X_HIGH, 512)
    histories, amplitudes, regrets = [], [], []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(n_targets):
        a, b = synthetic.sample_sine_params(rng)
        oracle = synthetic.sine_oracle(a, b)
        xs_seed = rng.uniform(synthetic.SINE_X_LOW, synthetic.SINE_X_HIGH,
                              size=n_seed_points)
        history = RunHistory()
        for x in xs_seed:
            cfg = Config({"x": float(x)})
            history.append(cfg, oracle(cfg))
        seen_x: set[float] = {float(x) for x in xs_seed}
        for step in range(n_bo_steps):
            X = np.array([[t.config["x"]] for t in history.trials])
            X_enc = (X - synthetic.SINE_X_LOW) / (synthetic.SINE_X_HIGH - synthetic.SINE_X_LOW)
            y = np.array([t.y for t in history.trials])
            result = dkgp.fine_tune(checkpoint.surrogate, X_enc, y, steps=100, lr=1e-3)
            grid_enc = ((grid - synthetic.SINE_X_LOW)
                        / (synthetic.SINE_X_HIGH - synthetic.SINE_X_LOW))[:, None]
            post = dkgp.posterior(result.surrogate, (X_enc, y), grid_enc)
            best_g = -float(y.min())
            ei = np.array([expected_improvement(-m, v, best_g)
                           for m, v in zip(post.mean, post.variance)])
            # never re-propose an evaluated grid point
            ei[[j for j, gx in enumerate(grid) if float(gx) in seen_x]] = -np.inf
            pick = int(np.argmax(ei))
            if out_dir is not None:
                _write_demo_trace(out_dir / f"target{i}_step{step}.csv",
                                  grid, post, ei, a, b, history)
            cfg = Config({"x": float(grid[pick])})
            seen_x.add(float(grid[pick]))
            history.append(cfg, oracle(cfg))
        histories.append(history)
        amplitudes.append(a)
        regrets.append(history.incumbent - (-a))
    return SineDemoResult(checkpoint, histories, amplitudes, regrets)


def _write_demo_trace(path, grid, post, ei, a, b, history) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "true_loss", "posterior_mean", "posterior_std", "ei"])
        for x, m, v, e in zip(grid, post.mean, post.variance, ei):
            writer.writerow([f"{x:.17g}", f"{synthetic.sine_loss(x, a, b):.17g}",
                             f"{m:.17g}", f"{math.sqrt(max(v, 0.0)):.17g}", f"{e:.17g}"])
        writer.writerow([])
        writer.writerow(["observed_x", "observed_loss"])
        for t in history.trials:
            writer.writerow([f"{t.config['x']:.17g}", f"{t.y:.17g}"])
