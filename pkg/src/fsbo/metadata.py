"""Task tables: loading, the tabular oracle, label statistics, and splits.

A dataset is a directory with a `dataset.json` manifest pointing at a space
descriptor and one CSV file per task. Objectives are stored as losses
(lower is better); accuracy-style sources must be converted at ingestion.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .space import Config, SearchSpace, encode, load_space, save_space, validate

ORACLE_TOL = 1e-9  # per-dimension tolerance for exact-match table lookup


class LoadError(ValueError):
    """Malformed task file or manifest."""


class OffGridError(KeyError):
    """Query config is not a row of the task table."""


class DegenerateTaskError(ValueError):
    """Task has f_min == f_max; normalization undefined."""


@dataclass(frozen=True)
class Task:
    id: str
    records: tuple[tuple[Config, float], ...]
    f_min: float
    f_max: float

    @staticmethod
    def from_records(task_id: str, records, space: SearchSpace | None = None) -> "Task":
        records = tuple((cfg, float(y)) for cfg, y in records)
        if len(records) < 2:
            raise LoadError(f"task {task_id}: needs >= 2 records")
        if space is not None:
            for cfg, _ in records:
                v = validate(cfg, space)
                if v:
                    raise LoadError(f"task {task_id}: invalid config {cfg.values}: {v}")
        seen = set()
        for cfg, _ in records:
            if cfg in seen:
                raise LoadError(f"task {task_id}: duplicate config {cfg.values}")
            seen.add(cfg)
        ys = [y for _, y in records]
        return Task(task_id, records, min(ys), max(ys))

    @property
    def configs(self) -> list[Config]:
        return [cfg for cfg, _ in self.records]

    def encoded(self, space: SearchSpace) -> np.ndarray:
        return np.array([encode(cfg, space) for cfg, _ in self.records])

    def objectives(self) -> np.ndarray:
        return np.array([y for _, y in self.records])


@dataclass(frozen=True)
class MetaDataset:
    space: SearchSpace
    tasks: tuple[Task, ...]
    y_min: float
    y_max: float
    fixed_test_ids: tuple[str, ...] = ()

    @staticmethod
    def from_tasks(space, tasks, fixed_test_ids=()) -> "MetaDataset":
        tasks = tuple(sorted(tasks, key=lambda t: t.id))
        if len(tasks) < 2:
            raise LoadError("dataset needs >= 2 tasks")
        y_min = min(t.f_min for t in tasks)
        y_max = max(t.f_max for t in tasks)
        if not y_min < y_max:
            raise LoadError("degenerate dataset: y_min == y_max")
        return MetaDataset(space, tasks, y_min, y_max, tuple(fixed_test_ids))

    def task_by_id(self, task_id: str) -> Task:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(task_id)


@dataclass(frozen=True)
class LotoSplit:
    source_tasks: tuple[Task, ...]
    target_task: Task


def _parse_row(row, header, space, path, lineno) -> tuple[Config, float]:
    if len(row) != len(header):
        raise LoadError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
    values = {}
    for name, cell in zip(header[:-1], row[:-1]):
        cell = cell.strip()
        if cell == "":
            continue
        spec = space[name]
        if spec.kind == "continuous":
            try:
                values[name] = float(cell)
            except ValueError:
                raise LoadError(f"{path}:{lineno}: parameter {name!r}: not a number: {cell!r}")
        else:
            values[name] = cell
    try:
        y = float(row[-1])
    except ValueError:
        raise LoadError(f"{path}:{lineno}: objective not a number: {row[-1]!r}")
    cfg = Config(values)
    violations = validate(cfg, space)
    if violations:
        raise LoadError(f"{path}:{lineno}: {violations[0]}")
    return cfg, y


def load_task_file(path: str | Path, space: SearchSpace) -> Task:
    path = Path(path)
    expected_header = [p.name for p in space.params] + ["objective"]
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError(f"{path}: empty file")
        if header != expected_header:
            raise LoadError(f"{path}:1: unexpected header {header}, want {expected_header}")
        records = []
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            cfg, y = _parse_row(row, header, space, path, lineno)
            if cfg in seen:
                raise LoadError(f"{path}:{lineno}: duplicate config {cfg.values}")
            seen.add(cfg)
            records.append((cfg, y))
    return Task.from_records(path.stem, records)


def save_task_file(task: Task, space: SearchSpace, path: str | Path) -> None:
    """Canonical CSV writer (round-trips with load_task_file)."""
    names = [p.name for p in space.params]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(names + ["objective"])
        for cfg, y in task.records:
            row = []
            for name in names:
                if name in cfg:
                    v = cfg[name]
                    row.append(repr(v) if isinstance(v, float) else str(v))
                else:
                    row.append("")
            writer.writerow(row + [repr(y)])


def load_metadata(path: str | Path, space: SearchSpace | None = None) -> MetaDataset:
    """Load a dataset directory via its `dataset.json` manifest."""
    root = Path(path)
    manifest_path = root / "dataset.json"
    if not manifest_path.exists():
        raise LoadError(f"{manifest_path}: missing manifest")
    with open(manifest_path) as f:
        manifest = json.load(f)
    if space is None:
        space = load_space(root / manifest["space"])
    tasks = []
    for fname in sorted(manifest["tasks"]):
        task = load_task_file(root / fname, space)
        for cfg, _ in task.records:
            v = validate(cfg, space)
            if v:
                raise LoadError(f"{fname}: invalid config: {v}")
        tasks.append(task)
    fixed = tuple(manifest.get("fixed_split", {}).get("test", []))
    return MetaDataset.from_tasks(space, tasks, fixed_test_ids=fixed)


def save_metadata(dataset: MetaDataset, path: str | Path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    save_space(dataset.space, root / "space.json")
    files = []
    for task in dataset.tasks:
        fname = f"{task.id}.csv"
        save_task_file(task, dataset.space, root / fname)
        files.append(fname)
    manifest = {"space": "space.json", "tasks": files}
    if dataset.fixed_test_ids:
        manifest["fixed_split"] = {"test": list(dataset.fixed_test_ids)}
    with open(root / "dataset.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


class TabularOracle:
    """Replays a recorded response table; rejects off-grid queries."""

    def __init__(self, task: Task, space: SearchSpace):
        self.task = task
        self.space = space
        self._X = task.encoded(space)
        self._y = task.objectives()

    def lookup_index(self, config: Config) -> int:
        x = encode(config, self.space)
        hits = np.all(np.abs(self._X - x) <= ORACLE_TOL, axis=1)
        idx = np.flatnonzero(hits)
        if len(idx) == 0:
            raise OffGridError(f"config not in table for task {self.task.id}: {config.values}")
        return int(idx[0])

    def __call__(self, config: Config) -> float:
        return float(self._y[self.lookup_index(config)])


def tabular_oracle(task: Task, space: SearchSpace) -> TabularOracle:
    return TabularOracle(task, space)


def normalize_response(task: Task, y: float) -> float:
    """Scale an objective into the task's [0,1] range."""
    if task.f_max <= task.f_min:
        raise DegenerateTaskError(f"task {task.id}: f_min == f_max")
    return (y - task.f_min) / (task.f_max - task.f_min)


def loto_splits(dataset: MetaDataset) -> list[LotoSplit]:
    """One split per task, that task held out as target."""
    splits = []
    for i, target in enumerate(dataset.tasks):
        sources = tuple(t for j, t in enumerate(dataset.tasks) if j != i)
        splits.append(LotoSplit(sources, target))
    return splits


def fixed_splits(dataset: MetaDataset, test_ids=None) -> list[LotoSplit]:
    """One split per named test task; sources are every non-test task."""
    ids = tuple(test_ids) if test_ids is not None else dataset.fixed_test_ids
    if not ids:
        raise LoadError("no fixed test ids declared")
    unknown = set(ids) - {t.id for t in dataset.tasks}
    if unknown:
        raise LoadError(f"fixed split names unknown tasks: {sorted(unknown)}")
    sources = tuple(t for t in dataset.tasks if t.id not in ids)
    return [LotoSplit(sources, dataset.task_by_id(i)) for i in ids]
