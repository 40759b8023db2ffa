import numpy as np
import pytest

from fsbo.metadata import (
    DegenerateTaskError,
    LoadError,
    MetaDataset,
    OffGridError,
    Task,
    fixed_splits,
    load_metadata,
    load_task_file,
    loto_splits,
    normalize_response,
    save_metadata,
    tabular_oracle,
)
from fsbo.space import Config, builtin_space


def write_dataset(tmp_path, rows_by_task, space_name="glmnet", fixed_test=None):
    import json
    import shutil
    from pathlib import Path

    space = builtin_space(space_name)
    src = Path(__file__).parent.parent / "src" / "fsbo" / "spaces" / f"{space_name}.json"
    shutil.copy(src, tmp_path / "space.json")
    names = [p.name for p in space.params]
    files = []
    for task_id, rows in rows_by_task.items():
        fname = f"{task_id}.csv"
        with open(tmp_path / fname, "w") as f:
            f.write(",".join(names + ["objective"]) + "\n")
            for row in rows:
                f.write(",".join(str(c) for c in row) + "\n")
        files.append(fname)
    manifest = {"space": "space.json", "tasks": files}
    if fixed_test:
        manifest["fixed_split"] = {"test": fixed_test}
    with open(tmp_path / "dataset.json", "w") as f:
        json.dump(manifest, f)
    return tmp_path


def test_load_two_tasks(tmp_path):
    root = write_dataset(tmp_path, {
        "a": [(0.1, 1.0, 0.5), (0.2, 2.0, 0.7), (0.3, 4.0, 0.2)],
        "b": [(0.5, 1.0, 0.9), (0.6, 2.0, 0.1), (0.7, 4.0, 0.4)],
    })
    ds = load_metadata(root)
    assert len(ds.tasks) == 2
    assert ds.y_min == 0.1 and ds.y_max == 0.9
    assert ds.tasks[0].f_min == 0.2 and ds.tasks[0].f_max == 0.7


def test_load_out_of_bounds_names_location(tmp_path):
    root = write_dataset(tmp_path, {
        "a": [(0.1, 1.0, 0.5), (1.7, 2.0, 0.7)],
        "b": [(0.5, 1.0, 0.9), (0.6, 2.0, 0.1)],
    })
    with pytest.raises(LoadError, match=r"a\.csv:3.*alpha"):
        load_metadata(root)


def test_load_duplicate_config_rejected(tmp_path):
    root = write_dataset(tmp_path, {
        "a": [(0.1, 1.0, 0.5), (0.1, 1.0, 0.7)],
        "b": [(0.5, 1.0, 0.9), (0.6, 2.0, 0.1)],
    })
    with pytest.raises(LoadError, match="duplicate"):
        load_metadata(root)


def test_load_bad_header(tmp_path, glmnet_space):
    p = tmp_path / "x.csv"
    p.write_text("alpha,objective\n0.1,0.5\n")
    with pytest.raises(LoadError, match="header"):
        load_task_file(p, glmnet_space)


def test_adaboost_scale_totals(tmp_path):
    # grid of 12 x 9 = 108 rows per task, 50 tasks -> 5400 records
    iters = [2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000, 10000]
    terms = [2, 3, 4, 5, 7, 10, 15, 20, 30]
    rng = np.random.default_rng(0)
    rows_by_task = {
        f"t{k:02d}": [(i, p, round(float(rng.uniform()), 6)) for i in iters for p in terms]
        for k in range(50)
    }
    root = write_dataset(tmp_path, rows_by_task, space_name="adaboost")
    ds = load_metadata(root)
    assert len(ds.tasks) == 50
    assert sum(len(t.records) for t in ds.tasks) == 5400


def test_conditional_csv_roundtrip(tmp_path, svm_space):
    records = [
        (Config({"kernel": "linear", "C": 1.0}), 0.5),
        (Config({"kernel": "polynomial", "C": 2.0, "degree": "3"}), 0.3),
        (Config({"kernel": "rbf", "C": 4.0, "gamma": 0.5}), 0.2),
    ]
    task = Task.from_records("svm-task", records, svm_space)
    ds = MetaDataset.from_tasks(svm_space, [task, Task.from_records(
        "other", [(Config({"kernel": "linear", "C": 8.0}), 0.1),
                  (Config({"kernel": "linear", "C": 16.0}), 0.9)], svm_space)])
    save_metadata(ds, tmp_path / "ds")
    again = load_metadata(tmp_path / "ds")
    assert again.tasks == ds.tasks
    # byte-identical second save
    save_metadata(again, tmp_path / "ds2")
    for f in ["svm-task.csv", "other.csv", "dataset.json"]:
        assert (tmp_path / "ds" / f).read_bytes() == (tmp_path / "ds2" / f).read_bytes()


def test_oracle_returns_recorded_values(toy_dataset):
    task = toy_dataset.tasks[0]
    oracle = tabular_oracle(task, toy_dataset.space)
    for cfg, y in task.records:
        assert oracle(cfg) == y
    best_cfg = min(task.records, key=lambda r: r[1])[0]
    assert oracle(best_cfg) == task.f_min


def test_oracle_off_grid(toy_dataset):
    oracle = tabular_oracle(toy_dataset.tasks[0], toy_dataset.space)
    with pytest.raises(OffGridError):
        oracle(Config({"alpha": 0.123456, "lambda": 3.21}))


def test_normalize_response_endpoints(toy_dataset):
    task = toy_dataset.tasks[0]
    assert normalize_response(task, task.f_min) == 0.0
    assert normalize_response(task, task.f_max) == 1.0


def test_normalize_response_hand_value():
    task = Task.from_records("t", [(Config({"alpha": 0.1, "lambda": 1.0}), 0.2),
                                   (Config({"alpha": 0.2, "lambda": 1.0}), 0.8)])
    assert normalize_response(task, 0.5) == pytest.approx(0.5)


def test_normalize_degenerate():
    task = Task("t", ((Config({"a": 1}), 0.5), (Config({"a": 2}), 0.5)), 0.5, 0.5)
    with pytest.raises(DegenerateTaskError):
        normalize_response(task, 0.5)


def test_normalize_monotone(toy_dataset):
    task = toy_dataset.tasks[1]
    ys = sorted(task.objectives())
    normed = [normalize_response(task, y) for y in ys]
    assert all(a <= b for a, b in zip(normed, normed[1:]))
    assert min(normed) == 0.0 and max(normed) == 1.0


def test_global_bounds_cover_task_bounds(toy_dataset):
    for t in toy_dataset.tasks:
        assert toy_dataset.y_min <= t.f_min
        assert toy_dataset.y_max >= t.f_max


def test_loto_splits(toy_dataset):
    splits = loto_splits(toy_dataset)
    assert len(splits) == 3
    assert all(len(s.source_tasks) == 2 for s in splits)
    targets = {s.target_task.id for s in splits}
    assert targets == {t.id for t in toy_dataset.tasks}
    for s in splits:
        assert s.target_task not in s.source_tasks


def test_fixed_split(tmp_path):
    root = write_dataset(tmp_path, {
        "a": [(0.1, 1.0, 0.5), (0.2, 2.0, 0.7)],
        "b": [(0.5, 1.0, 0.9), (0.6, 2.0, 0.1)],
        "c": [(0.8, 1.0, 0.3), (0.9, 2.0, 0.6)],
    }, fixed_test=["b"])
    ds = load_metadata(root)
    [split] = fixed_splits(ds)
    assert split.target_task.id == "b"
    assert {t.id for t in split.source_tasks} == {"a", "c"}


def test_task_needs_two_records():
    with pytest.raises(LoadError):
        Task.from_records("t", [(Config({"a": 1}), 0.5)])
