import numpy as np
import pytest

from fsbo.metadata import MetaDataset, Task
from fsbo.space import Config, ParamSpec, SearchSpace, builtin_space


@pytest.fixture(scope="session")
def glmnet_space():
    return builtin_space("glmnet")


@pytest.fixture(scope="session")
def svm_space():
    return builtin_space("svm")


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def make_toy_dataset(n_tasks=3, n_records=12, seed=0) -> MetaDataset:
    """Small GLMNet-shaped dataset with smooth synthetic objectives."""
    space = builtin_space("glmnet")
    rng = np.random.default_rng(seed)
    tasks = []
    for t in range(n_tasks):
        shift = rng.uniform(-0.3, 0.3)
        records = []
        seen = set()
        while len(records) < n_records:
            alpha = float(rng.uniform(0, 1))
            lam = float(2.0 ** rng.uniform(-10, 10))
            cfg = Config({"alpha": alpha, "lambda": lam})
            if cfg in seen:
                continue
            seen.add(cfg)
            y = (alpha - 0.5 - shift) ** 2 + 0.05 * np.log2(lam) ** 2 / 100 + t * 0.1
            records.append((cfg, float(y)))
        tasks.append(Task.from_records(f"task-{t}", records))
    return MetaDataset.from_tasks(space, tasks)


@pytest.fixture
def toy_dataset():
    return make_toy_dataset()
