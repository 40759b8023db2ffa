"""Transfer-learning Bayesian optimization with a meta-trained deep-kernel
GP surrogate, evolutionary warm-start selection, and a benchmark harness."""

from .space import Config, ParamSpec, SearchSpace, builtin_space, load_space
from .metadata import MetaDataset, Task, load_metadata, loto_splits, tabular_oracle
from .dkgp import DeepKernelSurrogate, fine_tune, posterior
from .metatrain import Checkpoint, TrainConfig, load_checkpoint, meta_train, save_checkpoint
from .bo import BoConfig, RunHistory, expected_improvement, run_bo
from .warmstart import EaConfig, build_response_matrix, evolve
from .harness import BenchmarkSpec, run_benchmark, sine_demo

__all__ = [
    "Config", "ParamSpec", "SearchSpace", "builtin_space", "load_space",
    "MetaDataset", "Task", "load_metadata", "loto_splits", "tabular_oracle",
    "DeepKernelSurrogate", "fine_tune", "posterior",
    "Checkpoint", "TrainConfig", "load_checkpoint", "meta_train", "save_checkpoint",
    "BoConfig", "RunHistory", "expected_improvement", "run_bo",
    "EaConfig", "build_response_matrix", "evolve",
    "BenchmarkSpec", "run_benchmark", "sine_demo",
]
