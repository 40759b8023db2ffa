"""Meta-training of the shared deep-kernel surrogate over source tasks.

Each outer iteration samples a task and a random label range (l, u), then
takes one or more minibatch marginal-likelihood gradient steps with the
batch labels affinely mapped by (l, u). The random rescaling teaches the
representation to ignore per-task label offset and scale, so target tasks
need no normalization.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import dkgp
from .dkgp import AdamState, DeepKernelSurrogate, NumericalError, adam_step, nll_grad
from .metadata import MetaDataset

CHECKPOINT_FORMAT = "fsbo-ckpt-v1"


class CheckpointError(ValueError):
    """Corrupt checkpoint file, version mismatch, or fingerprint mismatch."""


@dataclass(frozen=True)
class TrainConfig:
    outer_iterations: int = 10_000
    inner_steps: int = 1
    batch_size: int = 50
    lr_theta: float = 1e-3  # kernel parameters
    lr_w: float = 1e-3  # feature-map weights
    seed: int = 0
    augmentation: bool = True
    min_range_fraction: float = 0.05
    resample_limits_per_batch: bool = False
    hidden: tuple[int, ...] = (128, 128)
    base_kernel: str = "rbf"

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.lr_theta <= 0 or self.lr_w <= 0:
            raise ValueError("learning rates must be > 0")
        if not 0 < self.min_range_fraction < 1:
            raise ValueError("min_range_fraction must be in (0, 1)")
        object.__setattr__(self, "hidden", tuple(self.hidden))


@dataclass(frozen=True)
class Checkpoint:
    surrogate: DeepKernelSurrogate
    space_fingerprint: str
    train_config: TrainConfig
    loss_trace: tuple[float, ...]
    dataset_fingerprint: str = ""
    format: str = CHECKPOINT_FORMAT


def sample_task(dataset: MetaDataset, rng: np.random.Generator) -> int:
    return int(rng.integers(len(dataset.tasks)))


def sample_limits(y_min: float, y_max: float, min_range_fraction: float,
                  rng: np.random.Generator) -> tuple[float, float]:
    """Rejection-sample (l, u) uniform on [y_min, y_max] with a guarded gap."""
    if not y_min < y_max:
        raise ValueError("y_min must be < y_max")
    gap = min_range_fraction * (y_max - y_min)
    while True:
        l = rng.uniform(y_min, y_max)
        u = rng.uniform(y_min, y_max)
        if u - l >= gap:
            return l, u


def scale_labels(y: np.ndarray, l: float, u: float) -> np.ndarray:
    if not u > l:
        raise ValueError("scale_labels requires u > l")
    return (np.asarray(y, dtype=np.float64) - l) / (u - l)


def _sample_batch(X: np.ndarray, y: np.ndarray, b: int, rng: np.random.Generator):
    n = len(y)
    if n >= b:
        idx = rng.choice(n, size=b, replace=False)
    else:
        idx = rng.choice(n, size=b, replace=True)
    return X[idx], y[idx]


def meta_train(dataset: MetaDataset, config: TrainConfig,
               surrogate: DeepKernelSurrogate | None = None) -> Checkpoint:
    """Run the outer task-sampling loop and return a checkpoint."""
    rng = np.random.default_rng(config.seed)
    if surrogate is None:
        surrogate = DeepKernelSurrogate.init(
            dataset.space.encoded_dim, hidden=config.hidden,
            base_kernel=config.base_kernel,
            seed=int(rng.integers(2**31 - 1)),
        )
    encoded = [t.encoded(dataset.space) for t in dataset.tasks]
    labels = [t.objectives() for t in dataset.tasks]

    params = surrogate.to_param_dict()
    lr = {name: (config.lr_theta if name.startswith("kern.") else config.lr_w)
          for name in params}
    state = AdamState()
    current = surrogate
    trace: list[float] = []
    running = None
    skipped = 0
    total_steps = 0
    for _ in range(config.outer_iterations):
        t = sample_task(dataset, rng)
        limits = None
        if config.augmentation and not config.resample_limits_per_batch:
            limits = sample_limits(dataset.y_min, dataset.y_max,
                                   config.min_range_fraction, rng)
        for _ in range(config.inner_steps):
            Xb, yb = _sample_batch(encoded[t], labels[t], config.batch_size, rng)
            if config.augmentation:
                l, u = (sample_limits(dataset.y_min, dataset.y_max,
                                      config.min_range_fraction, rng)
                        if config.resample_limits_per_batch else limits)
                yb = scale_labels(yb, l, u)
            total_steps += 1
            try:
                loss, grads = nll_grad(current, Xb, yb)
            except NumericalError:
                skipped += 1
                continue
            params, state = adam_step(params, grads, state, lr)
            params = dkgp._apply_noise_floor(params)
            current = surrogate.with_params(params)
            running = loss if running is None else 0.99 * running + 0.01 * loss
            trace.append(running)
    if total_steps > 0 and skipped > max(1, 0.01 * total_steps):
        raise NumericalError(
            f"meta-training skipped {skipped}/{total_steps} steps; aborting"
        )
    return Checkpoint(
        surrogate=current,
        space_fingerprint=dataset.space.fingerprint(),
        train_config=config,
        loss_trace=tuple(trace),
        dataset_fingerprint=_dataset_fingerprint(dataset),
    )


def _dataset_fingerprint(dataset: MetaDataset) -> str:
    import hashlib

    h = hashlib.sha256()
    h.update(dataset.space.fingerprint().encode())
    for task in dataset.tasks:
        h.update(task.id.encode())
        h.update(np.ascontiguousarray(task.encoded(dataset.space)).tobytes())
        h.update(np.ascontiguousarray(task.objectives()).tobytes())
    return h.hexdigest()


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    """Write a zip container: JSON metadata plus one .npy per parameter tensor."""
    arrays = {k: v.numpy() for k, v in checkpoint.surrogate.to_param_dict().items()}
    cfg = asdict(checkpoint.train_config)
    cfg["hidden"] = list(cfg["hidden"])
    meta = {
        "format": checkpoint.format,
        "space_fingerprint": checkpoint.space_fingerprint,
        "dataset_fingerprint": checkpoint.dataset_fingerprint,
        "train_config": cfg,
        "loss_trace": list(checkpoint.loss_trace),
        "base_kernel": checkpoint.surrogate.kernel.base_kernel,
        "n_layers": len(checkpoint.surrogate.mlp.weights),
    }
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("meta.json", json.dumps(meta, sort_keys=True))
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.save(buf, np.ascontiguousarray(arr, dtype=np.float64))
            zf.writestr(f"params/{name}.npy", buf.getvalue())


def load_checkpoint(path, expected_space_fingerprint: str | None = None) -> Checkpoint:
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            arrays = {}
            for info in zf.namelist():
                if info.startswith("params/") and info.endswith(".npy"):
                    name = info[len("params/"):-len(".npy")]
                    arrays[name] = np.load(io.BytesIO(zf.read(info)))
    except (zipfile.BadZipFile, KeyError, ValueError, EOFError) as e:
        raise CheckpointError(f"corrupt checkpoint file {path}: {e}")
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {meta.get('format')!r}")
    if (expected_space_fingerprint is not None
            and meta["space_fingerprint"] != expected_space_fingerprint):
        raise CheckpointError("checkpoint space fingerprint does not match")
    cfg = dict(meta["train_config"])
    cfg["hidden"] = tuple(cfg["hidden"])
    config = TrainConfig(**cfg)
    n_layers = meta["n_layers"]
    input_dim = arrays["mlp.w0"].shape[1]
    hidden = tuple(arrays[f"mlp.w{i}"].shape[0] for i in range(n_layers))
    sm_q = (arrays["kern.sm_log_weights"].shape[0]
            if "kern.sm_log_weights" in arrays else dkgp.SM_DEFAULT_COMPONENTS)
    template = DeepKernelSurrogate.init(
        input_dim, hidden=hidden, base_kernel=meta["base_kernel"], sm_components=sm_q
    )
    template_params = template.to_param_dict()
    missing = set(template_params) - set(arrays)
    if missing:
        raise CheckpointError(f"checkpoint missing parameters: {sorted(missing)}")
    # npy serialization can promote 0-d scalars to length-1 vectors
    params = {name: torch.as_tensor(arr, dtype=torch.float64)
              .reshape(template_params[name].shape)
              for name, arr in arrays.items()}
    surrogate = template.with_params(params)
    return Checkpoint(
        surrogate=surrogate,
        space_fingerprint=meta["space_fingerprint"],
        train_config=config,
        loss_trace=tuple(meta["loss_trace"]),
        dataset_fingerprint=meta.get("dataset_fingerprint", ""),
    )
