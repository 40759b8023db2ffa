"""Command-line interface.

Errors exit nonzero with a machine-readable JSON object on stderr.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np

from .bo import BoConfig, run_bo
from .harness import BenchmarkSpec, run_benchmark, sine_demo
from .metadata import load_metadata, tabular_oracle
from .metatrain import TrainConfig, load_checkpoint, meta_train, save_checkpoint
from .warmstart import EaConfig, build_response_matrix, evolve, load_init_configs, \
    save_init_configs, source_candidate_pool


def _fail(exc: Exception) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    click.echo(json.dumps(payload), err=True)
    sys.exit(1)


@click.group()
def main():
    """Transfer-learning Bayesian optimization toolkit."""


@main.command("meta-train")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--iters", default=10_000, show_default=True)
@click.option("--batch-size", default=50, show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--hidden", default="128,128", show_default=True)
@click.option("--kernel", default="rbf", type=click.Choice(["rbf", "matern52", "spectral"]))
@click.option("--no-augmentation", is_flag=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def meta_train_cmd(dataset_path, iters, batch_size, lr, hidden, kernel,
                   no_augmentation, seed, out_path):
    """Meta-train a deep-kernel surrogate on a dataset directory."""
    try:
        dataset = load_metadata(dataset_path)
        config = TrainConfig(
            outer_iterations=iters, batch_size=batch_size, lr_theta=lr, lr_w=lr,
            seed=seed, augmentation=not no_augmentation,
            hidden=tuple(int(h) for h in hidden.split(",")), base_kernel=kernel,
        )
        checkpoint = meta_train(dataset, config)
        save_checkpoint(checkpoint, out_path)
        click.echo(f"wrote checkpoint to {out_path}")
    except Exception as e:
        _fail(e)


@main.command("warmstart")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--set-size", default=5, show_default=True)
@click.option("--steps", default=100_000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def warmstart_cmd(dataset_path, ckpt_path, set_size, steps, seed, out_path):
    """Evolve an initialization set over the dataset's tasks."""
    try:
        dataset = load_metadata(dataset_path)
        checkpoint = load_checkpoint(
            ckpt_path, expected_space_fingerprint=dataset.space.fingerprint())
        candidates = source_candidate_pool(dataset.tasks)
        matrix = build_response_matrix(checkpoint, dataset.tasks, candidates,
                                       dataset.space)
        best, trace = evolve(matrix, EaConfig(set_size=set_size, steps=steps, seed=seed))
        save_init_configs(best, out_path)
        click.echo(f"final set loss {trace[-1]:.6g}; wrote {out_path}")
    except Exception as e:
        _fail(e)


@main.command("run")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--task", "task_id", required=True)
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True))
@click.option("--init", "init_path", type=click.Path(exists=True),
              help="JSON list of initial configs (e.g. warmstart output).")
@click.option("--budget", default=100, show_default=True)
@click.option("--fine-tune-steps", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def run_cmd(dataset_path, task_id, ckpt_path, init_path, budget,
            fine_tune_steps, seed, out_path):
    """Run one BO search on a stored task table."""
    try:
        dataset = load_metadata(dataset_path)
        task = dataset.task_by_id(task_id)
        checkpoint = None
        if ckpt_path:
            checkpoint = load_checkpoint(
                ckpt_path, expected_space_fingerprint=dataset.space.fingerprint())
        if init_path:
            init = load_init_configs(init_path)
        else:
            rng = np.random.default_rng(seed)
            idx = rng.choice(len(task.records), size=min(5, budget), replace=False)
            init = [task.configs[int(i)] for i in idx]
        config = BoConfig(budget=min(budget, len(task.records)), init_configs=init,
                          fine_tune_steps=fine_tune_steps, seed=seed)
        history = run_bo(checkpoint, tabular_oracle(task, dataset.space),
                         dataset.space, config, task=task)
        history.save_csv(out_path)
        click.echo(f"incumbent {history.incumbent:.6g} after "
                   f"{len(history.trials)} trials; wrote {out_path}")
    except Exception as e:
        _fail(e)


@main.command("benchmark")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", "seed_override", type=int, default=None,
              help="Override the config file's base_seed.")
def benchmark_cmd(config_path, out_dir, seed_override):
    """Run a full benchmark described by a JSON spec file."""
    try:
        with open(config_path) as f:
            raw = json.load(f)
        if seed_override is not None:
            raw["base_seed"] = seed_override
        train = TrainConfig(**raw.pop("train", {}))
        ea = EaConfig(**raw.pop("ea", {}))
        spec = BenchmarkSpec(train=train, ea=ea, **raw)
        report = run_benchmark(spec, out_dir=out_dir)
        for method, trial, mean, std, n in report.aggregate():
            click.echo(f"{method:8s} trial {trial:4d}: "
                       f"regret {mean:.4f} +- {std:.4f} (n={n})")
        if report.failures:
            click.echo(f"{len(report.failures)} failed runs; see report", err=True)
    except Exception as e:
        _fail(e)


@main.command("sine-demo")
@click.option("--tasks", "n_tasks", default=50, show_default=True)
@click.option("--targets", default=5, show_default=True)
@click.option("--iters", default=8000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def sine_demo_cmd(n_tasks, targets, iters, seed, out_dir):
    """Meta-train on sine waves and trace few-shot BO on fresh targets."""
    try:
        result = sine_demo(n_source_tasks=n_tasks, seed=seed, n_targets=targets,
                           outer_iterations=iters, out_dir=out_dir)
        for a, r in zip(result.amplitudes, result.simple_regrets):
            click.echo(f"amplitude {a:.3f}: simple regret {r:.4f}")
    except Exception as e:
        _fail(e)


@main.command("inspect-ckpt")
@click.argument("path", type=click.Path(exists=True))
def inspect_ckpt_cmd(path):
    """Print checkpoint metadata and parameter shapes."""
    try:
        ckpt = load_checkpoint(path)
        info = {
            "format": ckpt.format,
            "space_fingerprint": ckpt.space_fingerprint,
            "dataset_fingerprint": ckpt.dataset_fingerprint,
            "train_config": dataclasses.asdict(ckpt.train_config),
            "loss_trace_len": len(ckpt.loss_trace),
            "final_loss": ckpt.loss_trace[-1] if ckpt.loss_trace else None,
            "parameters": {k: list(v.shape)
                           for k, v in ckpt.surrogate.to_param_dict().items()},
        }
        click.echo(json.dumps(info, indent=2, default=str))
    except Exception as e:
        _fail(e)


if __name__ == "__main__":
    main()
