"""Hyperparameter search spaces: validation, encoding, and sampling.

A space is an ordered list of parameter specs. Continuous parameters encode
to a single [0,1] feature (linear or log2 scale), categoricals to a one-hot
block. Conditional parameters get an extra activity flag so the encoded
dimension is fixed regardless of which branch is active.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

SPACE_FORMAT_VERSION = 1


class SpaceError(ValueError):
    """Malformed space descriptor or invalid config where validity is required."""


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str  # "continuous" | "categorical"
    bounds: tuple[float, float] | None = None
    scale: str = "linear"  # "linear" | "log2"
    choices: tuple[str, ...] | None = None
    condition: tuple[str, str] | None = None  # (parent name, required parent value)

    def __post_init__(self):
        if self.kind == "continuous":
            if self.bounds is None:
                raise SpaceError(f"{self.name}: continuous parameter needs bounds")
            low, high = self.bounds
            if not low < high:
                raise SpaceError(f"{self.name}: bounds must satisfy low < high")
            if self.scale == "log2" and low <= 0:
                raise SpaceError(f"{self.name}: log2 scale requires low > 0")
            if self.scale not in ("linear", "log2"):
                raise SpaceError(f"{self.name}: unknown scale {self.scale!r}")
        elif self.kind == "categorical":
            if not self.choices or len(set(self.choices)) < 2:
                raise SpaceError(f"{self.name}: categorical needs >= 2 distinct choices")
        else:
            raise SpaceError(f"{self.name}: unknown kind {self.kind!r}")

    @property
    def width(self) -> int:
        """Encoded width excluding the activity flag."""
        if self.kind == "continuous":
            return 1
        return len(self.choices)

    def to_unit(self, value: float) -> float:
        low, high = self.bounds
        if self.scale == "log2":
            return (math.log2(value) - math.log2(low)) / (math.log2(high) - math.log2(low))
        return (value - low) / (high - low)

    def from_unit(self, z: float) -> float:
        low, high = self.bounds
        if self.scale == "log2":
            return 2.0 ** (math.log2(low) + z * (math.log2(high) - math.log2(low)))
        return low + z * (high - low)


@dataclass(frozen=True)
class SearchSpace:
    params: tuple[ParamSpec, ...]
    # derived lookups, not part of the descriptor
    _by_name: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise SpaceError("duplicate parameter names")
        by_name = {}
        for p in self.params:
            if p.condition is not None:
                parent, value = p.condition
                if parent not in by_name:
                    raise SpaceError(f"{p.name}: condition parent {parent!r} not declared earlier")
                parent_spec = by_name[parent]
                if parent_spec.kind != "categorical":
                    raise SpaceError(f"{p.name}: condition parent must be categorical")
                if value not in parent_spec.choices:
                    raise SpaceError(f"{p.name}: condition value {value!r} not a parent choice")
            by_name[p.name] = p
        object.__setattr__(self, "_by_name", by_name)

    def __getitem__(self, name: str) -> ParamSpec:
        return self._by_name[name]

    @property
    def encoded_dim(self) -> int:
        return sum(p.width + (1 if p.condition is not None else 0) for p in self.params)

    def is_active(self, spec: ParamSpec, values: Mapping[str, object]) -> bool:
        if spec.condition is None:
            return True
        parent, required = spec.condition
        return values.get(parent) == required

    def fingerprint(self) -> str:
        import hashlib

        return hashlib.sha256(
            json.dumps(space_to_dict(self), sort_keys=True).encode()
        ).hexdigest()


@dataclass(frozen=True)
class Config:
    """One point in a search space; only active parameters carry values."""

    values: Mapping[str, object]

    def __post_init__(self):
        object.__setattr__(self, "values", dict(self.values))

    def __getitem__(self, name):
        return self.values[name]

    def __contains__(self, name):
        return name in self.values

    def __eq__(self, other):
        return isinstance(other, Config) and self.values == other.values

    def __hash__(self):
        return hash(tuple(sorted(self.values.items())))

    def to_json(self) -> str:
        return json.dumps(self.values, sort_keys=True)

    @staticmethod
    def from_json(s: str) -> "Config":
        return Config(json.loads(s))


def validate(config: Config, space: SearchSpace) -> list[str]:
    """Return every invariant violation; empty list means the config is valid."""
    violations = []
    known = {p.name for p in space.params}
    for name in config.values:
        if name not in known:
            violations.append(f"unknown parameter {name!r}")
    for spec in space.params:
        active = space.is_active(spec, config.values)
        present = spec.name in config.values
        if active and not present:
            violations.append(f"{spec.name} missing (active)")
            continue
        if not active:
            if present:
                violations.append(f"{spec.name} inactive but present")
            continue
        value = config.values[spec.name]
        if spec.kind == "continuous":
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                violations.append(f"{spec.name} not a number")
            else:
                low, high = spec.bounds
                if not (low <= float(value) <= high):
                    violations.append(f"{spec.name} out of [{low}, {high}]")
        else:
            if value not in spec.choices:
                violations.append(f"{spec.name} not one of {spec.choices}")
    return violations


def encode(config: Config, space: SearchSpace) -> np.ndarray:
    """Map a valid config to its fixed-length feature vector in [0,1]^d."""
    violations = validate(config, space)
    if violations:
        raise SpaceError(f"invalid config: {violations}")
    out = np.zeros(space.encoded_dim)
    i = 0
    for spec in space.params:
        active = space.is_active(spec, config.values)
        if spec.kind == "continuous":
            if active:
                out[i] = spec.to_unit(float(config.values[spec.name]))
            i += 1
        else:
            if active:
                out[i + spec.choices.index(config.values[spec.name])] = 1.0
            i += spec.width
        if spec.condition is not None:
            out[i] = 1.0 if active else 0.0
            i += 1
    return out


def decode(vector: np.ndarray, space: SearchSpace) -> Config:
    """Inverse of `encode` (one-hot blocks read by argmax)."""
    if len(vector) != space.encoded_dim:
        raise SpaceError("encoded vector has wrong length")
    values = {}
    i = 0
    for spec in space.params:
        block = vector[i : i + spec.width]
        i += spec.width
        active = True
        if spec.condition is not None:
            active = vector[i] > 0.5
            i += 1
        if not active:
            continue
        if spec.kind == "continuous":
            values[spec.name] = spec.from_unit(float(block[0]))
        else:
            values[spec.name] = spec.choices[int(np.argmax(block))]
    return Config(values)


def sample_uniform(space: SearchSpace, rng: np.random.Generator) -> Config:
    """Uniform sample in each parameter's own scale; conditionals only when active."""
    values = {}
    for spec in space.params:
        if not space.is_active(spec, values):
            continue
        if spec.kind == "continuous":
            values[spec.name] = spec.from_unit(float(rng.uniform()))
        else:
            values[spec.name] = spec.choices[int(rng.integers(len(spec.choices)))]
    return Config(values)


def lhs_sample(space: SearchSpace, n: int, rng: np.random.Generator) -> list[Config]:
    """Latin hypercube design: one point per stratum in every continuous dimension."""
    if n < 1:
        raise SpaceError("n must be >= 1")
    unit = {}
    for spec in space.params:
        if spec.kind == "continuous":
            strata = (rng.permutation(n) + rng.uniform(size=n)) / n
            unit[spec.name] = strata
    configs = []
    for j in range(n):
        values = {}
        for spec in space.params:
            if not space.is_active(spec, values):
                continue
            if spec.kind == "continuous":
                values[spec.name] = spec.from_unit(float(unit[spec.name][j]))
            else:
                values[spec.name] = spec.choices[int(rng.integers(len(spec.choices)))]
        configs.append(Config(values))
    return configs


def space_to_dict(space: SearchSpace) -> dict:
    params = []
    for p in space.params:
        d = {"name": p.name, "kind": p.kind}
        if p.kind == "continuous":
            d["bounds"] = list(p.bounds)
            d["scale"] = p.scale
        else:
            d["choices"] = list(p.choices)
        if p.condition is not None:
            d["condition"] = list(p.condition)
        params.append(d)
    return {"format": SPACE_FORMAT_VERSION, "params": params}


def space_from_dict(data: dict) -> SearchSpace:
    if data.get("format") != SPACE_FORMAT_VERSION:
        raise SpaceError(f"unsupported space format: {data.get('format')!r}")
    specs = []
    for d in data["params"]:
        specs.append(
            ParamSpec(
                name=d["name"],
                kind=d["kind"],
                bounds=tuple(d["bounds"]) if "bounds" in d else None,
                scale=d.get("scale", "linear"),
                choices=tuple(d["choices"]) if "choices" in d else None,
                condition=tuple(d["condition"]) if d.get("condition") else None,
            )
        )
    return SearchSpace(tuple(specs))


def load_space(path: str | Path) -> SearchSpace:
    with open(path) as f:
        return space_from_dict(json.load(f))


def save_space(space: SearchSpace, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(space_to_dict(space), f, indent=2)


def builtin_space(name: str) -> SearchSpace:
    """Load one of the shipped space descriptors (glmnet, svm, adaboost)."""
    here = Path(__file__).parent / "spaces" / f"{name}.json"
    if not here.exists():
        raise SpaceError(f"no builtin space named {name!r}")
    return load_space(here)
