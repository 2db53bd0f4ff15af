"""Training configuration: defaults, flat-file parsing, and overrides.

Config files are flat `key = value` text (blank lines and `#` comments
ignored); command-line overrides take precedence. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


@dataclass
class TrainConfig:
    dim: int = 128              # embedding width
    batch_size: int = 128       # consecutive interactions per optimizer step
    learning_rate: float = 0.001
    weight_decay: float = 1e-5
    mc_samples: int = 64        # timestamps per inter-event interval
    negatives: int = 10
    n_layers: int = 2           # stacked snapshot aggregation layers
    heads: int = 8              # parallel attention heads over history
    n_snapshots: int = 128
    max_history: int = 20
    epochs: int = 20
    seed: int = 0
    bptt_depth: int = 8         # snapshot fusion backprop window
    precision: str = "float64"
    early_stop_patience: int = 0  # epochs without valid-MRR gain; 0 disables
    quad_points: int = 1024     # time-prediction grid points per mean interval
    survival_threshold: float = 1e-6
    horizon_cap: float = 50.0   # time-prediction cap, in mean intervals
    workers: int = 1

    def validate(self) -> None:
        positive = ["dim", "batch_size", "learning_rate", "mc_samples", "negatives",
                    "n_layers", "heads", "n_snapshots", "max_history", "quad_points",
                    "survival_threshold", "horizon_cap", "workers"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"config field {name} must be positive")
        for name in ["weight_decay", "epochs", "seed", "bptt_depth", "early_stop_patience"]:
            if getattr(self, name) < 0:
                raise ValueError(f"config field {name} must be non-negative")
        if self.mc_samples < 2:
            raise ValueError("mc_samples must be at least 2")
        if (2 * self.dim) % self.heads or self.dim % self.heads:
            raise ValueError(f"heads={self.heads} must divide dim={self.dim} and 2*dim")
        if self.precision not in ("float64", "float32"):
            raise ValueError(f"precision must be float64 or float32, got {self.precision!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def field_names(cls) -> list:
        return [f.name for f in dataclasses.fields(cls)]


def _coerce(name: str, raw: str, target_type):
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError:
        raise ValueError(f"config key {name}: cannot parse {raw!r} as {target_type.__name__}") from None


def config_from_pairs(pairs: dict, base: TrainConfig | None = None) -> TrainConfig:
    cfg = dataclasses.replace(base) if base else TrainConfig()
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    py_types = {"int": int, "float": float, "str": str}
    for key, raw in pairs.items():
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        target = py_types.get(types[key], str) if isinstance(types[key], str) else types[key]
        setattr(cfg, key, _coerce(key, str(raw), target))
    cfg.validate()
    return cfg


def parse_config_file(text: str) -> dict:
    pairs = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {line_no}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ValueError(f"config line {line_no}: empty key or value")
        pairs[key] = value
    return pairs


def load_config(path: str | None, overrides: dict | None = None) -> TrainConfig:
    pairs = {}
    if path is not None:
        with open(path) as fh:
            pairs.update(parse_config_file(fh.read()))
    if overrides:
        pairs.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_pairs(pairs)
