"""Run configuration: flat `key = value` text with `#` comments.

Unknown keys are hard errors (typo safety), values are validated on load, and
serialization is canonical so the effective config can be hashed and
round-tripped.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields, replace

from .errors import ConfigError

VARIANTS = ("full", "no-proj", "fps", "no-sample")


@dataclass(frozen=True)
class RunConfig:
    # dataset generation
    dataset_dir: str = "dataset"
    num_shapes: int = 20
    views_per_shape: int = 2
    grasps_per_shape: int = 60
    test_shapes: int = 6
    cloud_points: int = 512
    eps_vis: float = 0.005
    # gripper
    gripper_opening: float = 0.085
    finger_length: float = 0.04
    friction: float = 0.5
    ground_margin: float = 0.005
    # model
    num_samples: int = 64          # M
    neighborhood_k: int = 10       # k, soft-projection neighborhood
    neighborhood_nn: int = 100     # nn, feature-grouping neighborhood
    alpha: float = 10.0
    lam: float = 0.1
    t_init: float = 1.0
    stage1_hidden: tuple[int, ...] = (32,)
    feature_global: int = 64
    stage2_hidden: tuple[int, ...] = (64,)
    feature_point: int = 32
    generator_hidden: tuple[int, ...] = (64, 128, 256)
    heads_hidden: tuple[int, ...] = (64, 64)
    # optimizer
    lr: float = 0.05
    lr_decay: float = 0.01   # final lr as a fraction of lr (exponential
                             # schedule); the norm-style loss terms need a
                             # decaying step to settle
    momentum: float = 0.9
    steps: int = 2000
    grad_clip: float = 5.0   # global gradient-norm ceiling; tames the 1/t^2
                             # spikes of the annealed soft projection
    feature_gain: float = 8.0   # fixed gain on the gathered contact features
                                # (two ReLU stages leave them ~0.03 rms at init)
    # run
    seed: int = 0
    variant: str = "full"
    # evaluation
    k_list: tuple[int, ...] = (10, 30, 50, 100)
    tol_x: float = 0.025
    tol_theta_deg: float = 30.0

    @property
    def tol_theta(self) -> float:
        return math.radians(self.tol_theta_deg)

    def validate(self) -> "RunConfig":
        def positive(name):
            if getattr(self, name) <= 0:
                raise ConfigError(f"config field '{name}' must be positive, "
                                  f"got {getattr(self, name)}")
        for name in ("num_shapes", "views_per_shape", "grasps_per_shape",
                     "cloud_points", "gripper_opening", "finger_length",
                     "friction", "ground_margin", "num_samples",
                     "neighborhood_k", "neighborhood_nn", "alpha", "lam",
                     "t_init", "feature_global", "feature_point", "lr",
                     "eps_vis", "tol_x", "tol_theta_deg", "grad_clip",
                     "feature_gain"):
            positive(name)
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError(f"config field 'lr_decay' must be in (0, 1], "
                              f"got {self.lr_decay}")
        if self.steps < 0:
            raise ConfigError(f"config field 'steps' must be >= 0, got {self.steps}")
        if self.momentum < 0 or self.momentum >= 1:
            raise ConfigError(f"config field 'momentum' must be in [0, 1), "
                              f"got {self.momentum}")
        if self.test_shapes < 0 or self.test_shapes >= self.num_shapes:
            raise ConfigError("config field 'test_shapes' must be in "
                              f"[0, num_shapes), got {self.test_shapes}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"config field 'variant' must be one of "
                              f"{VARIANTS}, got {self.variant!r}")
        for name in ("stage1_hidden", "stage2_hidden", "generator_hidden",
                     "heads_hidden", "k_list"):
            vals = getattr(self, name)
            if not vals or any(v < 1 for v in vals):
                raise ConfigError(f"config field '{name}' needs positive "
                                  f"entries, got {vals}")
        return self


_INT_TUPLES = {"stage1_hidden", "stage2_hidden", "generator_hidden",
               "heads_hidden", "k_list"}


def _format_value(name: str, value) -> str:
    if name in _INT_TUPLES:
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def _parse_value(name: str, raw: str, kind: type):
    try:
        if name in _INT_TUPLES:
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config field '{name}': cannot parse {raw!r}") from exc


def serialize(cfg: RunConfig) -> str:
    lines = ["# deskgrasp effective configuration"]
    for f in fields(RunConfig):
        lines.append(f"{f.name} = {_format_value(f.name, getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def parse(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    defaults = RunConfig()
    known = {f.name: type(getattr(defaults, f.name)) for f in fields(RunConfig)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown config field '{key}'")
        updates[key] = _parse_value(key, raw, known[key])
    return replace(cfg, **updates).validate()


def load(path, overrides: dict | None = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        cfg = parse(fh.read())
    if overrides:
        cfg = replace(cfg, **overrides).validate()
    return cfg


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize(cfg).encode()).hexdigest()
