"""Run configuration: a flat ``key = value`` text format with a typed schema.

Lines are ``key = value``; ``#`` starts a comment. Lists are comma
separated, ``none`` clears optional values and booleans accept
true/false/yes/no/1/0. Unknown keys and malformed values are rejected
with the offending key named. See :data:`SCHEMA_HELP` for every key.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .batching import BatchPolicy
from .retrain import RetrainConfig
from .search import CycleSchedule, ScheduleError, SearchConfig
from .space import PRESETS, SpaceConstraints, preset

OUTPUT_ROOT_ENV = "MORPHNAS_OUTPUT_ROOT"
PROFILES = ("desk", "tiny")
CONSTRAINT_KEYS = ("kernel_min", "kernel_max", "dilation_min", "dilation_max", "max_expansion_depth",
                   "max_expansion_width", "morph_step_budget")


class ConfigError(ValueError):
    """Invalid configuration; the message names the field."""


def _table(name: str) -> list:
    return list(CycleSchedule.default().rows()[name])


@dataclass
class RunConfig:
    profile: str = "desk"
    seed: int = 0
    output_dir: Optional[str] = None
    # search space
    preset: str = "DL"
    kernel_step: str = "adjacent"
    kernel_min: Optional[int] = None
    kernel_max: Optional[int] = None
    dilation_min: Optional[int] = None
    dilation_max: Optional[int] = None
    max_expansion_depth: Optional[int] = None
    max_expansion_width: Optional[int] = None
    morph_step_budget: Optional[int] = None
    # cycle schedule
    epochs: list = field(default_factory=lambda: _table("epochs"))
    grace_epochs: list = field(default_factory=lambda: _table("grace_epochs"))
    morphisms: list = field(default_factory=lambda: _table("morphisms"))
    candidates: list = field(default_factory=lambda: _table("candidates"))
    retries: int = 25
    # proxy network
    nodes: int = 4
    cells: int = 8
    init_channels: int = 16
    # optimizers
    lr_max: float = 0.025
    lr_min: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 3e-4
    alpha_lr: float = 6e-4
    alpha_beta1: float = 0.5
    alpha_beta2: float = 0.999
    alpha_weight_decay: float = 1e-3
    # batch governor
    b_min: int = 16
    b_mult: int = 16
    b_max: int = 64
    probe_interval: int = 5
    capacity_units: float = 2.5e8
    threshold_fraction: float = 0.95
    # data
    dataset: str = "synthetic"
    data_path: Optional[str] = None
    synthetic_classes: int = 4
    synthetic_samples: int = 1024
    image_size: int = 16
    test_fraction: float = 0.25
    search_samples: int = 0  # 0: the whole training split
    augment: bool = True
    # retraining
    retrain_cells: int = 8
    retrain_channels: int = 16
    retrain_epochs: int = 20
    retrain_batch_size: int = 32
    retrain_lr: float = 0.025
    aux_weight: float = 0.4
    drop_path_max: float = 0.3
    cutout_size: Optional[int] = None

    def __post_init__(self):
        self.validate()

    # ------------------------------------------------------------ validation

    def validate(self) -> None:
        if self.profile not in PROFILES:
            raise ConfigError(f"profile: expected one of {PROFILES}, got {self.profile!r}")
        if self.preset.upper() not in PRESETS:
            raise ConfigError(f"preset: unknown preset {self.preset!r} (choose from {', '.join(PRESETS)})")
        if self.kernel_step not in ("adjacent", "jump"):
            raise ConfigError("kernel_step: expected 'adjacent' or 'jump'")
        if self.dataset not in ("synthetic", "cifar10"):
            raise ConfigError("dataset: expected 'synthetic' or 'cifar10'")
        if self.dataset == "cifar10" and not self.data_path:
            raise ConfigError("data_path: required when dataset = cifar10")
        positive = ("nodes", "cells", "init_channels", "synthetic_samples", "image_size", "retrain_cells",
                    "retrain_channels", "retrain_epochs", "retrain_batch_size", "retries")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be positive")
        if self.cells < 3 or self.retrain_cells < 3:
            raise ConfigError("cells: a network needs at least 3 cells")
        if self.synthetic_classes < 2:
            raise ConfigError("synthetic_classes: need at least 2")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction: must lie in (0, 1)")
        if self.search_samples < 0:
            raise ConfigError("search_samples: must be non-negative")
        if not 0 <= self.drop_path_max < 1:
            raise ConfigError("drop_path_max: must lie in [0, 1)")
        for name in ("lr_max", "lr_min", "alpha_lr", "retrain_lr", "capacity_units"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name}: must be positive")
        try:
            self.schedule()
        except ScheduleError as exc:
            raise ConfigError(f"epochs/grace_epochs/morphisms/candidates: {exc}") from exc
        try:
            self.constraints()
        except ValueError as exc:
            raise ConfigError(f"constraints: {exc}") from exc
        try:
            self.policy()
        except ValueError as exc:
            raise ConfigError(f"b_min/b_mult/b_max/probe_interval: {exc}") from exc

    # ------------------------------------------------------------ views

    def constraints(self) -> SpaceConstraints:
        base = preset(self.preset)
        overrides = {k: getattr(self, k) for k in CONSTRAINT_KEYS if getattr(self, k) is not None}
        return replace(base, kernel_step=self.kernel_step, **overrides)

    def schedule(self) -> CycleSchedule:
        return CycleSchedule.from_lists(self.epochs, self.grace_epochs, self.morphisms, self.candidates)

    def policy(self) -> BatchPolicy:
        return BatchPolicy(self.b_min, self.b_mult, self.b_max, self.probe_interval)

    def search_config(self) -> SearchConfig:
        return SearchConfig(
            constraints=self.constraints(), schedule=self.schedule(), nodes=self.nodes, cells=self.cells,
            init_channels=self.init_channels, lr_max=self.lr_max, lr_min=self.lr_min, momentum=self.momentum,
            weight_decay=self.weight_decay, alpha_lr=self.alpha_lr, alpha_betas=(self.alpha_beta1, self.alpha_beta2),
            alpha_weight_decay=self.alpha_weight_decay, policy=self.policy(), capacity_units=self.capacity_units,
            threshold_fraction=self.threshold_fraction, augment=self.augment, retries=self.retries, seed=self.seed)

    def retrain_config(self) -> RetrainConfig:
        return RetrainConfig(self.retrain_cells, self.retrain_channels, self.retrain_epochs,
                             self.retrain_batch_size, self.retrain_lr, 0.0, self.momentum, self.weight_decay,
                             self.aux_weight, self.drop_path_max, self.cutout_size, self.seed)

    def run_dir(self, command: str) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
        return root / f"{command}-{self.profile}-seed{self.seed}"

    # ------------------------------------------------------------ text form

    def to_text(self) -> str:
        lines = ["# morphnas run configuration"]
        for f in fields(self):
            lines.append(f"{f.name} = {_render(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


TINY_PROFILE = {
    "cells": "4", "init_channels": "8", "epochs": "3,3,2,2,2,2,2,2,2", "grace_epochs": "1,1,1,1,1,1,1,1,1",
    "capacity_units": "1.6e8", "synthetic_samples": "768", "test_fraction": "0.5", "search_samples": "256",
    "retrain_cells": "4", "retrain_channels": "8", "retrain_epochs": "10", "retrain_lr": "0.1",
}

SCHEMA_HELP = {
    "profile": "desk (default sizes) or tiny (fast smoke-scale sizes applied before file and flags)",
    "preset": "search-space constraint preset: DL, DR or UR",
    "kernel_step": "kernel morph semantics: adjacent (k +/- 2) or jump (next legal kernel)",
    "epochs": "per-cycle epochs, comma separated", "grace_epochs": "per-cycle frozen-alpha epochs",
    "morphisms": "per-cycle children per edge", "candidates": "per-cycle pool size after replacement",
    "capacity_units": "memory-model capacity in float64 elements",
    "dataset": "synthetic or cifar10 (data_path: directory with data_batch_*.bin and test_batch.bin)",
    "search_samples": "training images used by the search (0 = all)",
}


def _render(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(name: str, text: str, annotation: str):
    text = text.strip()
    optional = annotation.startswith("Optional[")
    base = annotation[9:-1] if optional else annotation
    if optional and text.lower() in ("none", ""):
        return None
    try:
        if base == "bool":
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if base == "int":
            return int(text)
        if base == "float":
            return float(text)
        if base == "list":
            return [int(v) for v in text.split(",") if v.strip()]
        return text
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r} as {base}") from None


_FIELDS = {f.name: f.type for f in fields(RunConfig)}


def parse_assignments(pairs: dict[str, str]) -> dict:
    out = {}
    for key, value in pairs.items():
        if key not in _FIELDS:
            raise ConfigError(f"{key}: unknown configuration key")
        out[key] = _parse(key, value, _FIELDS[key])
    return out


def read_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    pairs = {}
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        pairs[key] = value
    return pairs


def build_config(file: Optional[str] = None, overrides: Optional[dict[str, str]] = None) -> RunConfig:
    """Profile defaults, then the file, then explicit overrides."""
    pairs: dict[str, str] = {}
    if file is not None:
        path = Path(file)
        if not path.is_file():
            raise ConfigError(f"config: no such file {file}")
        pairs.update(read_config_text(path.read_text(), str(path)))
    pairs.update(overrides or {})
    profile = pairs.get("profile", "desk").strip()
    if profile not in PROFILES:
        raise ConfigError(f"profile: expected one of {PROFILES}, got {profile!r}")
    merged = dict(TINY_PROFILE) if profile == "tiny" else {}
    merged.update(pairs)
    return RunConfig(**parse_assignments(merged))


def load_config(path) -> RunConfig:
    return build_config(str(path))
