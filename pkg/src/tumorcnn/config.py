"""Experiment configuration stored as a flat INI file."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .cv import STRATEGIES
from .errors import ContractError
from .nn import DEFAULT_SLOPE

SECTION = "experiment"


@dataclass
class ExperimentConfig:
    data: str = ""
    out: str = "runs/experiment"
    folds: int = 10
    seed: int = 0
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.001
    dropout: float = 0.5
    leaky_slope: float = DEFAULT_SLOPE
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.004
    augment: bool = True
    strategy: str = "stratified"
    precision: str = "f32"
    classes: int = 4
    subsample: int = 0
    max_folds: int = 0

    def validate(self) -> "ExperimentConfig":
        checks = [
            (self.folds >= 2, "folds must be >= 2"),
            (self.seed >= 0, "seed must be non-negative"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.lr >= 0, "lr must be >= 0"),
            (0 <= self.dropout < 1, "dropout must lie in [0, 1)"),
            (self.leaky_slope > 0, "leaky_slope must be positive"),
            (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "betas must lie in [0, 1)"),
            (self.eps > 0, "eps must be positive"),
            (self.weight_decay >= 0, "weight_decay must be >= 0"),
            (self.strategy in STRATEGIES, f"strategy must be one of {STRATEGIES}"),
            (self.precision in ("f32", "f64-check"), "precision must be f32 or f64-check"),
            (self.classes >= 2, "classes must be >= 2"),
            (self.subsample >= 0, "subsample must be >= 0"),
            (0 <= self.max_folds <= self.folds, "max_folds must lie in [0, folds]"),
        ]
        for ok, message in checks:
            if not ok:
                raise ContractError(f"invalid config: {message}")
        return self

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        parser[SECTION] = {f.name: _format(getattr(self, f.name)) for f in fields(self)}
        lines = [f"[{SECTION}]"]
        lines += [f"{k} = {v}" for k, v in parser[SECTION].items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        parser.read_string(text)
        if SECTION not in parser:
            raise ContractError(f"config has no [{SECTION}] section")
        return cls().updated(dict(parser[SECTION]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ini())

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_ini(Path(path).read_text())

    def updated(self, values: dict[str, object]) -> "ExperimentConfig":
        """Copy with ``values`` (strings or typed) parsed into the declared field types."""
        types = {f.name: f.type for f in fields(self)}
        changes = {}
        for key, raw in values.items():
            if raw is None:
                continue
            if key not in types:
                raise ContractError(f"unknown config key {key!r}")
            changes[key] = _parse(types[key], raw, key)
        return dataclasses.replace(self, **changes)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(kind: str, raw, key: str):
    if not isinstance(raw, str):
        return raw
    try:
        if kind == "bool":
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ContractError(f"config key {key!r}: cannot parse {raw!r} as {kind}") from None


def load_config(path: Optional[str | Path], overrides: dict[str, object]) -> ExperimentConfig:
    cfg = ExperimentConfig.load(path) if path else ExperimentConfig()
    return cfg.updated(overrides).validate()
