"""Experiment configuration files (YAML) with strict, line-anchored validation.

Top-level keys::

    seed, rounds, local_epochs, lr, batch_size, clip_norm, workers, average, eval_sets, out,
    scenario: {...}   # sstafed.synthdata.Scenario fields
    model: {...}      # sstafed.model.SstaConfig fields; frame_size and
                      # sequence_length default to the scenario's
    strategy: {...}   # sstafed.fl.AggregationStrategy fields
    sweep: {key: dotted.path, values: [...]}   # optional

Unknown keys anywhere are rejected with the offending line number.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import yaml

from .errors import ConfigError, SstaFedError
from .fl import EVAL_SETS, AggregationStrategy
from .model import SstaConfig
from .synthdata import Scenario

TOP_LEVEL = {
    "seed", "rounds", "local_epochs", "lr", "batch_size", "clip_norm", "workers", "average",
    "eval_sets", "out", "scenario", "model", "strategy", "sweep",
}
SECTIONS = {
    "scenario": set(Scenario.__dataclass_fields__),
    "model": set(SstaConfig.__dataclass_fields__),
    "strategy": set(AggregationStrategy.__dataclass_fields__),
    "sweep": {"key", "values"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    scenario: Scenario = field(default_factory=Scenario)
    model: SstaConfig = field(default_factory=SstaConfig)
    strategy: AggregationStrategy = field(default_factory=AggregationStrategy)
    rounds: int = 10
    local_epochs: int = 5
    lr: float = 0.003
    batch_size: int = 16
    clip_norm: Optional[float] = 50.0  # null disables clipping
    workers: int = 1
    average: str = "macro"
    eval_sets: tuple[str, ...] = EVAL_SETS
    out: Optional[str] = None

    def validate(self) -> "ExperimentConfig":
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.rounds < 0:
            raise ConfigError(f"rounds must be >= 0, got {self.rounds}")
        if self.local_epochs < 1:
            raise ConfigError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError(f"clip_norm must be positive or null, got {self.clip_norm}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.average not in ("macro", "weighted", "micro"):
            raise ConfigError(f"average must be 'macro', 'weighted' or 'micro', got {self.average!r}")
        bad = set(self.eval_sets) - set(EVAL_SETS)
        if bad:
            raise ConfigError(f"unknown eval_sets {sorted(bad)}")
        if self.model.frame_size != self.scenario.frame_size:
            raise ConfigError(f"model frame_size {self.model.frame_size} != scenario {self.scenario.frame_size}")
        if self.model.sequence_length != self.scenario.sequence_length:
            raise ConfigError("model and scenario sequence_length differ")
        if self.model.classes != 2:
            raise ConfigError("the synthetic scenario produces exactly two classes")
        return self

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "rounds": self.rounds,
            "local_epochs": self.local_epochs,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "clip_norm": self.clip_norm,
            "workers": self.workers,
            "average": self.average,
            "eval_sets": list(self.eval_sets),
            "out": self.out,
            "scenario": self.scenario.to_dict(),
            "model": self.model.to_dict(),
            "strategy": self.strategy.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict, lines: Optional[dict] = None) -> "ExperimentConfig":
        lines = lines or {}
        d = copy.deepcopy(d)
        kwargs: dict[str, Any] = {}
        scen = d.pop("scenario", {}) or {}
        model = d.pop("model", {}) or {}
        strat = d.pop("strategy", {}) or {}
        d.pop("sweep", None)
        with _anchored(lines.get(("scenario",))):
            kwargs["scenario"] = Scenario.from_dict(scen)
        model.setdefault("frame_size", list(kwargs["scenario"].frame_size))
        model.setdefault("sequence_length", kwargs["scenario"].sequence_length)
        with _anchored(lines.get(("model",))):
            kwargs["model"] = SstaConfig.from_dict(model)
        with _anchored(lines.get(("strategy",))):
            kwargs["strategy"] = AggregationStrategy.from_dict(strat)
        if "eval_sets" in d:
            d["eval_sets"] = tuple(d["eval_sets"])
        kwargs.update(d)
        try:
            return cls(**kwargs).validate()
        except (ConfigError, TypeError) as exc:
            raise ConfigError(str(exc), _guess_line(str(exc), lines)) from None


class _anchored:
    """Re-raise package errors from a section as ConfigError tagged with the section's line."""

    def __init__(self, line):
        self.line = line

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None:
            return False
        if isinstance(exc, ConfigError) and exc.line is not None:
            return False
        if isinstance(exc, (SstaFedError, TypeError, ValueError)):
            raise ConfigError(str(exc), self.line) from None
        return False


def _guess_line(message: str, lines: dict) -> Optional[int]:
    for path, line in lines.items():
        if len(path) == 1 and path[0] in message:
            return line
    return None


def _node_lines(node, prefix=()) -> dict:
    out = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = prefix + (k.value,)
            out[key] = k.start_mark.line + 1
            out.update(_node_lines(v, key))
    return out


def _check_keys(data: dict, lines: dict):
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of keys to values", 1)
    for key in data:
        if key not in TOP_LEVEL:
            raise ConfigError(f"unknown key {key!r}", lines.get((key,)))
    for section, allowed in SECTIONS.items():
        sub = data.get(section)
        if sub is None:
            continue
        if not isinstance(sub, dict):
            raise ConfigError(f"{section!r} must be a mapping", lines.get((section,)))
        for key in sub:
            if key not in allowed:
                raise ConfigError(f"unknown key {section}.{key}", lines.get((section, key)))


def parse_config_text(text: str) -> tuple[ExperimentConfig, Optional[dict]]:
    """Parse YAML text into (config, sweep spec or None)."""
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"YAML syntax error: {exc.problem}", line) from None
    if data is None:
        data = {}
    lines = _node_lines(node) if node is not None else {}
    _check_keys(data, lines)
    sweep = data.get("sweep")
    if sweep is not None:
        if set(sweep) != {"key", "values"} or not isinstance(sweep["values"], list) or not sweep["values"]:
            raise ConfigError("sweep needs 'key' and a non-empty 'values' list", lines.get(("sweep",)))
    cfg = ExperimentConfig.from_dict(data, lines)
    if sweep is not None:
        try:
            expand_sweep(cfg, sweep)
        except ConfigError as exc:
            raise ConfigError(str(exc), lines.get(("sweep", "key"))) from None
    return cfg, sweep


def load_config(path) -> tuple[ExperimentConfig, Optional[dict]]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text)


def override(cfg: ExperimentConfig, dotted: str, value) -> ExperimentConfig:
    """Copy of ``cfg`` with one (possibly nested) field replaced and re-validated."""
    parts = dotted.split(".")
    if len(parts) == 1:
        if parts[0] not in ExperimentConfig.__dataclass_fields__ or parts[0] in SECTIONS:
            raise ConfigError(f"cannot sweep over {dotted!r}")
        return replace(cfg, **{parts[0]: value}).validate()
    if len(parts) != 2 or parts[0] not in ("scenario", "model", "strategy") or parts[1] not in SECTIONS[parts[0]]:
        raise ConfigError(f"cannot sweep over {dotted!r}")
    d = cfg.to_dict()
    d[parts[0]][parts[1]] = value
    if parts[0] == "scenario" and parts[1] in ("frame_size", "sequence_length"):
        d["model"][parts[1]] = value
    return ExperimentConfig.from_dict(d)


def expand_sweep(cfg: ExperimentConfig, sweep: Optional[dict]) -> list[tuple[str, ExperimentConfig]]:
    """[(run name, config)] - a single unnamed run when there is no sweep."""
    if not sweep:
        return [("", cfg)]
    key = sweep["key"]
    leaf = key.split(".")[-1]
    return [(f"{leaf}={v}", override(cfg, key, v)) for v in sweep["values"]]


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)
