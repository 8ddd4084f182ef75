"""Experiment configuration: dataclasses plus YAML/JSON (de)serialization.

A config file is a mapping with the top-level keys of ``ExperimentConfig``;
``environment``, ``schedule`` and ``learner`` are nested mappings.  Unknown
keys and bad values are reported per field (``schedule.regime: ...``).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .core import ConfigurationError
from .environment import EnvironmentConfig
from .learner import REGIMES
from .losses import SurrogateKind

POLICIES = ("learner", "confidence_baseline")


@dataclass
class ScheduleConfig:
    regime: str = "custom"
    eta0: float = 0.07
    eta_power: float = 0.5
    gamma0: float = 10.0
    gamma_power: float = 0.5
    gamma_cap: float = 0.5
    base_lr: float = 0.1
    eps: float = 1e-8

    def validate(self) -> list[str]:
        errs = []
        if self.regime not in REGIMES:
            errs.append(f"regime: must be one of {REGIMES}, got {self.regime!r}")
        for name in ("eta0", "gamma0", "base_lr", "eps"):
            if not getattr(self, name) > 0:
                errs.append(f"{name}: must be positive")
        if not 0.0 <= self.gamma_cap <= 1.0:
            errs.append("gamma_cap: must lie in [0, 1]")
        return errs


@dataclass
class LearnerConfig:
    surrogate: str = "constrained_hinge"
    feedback: str = "bandit"
    bound: Optional[float] = None
    project_ball: bool = True

    def validate(self) -> list[str]:
        errs = []
        try:
            SurrogateKind.parse(self.surrogate)
        except ValueError:
            errs.append(f"surrogate: must be one of {[k.value for k in SurrogateKind]}, got {self.surrogate!r}")
        if self.feedback not in ("bandit", "full"):
            errs.append(f"feedback: must be 'bandit' or 'full', got {self.feedback!r}")
        if self.bound is not None and not self.bound > 0:
            errs.append("bound: must be positive")
        return errs


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    horizon: int = 10000
    seeds: list = field(default_factory=lambda: [0])
    policy: str = "learner"
    baseline_threshold: float = 0.5
    window: Optional[int] = None
    comparator: bool = False
    comparator_epochs: int = 300
    output_dir: str = "runs"
    workers: int = 1
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)

    @property
    def effective_window(self) -> int:
        return self.window or max(1, self.horizon // 200)

    def validate(self) -> list[str]:
        errs = []
        if not isinstance(self.horizon, int) or self.horizon < 1:
            errs.append(f"horizon: must be a positive integer, got {self.horizon!r}")
        if not self.seeds or not all(isinstance(s, int) and s >= 0 for s in self.seeds):
            errs.append(f"seeds: must be a non-empty list of non-negative integers, got {self.seeds!r}")
        elif len(set(self.seeds)) != len(self.seeds):
            errs.append("seeds: duplicate seeds")
        if self.policy not in POLICIES:
            errs.append(f"policy: must be one of {POLICIES}, got {self.policy!r}")
        if not 0.0 <= self.baseline_threshold <= 1.0:
            errs.append("baseline_threshold: must lie in [0, 1]")
        if self.window is not None and (not isinstance(self.window, int) or self.window < 1):
            errs.append(f"window: must be a positive integer, got {self.window!r}")
        if self.comparator_epochs < 1:
            errs.append("comparator_epochs: must be >= 1")
        if self.workers < 1:
            errs.append("workers: must be >= 1")
        errs += [f"environment.{e}" for e in self.environment.validate()]
        errs += [f"schedule.{e}" for e in self.schedule.validate()]
        errs += [f"learner.{e}" for e in self.learner.validate()]
        return errs

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


_NESTED = {"environment": EnvironmentConfig, "schedule": ScheduleConfig, "learner": LearnerConfig}


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _type_problem(default, value) -> str | None:
    if value is None:
        return None
    if isinstance(default, bool):
        return None if isinstance(value, bool) else f"expected true/false, got {value!r}"
    if isinstance(default, str):
        return None if isinstance(value, str) else f"expected a string, got {value!r}"
    if isinstance(default, int):
        return None if isinstance(value, int) and not isinstance(value, bool) else f"expected an integer, got {value!r}"
    if isinstance(default, float):
        ok = _is_number(value) or (isinstance(value, list) and all(_is_number(v) for v in value))
        return None if ok else f"expected a number, got {value!r}"
    if isinstance(default, list):
        return None if isinstance(value, list) else f"expected a list, got {value!r}"
    return None


def _build(cls, raw, prefix: str, errs: list[str]):
    if not isinstance(raw, dict):
        errs.append(f"{prefix.rstrip('.') or 'config'}: expected a mapping, got {type(raw).__name__}")
        return cls()
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            errs.append(f"{prefix}{key}: unknown key")
            continue
        if key in _NESTED and cls is ExperimentConfig:
            kwargs[key] = _build(_NESTED[key], value, f"{key}.", errs)
            continue
        problem = _type_problem(getattr(cls(), key), value)
        if problem:
            errs.append(f"{prefix}{key}: {problem}")
            continue
        if isinstance(getattr(cls(), key), float) and isinstance(value, int):
            value = float(value)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(raw: dict) -> ExperimentConfig:
    errs: list[str] = []
    cfg = _build(ExperimentConfig, raw, "", errs)
    if not errs:
        errs = cfg.validate()
    if errs:
        raise ConfigurationError("invalid config:\n  " + "\n  ".join(errs))
    return cfg


def parse_config(text: str, fmt: str = "yaml") -> ExperimentConfig:
    try:
        raw = json.loads(text) if fmt == "json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot parse config: {exc}") from None
    return config_from_dict(raw or {})


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    fmt = "json" if path.suffix.lower() == ".json" else "yaml"
    return parse_config(path.read_text(), fmt)


def save_config(cfg: ExperimentConfig, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".json":
        path.write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    else:
        path.write_text(cfg.dumps())
