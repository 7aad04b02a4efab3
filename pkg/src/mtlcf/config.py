"""Experiment configuration: one JSON document holding everything a run needs.

Schema (every key optional; omitted keys take the defaults below)::

    {
      "model":    {"input_dim", "lstm_layers", "lstm_cells", "relu_units",
                   "vocab_size", "init_low", "init_high", "seed"},
      "domain0":  {"domain_id", "vocab_size", "raw_feature_dim", "frames_per_symbol",
                   "utterance_length", "prototype_shift", "noise_sigma", "seed",
                   "prototype_seed", "n_train", "n_dev", "n_test",
                   "left_context", "decimation"},
      "domain1":  same keys as domain0,
      "hyper":    {"alpha", "beta", "temperature", "batch_size", "reduction"},
      "schedule": {"learning_rate", "clip", "halve_threshold", "max_halvings",
                   "max_epochs", "adam_beta1", "adam_beta2", "adam_eps"},
      "method": "ft" | "rt" | "mtlcf" | "base",
      "seed": int,
      "output_dir": str,
      "data_dir": str or null,
      "base_checkpoint": str or null
    }

Unknown keys and badly typed values raise ``ConfigError`` naming the
dotted path of the offending field.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .data import DomainSpec
from .losses import HyperParams
from .model import ModelConfig
from .trainer import METHODS, Schedule

DEFAULT_NOISE = 1.0
DEFAULT_SHIFT = 12.0


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"config field '{field_name}': {message}")
        self.field = field_name


def _default_domain(domain_id: int) -> DomainSpec:
    return DomainSpec(
        domain_id=domain_id,
        noise_sigma=DEFAULT_NOISE,
        prototype_shift=DEFAULT_SHIFT if domain_id == 1 else 0.0,
    )


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    domain0: DomainSpec = field(default_factory=lambda: _default_domain(0))
    domain1: DomainSpec = field(default_factory=lambda: _default_domain(1))
    hyper: HyperParams = field(default_factory=HyperParams)
    schedule: Schedule = field(default_factory=Schedule)
    method: str = "mtlcf"
    seed: int = 0
    output_dir: str = "runs"
    data_dir: str | None = None
    base_checkpoint: str | None = None

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError("method", f"must be one of {list(METHODS)}, got {self.method!r}")
        for name, spec, want in (("domain0", self.domain0, 0), ("domain1", self.domain1, 1)):
            if spec.domain_id != want:
                raise ConfigError(f"{name}.domain_id", f"must be {want}")
            try:
                spec.validate()
            except ValueError as exc:
                raise ConfigError(_locate(name, DomainSpec, str(exc)), str(exc)) from exc
        d0, d1 = self.domain0, self.domain1
        for key in ("vocab_size", "raw_feature_dim", "left_context", "decimation"):
            if getattr(d0, key) != getattr(d1, key):
                raise ConfigError(f"domain1.{key}", f"must match domain0.{key}")
        if d0.vocab_size != self.model.vocab_size:
            raise ConfigError("model.vocab_size", f"must equal domain vocab_size {d0.vocab_size}")
        stacked = d0.raw_feature_dim * (d0.left_context + 1)
        if self.model.input_dim != stacked:
            raise ConfigError("model.input_dim", f"must equal raw_feature_dim * (left_context + 1) = {stacked}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed", "must be a non-negative integer")

    def to_dict(self) -> dict:
        return {
            "model": dataclasses.asdict(self.model),
            "domain0": _spec_dict(self.domain0),
            "domain1": _spec_dict(self.domain1),
            "hyper": dataclasses.asdict(self.hyper),
            "schedule": dataclasses.asdict(self.schedule),
            "method": self.method,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "data_dir": self.data_dir,
            "base_checkpoint": self.base_checkpoint,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def replace(self, **changes) -> "ExperimentConfig":
        out = dataclasses.replace(self, **changes)
        out.validate()
        return out


def _locate(section: str, cls, message: str) -> str:
    # dataclass validators report the problem without a path; attach the first field they mention
    names = sorted((f.name for f in dataclasses.fields(cls)), key=len, reverse=True)
    bad = next((n for n in names if n in message), None)
    return f"{section}.{bad}" if bad else section


def _spec_dict(spec: DomainSpec) -> dict:
    d = dataclasses.asdict(spec)
    d["frames_per_symbol"] = list(spec.frames_per_symbol)
    d["utterance_length"] = list(spec.utterance_length)
    return d


_SECTIONS = {"model": ModelConfig, "domain0": DomainSpec, "domain1": DomainSpec, "hyper": HyperParams, "schedule": Schedule}
_SCALARS = {"method": str, "seed": int, "output_dir": str, "data_dir": (str, type(None)), "base_checkpoint": (str, type(None))}


def _check_type(path: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and len(value) == len(default) and all(
            isinstance(v, int) and not isinstance(v, bool) for v in value
        )
        value = tuple(value) if ok else value
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(path, f"expected {type(default).__name__}, got {value!r}")
    return value


def _build_section(name: str, cls, raw: Any, base):
    if not isinstance(raw, dict):
        raise ConfigError(name, "must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown field")
        kwargs[key] = _check_type(f"{name}.{key}", value, getattr(base, key))
    try:
        return dataclasses.replace(base, **kwargs)
    except ValueError as exc:
        raise ConfigError(_locate(name, cls, str(exc)), str(exc)) from exc


def from_dict(raw: Any) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    base = ExperimentConfig()
    kwargs = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            kwargs[key] = _build_section(key, _SECTIONS[key], value, getattr(base, key))
        elif key in _SCALARS:
            if not isinstance(value, _SCALARS[key]) or isinstance(value, bool):
                raise ConfigError(key, f"unexpected value {value!r}")
            kwargs[key] = value
        else:
            raise ConfigError(key, "unknown field")
    cfg = ExperimentConfig(**kwargs)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read and validate a config file; a missing file raises ``FileNotFoundError``."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"not valid JSON ({exc})") from exc
    return from_dict(raw)
