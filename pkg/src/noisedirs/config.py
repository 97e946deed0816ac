"""Experiment configuration: strict parsing, canonical serialization, hashing.

Configs are nested key-value YAML. Unknown keys are rejected with the path to
the offending key; omitted keys take the declared defaults. The content hash
of the canonical serialization identifies a run, and every random behavior in
the system derives from the global seed plus a declared stream label.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, get_args, get_origin

import yaml

from .errors import ConfigError
from .trainer import TrainerConfig


@dataclass
class ScheduleConfig:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    kind: str = "linear"
    deterministic: bool = True


@dataclass
class DenoiserConfig:
    base_channels: int = 32
    cond_dim: int = 64
    time_dim: int = 128
    steps: int = 5000
    lr: float = 1e-4
    batch_size: int = 32
    uncond_prob: float = 0.2
    use_labels: bool = False


@dataclass
class SyntheticConfig:
    count: int = 512
    factor_names: tuple[str, ...] = ("position", "brightness")
    factor_lows: tuple[float, ...] = (2.0, 0.35)
    factor_highs: tuple[float, ...] = (5.0, 1.0)
    factor_renders: tuple[str, ...] = ("x_pos", "brightness")


@dataclass
class DatasetConfig:
    source: str = "synthetic"  # synthetic | folder | model_samples
    path: str = ""
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)


@dataclass
class EditConfig:
    guidance_scale: float = 7.5
    eval_steps: int = 50
    invert_steps: int = 200  # inversion integrates the trajectory on a finer grid
    fine_window: tuple[float, float] = (0.5, 0.0)
    coarse_window: tuple[float, float] = (0.9, 0.8)
    strip_scales: tuple[float, ...] = (-2.0, -1.0, 0.0, 1.0, 2.0)
    default_scale: float = 2.0


@dataclass
class EvalConfig:
    eval_size: int = 64
    eval_seed: int = 0
    duplicate_threshold: float = 0.9
    probe_hidden: int = 32
    probe_steps: int = 400


@dataclass
class ExperimentConfig:
    domain: str = "synthetic-blobs"
    latent_shape: tuple[int, int, int] = (1, 8, 8)
    seed: int = 0
    K: int = 100
    init_scale: float = 0.01
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    edit: EditConfig = field(default_factory=EditConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        try:
            self.trainer.validate()
        except ValueError as exc:
            raise ConfigError("trainer", str(exc)) from exc
        if self.K < 1:
            raise ConfigError("K", f"must be >= 1, got {self.K}")
        if self.trainer.subset_dirs > self.K:
            raise ConfigError("trainer.subset_dirs", f"exceeds K = {self.K}")
        if self.schedule.T < 1:
            raise ConfigError("schedule.T", f"must be >= 1, got {self.schedule.T}")
        if not (0 < self.schedule.beta_start <= self.schedule.beta_end < 1):
            raise ConfigError("schedule.beta_start", "beta bounds must satisfy 0 < start <= end < 1")
        if len(self.latent_shape) != 3:
            raise ConfigError("latent_shape", f"must be (C, H, W), got {self.latent_shape}")
        syn = self.dataset.synthetic
        if not (len(syn.factor_names) == len(syn.factor_lows) == len(syn.factor_highs) == len(syn.factor_renders)):
            raise ConfigError("dataset.synthetic", "factor_* lists must have equal lengths")
        if self.dataset.source not in ("synthetic", "folder", "model_samples"):
            raise ConfigError("dataset.source", f"unknown source {self.dataset.source!r}")


def _coerce(value: Any, target_type: Any, path: str) -> Any:
    origin = get_origin(target_type)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        args = get_args(target_type)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(path, f"expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(v, a, f"{path}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {type(value).__name__}")
        return float(value)
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {type(value).__name__}")
        return value
    if target_type is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {type(value).__name__}")
        return value
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {type(value).__name__}")
        return value
    raise ConfigError(path, f"unsupported config type {target_type!r}")


_NESTED = {
    "dataset": DatasetConfig,
    "synthetic": SyntheticConfig,
    "schedule": ScheduleConfig,
    "denoiser": DenoiserConfig,
    "trainer": TrainerConfig,
    "edit": EditConfig,
    "eval": EvalConfig,
}


def _build_config(cls: type, data: dict, path: str = "") -> Any:
    if not isinstance(data, dict):
        raise ConfigError(path.rstrip(".") or "<root>", f"expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}{key}", "unknown key")
    kwargs: dict[str, Any] = {}
    for name, f in known.items():
        if name not in data:
            continue
        sub_path = f"{path}{name}"
        if name in _NESTED:
            kwargs[name] = _build_config(_NESTED[name], data[name], f"{sub_path}.")
        else:
            hints = _type_hints(cls)
            kwargs[name] = _coerce(data[name], hints[name], sub_path)
    return cls(**kwargs)


def _type_hints(cls: type) -> dict[str, Any]:
    import typing

    return typing.get_type_hints(cls)


def parse_config(text: str) -> ExperimentConfig:
    """Parse YAML overrides on top of the declared defaults; strict about keys."""
    data = yaml.safe_load(text) if text.strip() else {}
    if data is None:
        data = {}
    cfg = _build_config(ExperimentConfig, data)
    cfg.validate()
    return cfg


def _to_plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    return obj


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical YAML serialization; parse(serialize(c)) == c."""
    return yaml.safe_dump(_to_plain(cfg), sort_keys=True, default_flow_style=False)


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(_to_plain(cfg), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        cfg = ExperimentConfig()
        cfg.validate()
        return cfg
    return parse_config(Path(path).read_text())
