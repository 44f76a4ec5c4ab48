"""Run configuration: flat key=value text files with flag overrides.

Every key carries its published default (window 64, 6 layers, 12 heads,
future weight 0.5, lr 5e-5, weight decay 0.2, 5 warmup epochs, 30 epochs,
batch 32, downsampling rate 6). Unknown keys are rejected outright so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .model import CLASSIFIER_MODES, ModelConfig
from .optim import LossConfig, OptimState


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_int_tuple(s: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in s.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {s!r}") from None


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


@dataclass
class RunConfig:
    seed: int = 0
    data_dir: str = ""
    eval_dir: str = ""            # empty = evaluate on data_dir
    out_dir: str = "out"
    window: int = 64
    layers: int = 6
    heads: int = 12
    classifier_mode: str = "prompt"
    future: bool = True
    future_weight: float = 0.5
    logit_scale: float = 100.0
    horizon: int = 60
    lr: float = 5e-5
    weight_decay: float = 0.2
    warmup_epochs: float = 5.0
    epochs: int = 30
    batch_size: int = 32
    rate: int = 6
    eval_stride: int = 1
    keep_last: int = 3
    window_lengths: tuple = (8, 16, 32, 64)
    shots: tuple = (1, 2, 4, 8)

    def validate(self) -> "RunConfig":
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ConfigError(
                f"warmup_epochs {self.warmup_epochs} outside [0, {self.epochs}]")
        if self.rate < 1 or self.horizon < 1 or self.eval_stride < 1:
            raise ConfigError("rate, horizon and eval_stride must be >= 1")
        if self.window not in self.window_lengths:
            raise ConfigError(
                f"window {self.window} not in window_lengths {self.window_lengths}")
        if self.classifier_mode not in CLASSIFIER_MODES:
            raise ConfigError(
                f"classifier_mode {self.classifier_mode!r} not one of {CLASSIFIER_MODES}")
        if any(s not in (1, 2, 4, 8) for s in self.shots):
            raise ConfigError(f"shots must come from 1,2,4,8; got {self.shots}")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigError("lr must be positive and weight_decay non-negative")
        if self.keep_last < 1:
            raise ConfigError("keep_last must be >= 1")
        return self

    # -- conversions into the module-level configs ------------------------

    def model_config(self, feature_dim: int, classes: int) -> ModelConfig:
        return ModelConfig(
            feature_dim=feature_dim, classes=classes, window=self.window,
            layers=self.layers, heads=self.heads, logit_scale=self.logit_scale,
            future_weight=self.future_weight, future_enabled=self.future,
            classifier_mode=self.classifier_mode,
            window_lengths=tuple(self.window_lengths)).validate()

    def optim_state(self) -> OptimState:
        return OptimState(lr_base=self.lr, weight_decay=self.weight_decay,
                          warmup_epochs=self.warmup_epochs,
                          total_epochs=float(self.epochs)).validate()

    def loss_config(self) -> LossConfig:
        return LossConfig(future_weight=self.future_weight,
                          logit_scale=self.logit_scale).validate()

    # -- serialization -----------------------------------------------------

    def serialize(self) -> str:
        lines = ["# run configuration"]
        for f in fields(self):
            lines.append(f"{f.name} = {_fmt(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.serialize(), encoding="utf-8")


_PARSERS = {
    int: int,
    float: float,
    str: str,
    bool: _parse_bool,
    tuple: _parse_int_tuple,
}


def _field_types() -> dict[str, type]:
    defaults = RunConfig()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(RunConfig)}


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    types = _field_types()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown configuration key {key!r}")
        try:
            setattr(cfg, key, _PARSERS[types[key]](value))
        except ConfigError:
            raise
        except ValueError:
            raise ConfigError(
                f"line {lineno}: bad value {value!r} for key {key!r}") from None
    return cfg


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), base)


def apply_overrides(cfg: RunConfig, overrides: dict[str, str]) -> RunConfig:
    """Flag overrides; values arrive as strings and win over the file."""
    types = _field_types()
    for key, value in overrides.items():
        if key not in types:
            raise ConfigError(f"unknown configuration key {key!r}")
        try:
            setattr(cfg, key, _PARSERS[types[key]](value))
        except ConfigError:
            raise
        except ValueError:
            raise ConfigError(f"bad value {value!r} for key {key!r}") from None
    return cfg
