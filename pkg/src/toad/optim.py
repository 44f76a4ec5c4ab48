"""Training loss, decoupled-weight-decay Adam, and the LR schedule.

The loss is cross-entropy over scaled cosine logits: probabilities are
softmax(logit_scale * z), evaluated in log space so saturated cosines stay
exact. The optimizer is AdamW with bias correction; decay multiplies the
parameter before the moment update and never touches frozen tensors
(they are simply not in the trainable set). The learning rate ramps
linearly from zero over the warmup epochs, then follows a half-cosine to
zero at the final epoch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import tensor as tc
from .errors import ConfigError, LabelError, TrainingAbortedError
from .tensor import IGNORE_LABEL, Tensor


@dataclass
class LossConfig:
    future_weight: float = 0.5
    logit_scale: float = 100.0

    def validate(self) -> "LossConfig":
        if self.future_weight < 0:
            raise ConfigError(f"future_weight must be >= 0, got {self.future_weight}")
        if not math.isfinite(self.logit_scale) or self.logit_scale <= 0:
            raise ConfigError(f"logit_scale must be finite and positive, got {self.logit_scale}")
        return self


def ce_loss(logits: Tensor, labels, logit_scale: float,
            allow_undefined: bool = False) -> Tensor:
    """Mean -log softmax(logit_scale * logits)[label] over the batch.

    With allow_undefined, rows labeled IGNORE_LABEL are masked out (used for
    windows whose future target falls past the end of the video).
    """
    labels = np.asarray(labels)
    c = logits.data.shape[-1]
    if not allow_undefined:
        bad = (labels < 0) | (labels >= c)
        if bad.any():
            i = int(np.argmax(bad))
            raise LabelError(f"label {labels[i]} out of range [0, {c}) at row {i}")
    return tc.cross_entropy(logits, labels, scale_factor=logit_scale,
                            ignore=IGNORE_LABEL)


def total_loss(z: Tensor, z_future: Tensor | None, y, y_future,
               cfg: LossConfig) -> Tensor:
    """Current-action CE plus future_weight times the future-action CE.

    The future term exists only when the future head ran; a lone future
    side (logits without labels or vice versa) is a configuration error.
    """
    cfg.validate()
    if (z_future is None) != (y_future is None):
        raise ConfigError("inconsistent future availability: need both logits and labels")
    current = ce_loss(z, y, cfg.logit_scale)
    if z_future is None:
        return current
    future = ce_loss(z_future, y_future, cfg.logit_scale, allow_undefined=True)
    return tc.add(current, tc.scale(future, cfg.future_weight))


@dataclass
class OptimState:
    lr_base: float = 5e-5
    weight_decay: float = 0.2
    warmup_epochs: float = 5.0
    total_epochs: float = 30.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    moments: dict = field(default_factory=dict)

    def validate(self) -> "OptimState":
        if self.lr_base <= 0:
            raise ConfigError(f"lr_base must be positive, got {self.lr_base}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise ConfigError(
                f"warmup {self.warmup_epochs} must lie within total {self.total_epochs}")
        return self

    def records(self) -> dict[str, np.ndarray]:
        out = {"optim/step": np.asarray(float(self.step), dtype=np.float32)}
        for name, (m, v) in self.moments.items():
            out[f"optim/m/{name}"] = m
            out[f"optim/v/{name}"] = v
        return out

    def load_records(self, records: dict[str, np.ndarray]) -> None:
        self.step = int(records["optim/step"].reshape(-1)[0])
        self.moments = {}
        for key, arr in records.items():
            if key.startswith("optim/m/"):
                name = key[len("optim/m/"):]
                self.moments[name] = (arr.copy(), records[f"optim/v/{name}"].copy())


def lr_at(epoch: float, state: OptimState) -> float:
    """Learning rate at a fractional epoch position."""
    if not 0 <= epoch <= state.total_epochs:
        raise ConfigError(
            f"epoch {epoch} outside schedule [0, {state.total_epochs}]")
    if epoch < state.warmup_epochs:
        return state.lr_base * (epoch / state.warmup_epochs)
    span = state.total_epochs - state.warmup_epochs
    if span == 0:
        return state.lr_base
    return state.lr_base * 0.5 * (1.0 + math.cos(math.pi * (epoch - state.warmup_epochs) / span))


def adamw_step(named_params: Iterable[tuple[str, Tensor]], state: OptimState,
               lr: float | None = None) -> None:
    """One optimizer step over every parameter that received a gradient."""
    if lr is None:
        lr = state.lr_base
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    decay = 1.0 - lr * state.weight_decay
    for name, p in named_params:
        g = p.grad
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise TrainingAbortedError(f"non-finite gradient for {name!r}", state.step)
        if name not in state.moments:
            state.moments[name] = (np.zeros_like(p.data), np.zeros_like(p.data))
        m, v = state.moments[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data *= p.data.dtype.type(decay)
        p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.data.dtype)
