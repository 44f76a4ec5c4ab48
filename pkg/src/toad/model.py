"""The detection network.

A window of frame features gets a learned positional table added, runs
through pre-norm self-attention blocks, and is mean-pooled into a single
video embedding. Classification is a cosine dot product against a frozen
matrix of unit-norm text embeddings; a separate fully connected + ReLU
projection refines the pooled embedding before scoring it against the
frozen future-prompt matrix.
"""

from __future__ import annotations

import hashlib
import logging
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .errors import ConfigError, DegenerateInputError, NumericsError, ShapeError
from .tensor import Tensor

log = logging.getLogger("toad.model")

CLASSIFIER_MODES = ("class_name", "prompt", "mixed")

DEFAULT_WINDOW_LENGTHS = (8, 16, 32, 64)


@dataclass
class ModelConfig:
    feature_dim: int
    classes: int
    window: int = 64
    layers: int = 6
    heads: int = 12
    logit_scale: float = 100.0       # multiplies cosine logits inside the loss
    future_weight: float = 0.5       # weight of the future-supervision term
    future_enabled: bool = True
    classifier_mode: str = "prompt"
    window_lengths: tuple[int, ...] = DEFAULT_WINDOW_LENGTHS

    def validate(self) -> "ModelConfig":
        if self.feature_dim < 1:
            raise ConfigError(f"feature_dim must be positive, got {self.feature_dim}")
        if self.classes < 2:
            raise ConfigError(f"need background plus at least one action class, got {self.classes}")
        if self.heads < 1 or self.feature_dim % self.heads != 0:
            raise ConfigError(
                f"feature_dim {self.feature_dim} not divisible by heads {self.heads}")
        if self.layers < 0:
            raise ConfigError("layers must be >= 0")
        if not self.window_lengths:
            raise ConfigError("window_lengths must be non-empty")
        if any(t < 1 for t in self.window_lengths):
            raise ConfigError(f"window_lengths must be positive, got {self.window_lengths}")
        if self.window not in self.window_lengths:
            raise ConfigError(
                f"window {self.window} not in configured lengths {self.window_lengths}")
        if not math.isfinite(self.logit_scale) or self.logit_scale <= 0:
            raise ConfigError(f"logit_scale must be finite and positive, got {self.logit_scale}")
        if self.future_weight < 0:
            raise ConfigError(f"future_weight must be >= 0, got {self.future_weight}")
        if self.classifier_mode not in CLASSIFIER_MODES:
            raise ConfigError(
                f"classifier_mode {self.classifier_mode!r} not one of {CLASSIFIER_MODES}")
        return self


def _norm_rows(mat: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1)
    for i, n in enumerate(norms):
        if n == 0:
            raise DegenerateInputError(f"{what}: zero-norm embedding for class {i}")
    return mat / norms[:, None]


@dataclass(eq=False)
class ClassifierMatrix:
    """Frozen unit-norm text-embedding rows; never touched by the optimizer."""

    current: np.ndarray
    future: np.ndarray | None = None

    def __post_init__(self):
        self.current.setflags(write=False)
        if self.future is not None:
            self.future.setflags(write=False)
        self._transposed: dict[bool, np.ndarray] = {}

    def transposed(self, future: bool = False) -> np.ndarray:
        """Contiguous (d, C) copy, cached; keeps every dot product on the
        same BLAS path so scores are reproducible bit for bit."""
        if future not in self._transposed:
            mat = self.future if future else self.current
            if mat is None:
                raise ConfigError("classifier has no future matrix")
            t = np.ascontiguousarray(mat.T)
            t.setflags(write=False)
            self._transposed[future] = t
        return self._transposed[future]

    @property
    def classes(self) -> int:
        return self.current.shape[0]

    def checksum(self) -> str:
        h = hashlib.sha256(self.current.tobytes())
        if self.future is not None:
            h.update(self.future.tobytes())
        return h.hexdigest()


def build_classifier(name_embeds: np.ndarray, prompt_embeds: np.ndarray,
                     mode: str, future_embeds: np.ndarray | None = None) -> ClassifierMatrix:
    """Build the frozen classifier from raw text-embedding matrices.

    mode "mixed" normalizes each source, averages them, and re-normalizes.
    The future matrix is always built from the future-prompt embeddings.
    """
    if mode not in CLASSIFIER_MODES:
        raise ConfigError(f"unknown classifier mode {mode!r}")
    name_embeds = np.asarray(name_embeds, dtype=tc.default_dtype())
    prompt_embeds = np.asarray(prompt_embeds, dtype=tc.default_dtype())
    if name_embeds.shape != prompt_embeds.shape or name_embeds.ndim != 2:
        raise ShapeError(
            f"classifier sources must be equal 2-D shapes, got "
            f"{name_embeds.shape} and {prompt_embeds.shape}")
    if mode == "class_name":
        current = _norm_rows(name_embeds, "class_name embeddings")
    elif mode == "prompt":
        current = _norm_rows(prompt_embeds, "prompt embeddings")
    else:
        mean = (_norm_rows(name_embeds, "class_name embeddings")
                + _norm_rows(prompt_embeds, "prompt embeddings")) / 2.0
        current = _norm_rows(mean, "mixed embeddings")
    future = None
    if future_embeds is not None:
        future_embeds = np.asarray(future_embeds, dtype=tc.default_dtype())
        if future_embeds.shape != name_embeds.shape:
            raise ShapeError(
                f"future embeddings shape {future_embeds.shape} does not match "
                f"{name_embeds.shape}")
        future = _norm_rows(future_embeds, "future embeddings")
    return ClassifierMatrix(np.ascontiguousarray(current),
                            None if future is None else np.ascontiguousarray(future))


@dataclass(eq=False)
class VideoEmbedding:
    """Unit-norm video embedding plus, when enabled, its future refinement."""

    v: np.ndarray
    v_future: np.ndarray | None = None


@dataclass
class Block:
    ln1_gain: Tensor
    ln1_bias: Tensor
    attn_q_w: Tensor
    attn_q_b: Tensor
    attn_k_w: Tensor
    attn_k_b: Tensor
    attn_v_w: Tensor
    attn_v_b: Tensor
    attn_out_w: Tensor
    attn_out_b: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    mlp_in_w: Tensor
    mlp_in_b: Tensor
    mlp_out_w: Tensor
    mlp_out_b: Tensor

    def named(self, index: int):
        prefix = f"block{index:02d}/"
        for name in self.__dataclass_fields__:
            yield prefix + name, getattr(self, name)


class ModelParams:
    """All tensors of one model: trainable encoder state plus the frozen
    classifier and logit scale. The frozen pieces are excluded from
    trainable() and guarded against writes."""

    def __init__(self, cfg: ModelConfig, classifier: ClassifierMatrix,
                 rng: np.random.Generator | None = None):
        cfg.validate()
        if classifier.classes != cfg.classes:
            raise ConfigError(
                f"classifier has {classifier.classes} classes, config says {cfg.classes}")
        if classifier.current.shape[1] != cfg.feature_dim:
            raise ConfigError(
                f"classifier dim {classifier.current.shape[1]} != feature_dim {cfg.feature_dim}")
        if cfg.future_enabled and classifier.future is None:
            raise ConfigError("future head enabled but no future classifier matrix")
        self.cfg = cfg
        self.classifier = classifier
        self.logit_scale = float(cfg.logit_scale)
        d = cfg.feature_dim
        if rng is None:
            rng = np.random.default_rng(0)

        self.positional: dict[int, Tensor] = {}
        for t in cfg.window_lengths:
            self.positional[t] = tc.randn(rng, t, d, scale=0.01, requires_grad=True)
        self.blocks: list[Block] = []
        for _ in range(cfg.layers):
            self.blocks.append(Block(
                ln1_gain=Tensor(np.ones(d, dtype=tc.default_dtype()), requires_grad=True),
                ln1_bias=tc.zeros(d, requires_grad=True),
                attn_q_w=tc.randn(rng, d, d, scale=0.02, requires_grad=True),
                attn_q_b=tc.zeros(d, requires_grad=True),
                attn_k_w=tc.randn(rng, d, d, scale=0.02, requires_grad=True),
                attn_k_b=tc.zeros(d, requires_grad=True),
                attn_v_w=tc.randn(rng, d, d, scale=0.02, requires_grad=True),
                attn_v_b=tc.zeros(d, requires_grad=True),
                attn_out_w=tc.randn(rng, d, d, scale=0.02, requires_grad=True),
                attn_out_b=tc.zeros(d, requires_grad=True),
                ln2_gain=Tensor(np.ones(d, dtype=tc.default_dtype()), requires_grad=True),
                ln2_bias=tc.zeros(d, requires_grad=True),
                mlp_in_w=tc.randn(rng, d, 4 * d, scale=0.02, requires_grad=True),
                mlp_in_b=tc.zeros(4 * d, requires_grad=True),
                mlp_out_w=tc.randn(rng, 4 * d, d, scale=0.02, requires_grad=True),
                mlp_out_b=tc.zeros(d, requires_grad=True),
            ))
        self.future_w: Tensor | None = None
        self.future_b: Tensor | None = None
        if cfg.future_enabled:
            # identity-plus-noise start: the refinement begins as a copy
            eye = np.eye(d, dtype=tc.default_dtype())
            noise = (rng.standard_normal((d, d)) * 0.01).astype(tc.default_dtype())
            self.future_w = Tensor(eye + noise, requires_grad=True)
            self.future_b = tc.zeros(d, requires_grad=True)

        self._cls_current_t = Tensor(self.classifier.transposed(False))
        self._cls_future_t = None
        if self.classifier.future is not None:
            self._cls_future_t = Tensor(self.classifier.transposed(True))

    def trainable(self):
        """Deterministically ordered (name, tensor) pairs the optimizer may touch."""
        for t in sorted(self.positional):
            yield f"positional/{t:03d}", self.positional[t]
        for i, block in enumerate(self.blocks):
            yield from block.named(i)
        if self.future_w is not None:
            yield "future/weight", self.future_w
            yield "future/bias", self.future_b

    def zero_grads(self) -> None:
        for _, t in self.trainable():
            t.zero_grad()

    def frozen_checksum(self) -> str:
        h = hashlib.sha256(self.classifier.current.tobytes())
        if self.classifier.future is not None:
            h.update(self.classifier.future.tobytes())
        h.update(struct.pack("<d", self.logit_scale))
        return h.hexdigest()

    def records(self) -> dict[str, np.ndarray]:
        """Flat name -> array map covering every tensor (frozen ones included)."""
        out = {name: t.data for name, t in self.trainable()}
        out["classifier/current"] = self.classifier.current
        if self.classifier.future is not None:
            out["classifier/future"] = self.classifier.future
        out["logit_scale"] = np.asarray(self.logit_scale, dtype=np.float32)
        out["meta/heads"] = np.asarray(float(self.cfg.heads), dtype=np.float32)
        return out

    @classmethod
    def from_records(cls, records: dict[str, np.ndarray],
                     classifier_mode: str = "prompt",
                     future_weight: float = 0.5) -> "ModelParams":
        """Rebuild a self-contained parameter set written by records()."""
        try:
            current = records["classifier/current"]
            heads = int(records["meta/heads"].reshape(-1)[0])
            logit_scale = float(records["logit_scale"].reshape(-1)[0])
        except KeyError as missing:
            raise ConfigError(f"checkpoint is missing record {missing}") from None
        future = records.get("classifier/future")
        lengths = tuple(sorted(
            int(name.split("/")[1]) for name in records if name.startswith("positional/")))
        layers = len({name.split("/")[0] for name in records if name.startswith("block")})
        if not lengths:
            raise ConfigError("checkpoint has no positional tables")
        cfg = ModelConfig(
            feature_dim=current.shape[1], classes=current.shape[0],
            window=lengths[0], layers=layers, heads=heads,
            logit_scale=logit_scale, future_weight=future_weight,
            future_enabled="future/weight" in records,
            classifier_mode=classifier_mode, window_lengths=lengths)
        dt = tc.default_dtype()
        cm = ClassifierMatrix(
            np.ascontiguousarray(current.astype(dt)),
            None if future is None else np.ascontiguousarray(future.astype(dt)))
        params = cls(cfg, cm)
        for name, t in params.trainable():
            if name not in records:
                raise ConfigError(f"checkpoint is missing record {name!r}")
            arr = records[name].astype(dt)
            if arr.shape != t.data.shape:
                raise ConfigError(
                    f"record {name!r} has shape {arr.shape}, expected {t.data.shape}")
            t.data = np.ascontiguousarray(arr)
        return params


def _check_input(x: np.ndarray, d: int) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[2] != d:
        raise ShapeError(f"expected (batch, window, {d}) features, got {x.shape}")
    if not np.isfinite(x).all():
        raise NumericsError("non-finite values in input features")
    return x.astype(tc.default_dtype(), copy=False)


def _encode(params: ModelParams, x: Tensor) -> Tensor:
    """Positional add + encoder blocks + mean pooling. Returns (B, d) pooled."""
    cfg = params.cfg
    b, t, d = x.shape
    if t not in params.positional:
        raise ConfigError(f"no positional table for window length {t}")
    h = tc.add_broadcast(x, params.positional[t])
    heads = cfg.heads
    dk = d // heads
    inv_sqrt_dk = 1.0 / math.sqrt(dk)
    for blk in params.blocks:
        a = tc.layer_norm(h, blk.ln1_gain, blk.ln1_bias)
        af = tc.reshape(a, (b * t, d))

        def heads_view(lin: Tensor) -> Tensor:
            split = tc.reshape(lin, (b, t, heads, dk))
            return tc.reshape(tc.swapaxes(split, 1, 2), (b * heads, t, dk))

        q = heads_view(tc.add_broadcast(tc.matmul(af, blk.attn_q_w), blk.attn_q_b))
        k = heads_view(tc.add_broadcast(tc.matmul(af, blk.attn_k_w), blk.attn_k_b))
        v = heads_view(tc.add_broadcast(tc.matmul(af, blk.attn_v_w), blk.attn_v_b))
        scores = tc.scale(tc.matmul(q, tc.swapaxes(k, 1, 2)), inv_sqrt_dk)
        ctx = tc.matmul(tc.softmax(scores, axis=-1), v)
        merged = tc.reshape(
            tc.swapaxes(tc.reshape(ctx, (b, heads, t, dk)), 1, 2), (b * t, d))
        attn_out = tc.add_broadcast(tc.matmul(merged, blk.attn_out_w), blk.attn_out_b)
        h = tc.add(h, tc.reshape(attn_out, (b, t, d)))

        m = tc.layer_norm(h, blk.ln2_gain, blk.ln2_bias)
        mf = tc.reshape(m, (b * t, d))
        u = tc.gelu(tc.add_broadcast(tc.matmul(mf, blk.mlp_in_w), blk.mlp_in_b))
        o = tc.add_broadcast(tc.matmul(u, blk.mlp_out_w), blk.mlp_out_b)
        h = tc.add(h, tc.reshape(o, (b, t, d)))
    return tc.mean_axis(h, axis=1)


def future_project(v_raw: Tensor, params: ModelParams, strict: bool = True) -> Tensor:
    """relu(v_raw @ W + b), unit-normalized; feeds the future classifier.

    A row that dies entirely under the ReLU has no normalizable direction:
    strict mode raises, pipeline mode (training and streaming evaluation)
    nudges the first coordinate by 1e-8 so the run survives, and logs it.
    """
    if params.future_w is None:
        raise ConfigError("future head is not enabled")
    h = tc.relu(tc.add_broadcast(tc.matmul(v_raw, params.future_w), params.future_b))
    dead = np.flatnonzero((h.data == 0).all(axis=-1))
    if dead.size:
        if strict:
            raise DegenerateInputError(
                f"future projection collapsed to zero for rows {dead.tolist()}")
        log.warning("future projection dead ReLU on %d row(s); nudging", dead.size)
        bump = np.zeros_like(h.data)
        bump[dead, 0] = 1e-8
        h = tc.add(h, Tensor(bump))
    return tc.l2_normalize(h, axis=-1)


def forward(params: ModelParams, x) -> tuple[Tensor, Tensor | None]:
    """Score a batch of windows. Returns current logits (B, C) and, when the
    future head is enabled, future logits (B, C); both are cosines.

    Record gradients by calling under an active GradTape; the computation is
    identical either way (the dead-ReLU nudge always applies, see
    future_project)."""
    raw = x.data if isinstance(x, Tensor) else x
    xa = _check_input(raw, params.cfg.feature_dim)
    xt = x if isinstance(x, Tensor) else Tensor(xa)
    pooled = _encode(params, xt)
    v = tc.l2_normalize(pooled, axis=-1)
    z = tc.matmul(v, params._cls_current_t)
    z_future = None
    if params.cfg.future_enabled:
        vf = future_project(pooled, params, strict=False)
        z_future = tc.matmul(vf, params._cls_future_t)
    return z, z_future


def encode_window(features: np.ndarray, params: ModelParams) -> VideoEmbedding:
    """Embed a single (window, d) feature block; inference only."""
    feats = np.asarray(features)
    if feats.ndim != 2:
        raise ShapeError(f"expected (window, d) features, got {feats.shape}")
    x = _check_input(feats[None, :, :], params.cfg.feature_dim)
    pooled = _encode(params, Tensor(x))
    v = tc.l2_normalize(pooled, axis=-1).data[0]
    v_future = None
    if params.cfg.future_enabled:
        v_future = future_project(pooled, params, strict=False).data[0]
    return VideoEmbedding(v=v, v_future=v_future)


def classify(embedding, cm: ClassifierMatrix, future: bool = False) -> np.ndarray:
    """Cosine scores of a unit-norm embedding against the frozen rows."""
    if isinstance(embedding, VideoEmbedding):
        v = embedding.v_future if future else embedding.v
    else:
        v = np.asarray(embedding)
    mat = cm.transposed(future)
    if v.shape[-1] != mat.shape[0]:
        raise ShapeError(f"embedding dim {v.shape[-1]} != classifier dim {mat.shape[0]}")
    scores = np.atleast_2d(v.astype(mat.dtype, copy=False)) @ mat
    return scores[0] if v.ndim == 1 else scores
