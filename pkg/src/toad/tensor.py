"""Dense tensors, numeric kernels, and the reverse-mode gradient tape.

Storage is row-major contiguous numpy, float32 for training state and
float64 switchable for gradient-check runs. Every kernel validates that
its output is finite; NaN/Inf anywhere is a hard error. Kernels are pure
functions; recording onto a GradTape happens only inside an active
``with GradTape() as tape:`` block, and one tape serves one training step.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable

import numpy as np

from .errors import DegenerateInputError, LabelError, NumericsError, ShapeError

_DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.float32, np.float64)

# Label value marking "no target" rows in cross_entropy.
IGNORE_LABEL = -1


def set_default_dtype(dtype) -> None:
    """Switch the construction dtype; float64 is for gradient-check runs."""
    global _DEFAULT_DTYPE
    if dtype not in _FLOAT_DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}")
    _DEFAULT_DTYPE = dtype


def default_dtype():
    return _DEFAULT_DTYPE


class use_dtype:
    """Context manager: run a block (e.g. a finite-difference check) in f64."""

    def __init__(self, dtype):
        self.dtype = dtype

    def __enter__(self):
        self.saved = _DEFAULT_DTYPE
        set_default_dtype(self.dtype)
        return self

    def __exit__(self, *exc):
        set_default_dtype(self.saved)
        return False


def _finite_or_die(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericsError(f"{op} produced non-finite values")


class Tensor:
    """A dense array plus an optional accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(_DEFAULT_DTYPE)
        # ascontiguousarray promotes 0-d to 1-d; scalars are already contiguous
        self.data = arr if arr.ndim == 0 else np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


def tensor(data, requires_grad: bool = False, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(*shape, requires_grad: bool = False, name: str = "") -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DEFAULT_DTYPE), requires_grad, name)


def randn(rng: np.random.Generator, *shape, scale: float = 1.0,
          requires_grad: bool = False, name: str = "") -> Tensor:
    data = (rng.standard_normal(shape) * scale).astype(_DEFAULT_DTYPE)
    return Tensor(data, requires_grad, name)


# --------------------------------------------------------------------------
# Gradient tape
# --------------------------------------------------------------------------

_ACTIVE_TAPE: "GradTape | None" = None


class GradTape:
    """Ordered record of forward ops; backward replays them exactly reversed.

    Every requires-grad tensor touched while the tape is active is
    guaranteed a gradient after backward(), zero if nothing flowed to it.
    """

    def __init__(self):
        self._ops: list[tuple[str, Callable[[np.ndarray], None], Tensor]] = []
        self._watched: list[Tensor] = []
        self._watched_ids: set[int] = set()

    def __enter__(self) -> "GradTape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a GradTape is already active; one tape per step")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def record(self, name: str, out: Tensor,
               backward: Callable[[np.ndarray], None],
               inputs: Iterable[Tensor]) -> None:
        out.requires_grad = True
        self._ops.append((name, backward, out))
        for t in inputs:
            if t.requires_grad and id(t) not in self._watched_ids:
                self._watched_ids.add(id(t))
                self._watched.append(t)

    @property
    def op_names(self) -> list[str]:
        return [name for name, _, _ in self._ops]

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        for t in self._watched:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
        loss.grad = np.ones_like(loss.data)
        for _, backward, out in reversed(self._ops):
            if out.grad is not None:
                backward(out.grad)


def _tape() -> GradTape | None:
    return _ACTIVE_TAPE


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad += g


def _wants_grad(*tensors: Tensor) -> bool:
    return _ACTIVE_TAPE is not None and any(t.requires_grad for t in tensors)


# --------------------------------------------------------------------------
# Kernels
# --------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; 2-D operands or identically stacked 3-D operands."""
    sa, sb = a.data.shape, b.data.shape
    ok = (len(sa) == len(sb) == 2 and sa[1] == sb[0]) or (
        len(sa) == len(sb) == 3 and sa[0] == sb[0] and sa[2] == sb[1])
    if not ok:
        raise ShapeError(f"matmul: incompatible shapes {sa} x {sb}")
    with np.errstate(over="ignore", invalid="ignore"):
        out_data = a.data @ b.data
    _finite_or_die(out_data, "matmul")
    out = Tensor(out_data)
    if _wants_grad(a, b):
        def backward(g: np.ndarray) -> None:
            _accum(a, g @ np.swapaxes(b.data, -1, -2))
            _accum(b, np.swapaxes(a.data, -1, -2) @ g)
        _tape().record("matmul", out, backward, (a, b))
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
    out_data = a.data + b.data
    _finite_or_die(out_data, "add")
    out = Tensor(out_data)
    if _wants_grad(a, b):
        def backward(g: np.ndarray) -> None:
            _accum(a, g)
            _accum(b, g)
        _tape().record("add", out, backward, (a, b))
    return out


def add_broadcast(x: Tensor, b: Tensor) -> Tensor:
    """Add b across x's leading axes; b matches x's trailing extents."""
    nb = b.data.ndim
    if x.data.shape[x.data.ndim - nb:] != b.data.shape:
        raise ShapeError(
            f"add_broadcast: trailing extents of {x.data.shape} do not match {b.data.shape}")
    out_data = x.data + b.data
    _finite_or_die(out_data, "add_broadcast")
    out = Tensor(out_data)
    if _wants_grad(x, b):
        lead = tuple(range(x.data.ndim - nb))
        def backward(g: np.ndarray) -> None:
            _accum(x, g)
            _accum(b, g.sum(axis=lead) if lead else g)
        _tape().record("add_broadcast", out, backward, (x, b))
    return out


def scale(x: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar (not a trainable quantity)."""
    out_data = x.data * x.data.dtype.type(s)
    _finite_or_die(out_data, "scale")
    out = Tensor(out_data)
    if _wants_grad(x):
        def backward(g: np.ndarray) -> None:
            _accum(x, g * x.data.dtype.type(s))
        _tape().record("scale", out, backward, (x,))
    return out


def mean_axis(x: Tensor, axis: int) -> Tensor:
    """Mean over one axis (used to pool frame representations)."""
    n = x.data.shape[axis]
    out_data = x.data.mean(axis=axis)
    _finite_or_die(out_data, "mean_axis")
    out = Tensor(out_data)
    if _wants_grad(x):
        def backward(g: np.ndarray) -> None:
            _accum(x, np.repeat(np.expand_dims(g / n, axis), n, axis=axis))
        _tape().record("mean_axis", out, backward, (x,))
    return out


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the subgradient at 0 is taken as 0."""
    out_data = np.maximum(x.data, 0)
    _finite_or_die(out_data, "relu")
    out = Tensor(out_data)
    if _wants_grad(x):
        mask = x.data > 0
        def backward(g: np.ndarray) -> None:
            _accum(x, g * mask)
        _tape().record("relu", out, backward, (x,))
    return out


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """tanh-form GELU."""
    xd = x.data
    inner = _GELU_C * (xd + _GELU_A * xd ** 3)
    t = np.tanh(inner)
    out_data = 0.5 * xd * (1.0 + t)
    _finite_or_die(out_data, "gelu")
    out = Tensor(out_data.astype(xd.dtype, copy=False))
    if _wants_grad(x):
        def backward(g: np.ndarray) -> None:
            sech2 = 1.0 - t * t
            d = 0.5 * (1.0 + t) + 0.5 * xd * sech2 * _GELU_C * (1.0 + 3.0 * _GELU_A * xd ** 2)
            _accum(x, g * d)
        _tape().record("gelu", out, backward, (x,))
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along one axis."""
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.data.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    _finite_or_die(p, "softmax")
    out = Tensor(p.astype(x.data.dtype, copy=False))
    if _wants_grad(x):
        def backward(g: np.ndarray) -> None:
            dot = (g * p).sum(axis=axis, keepdims=True)
            _accum(x, (g - dot) * p)
        _tape().record("softmax", out, backward, (x,))
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias must be ({d},), got {gain.data.shape} and {bias.data.shape}")
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    sigma = np.sqrt(var + eps)
    xhat = (x.data - mu) / sigma
    out_data = xhat * gain.data + bias.data
    _finite_or_die(out_data, "layer_norm")
    out = Tensor(out_data)
    if _wants_grad(x, gain, bias):
        def backward(g: np.ndarray) -> None:
            ghat = g * gain.data
            m1 = ghat.mean(axis=-1, keepdims=True)
            m2 = (ghat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, (ghat - m1 - xhat * m2) / sigma)
            lead = tuple(range(g.ndim - 1))
            _accum(gain, (g * xhat).sum(axis=lead))
            _accum(bias, g.sum(axis=lead))
        _tape().record("layer_norm", out, backward, (x, gain, bias))
    return out


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    """Scale slices along `axis` to unit L2 norm; zero norm is degenerate."""
    norms = np.linalg.norm(x.data, axis=axis, keepdims=True)
    if (norms == 0).any():
        raise DegenerateInputError("l2_normalize: zero-norm slice")
    y = x.data / norms
    _finite_or_die(y, "l2_normalize")
    out = Tensor(y)
    if _wants_grad(x):
        def backward(g: np.ndarray) -> None:
            dot = (g * y).sum(axis=axis, keepdims=True)
            _accum(x, (g - y * dot) / norms)
        _tape().record("l2_normalize", out, backward, (x,))
    return out


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    if _wants_grad(x):
        def backward(g: np.ndarray) -> None:
            _accum(x, g.reshape(x.data.shape))
        _tape().record("reshape", out, backward, (x,))
    return out


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    out = Tensor(np.ascontiguousarray(np.swapaxes(x.data, a, b)))
    if _wants_grad(x):
        def backward(g: np.ndarray) -> None:
            _accum(x, np.ascontiguousarray(np.swapaxes(g, a, b)))
        _tape().record("swapaxes", out, backward, (x,))
    return out


def cross_entropy(logits: Tensor, labels: np.ndarray, scale_factor: float = 1.0,
                  ignore: int = IGNORE_LABEL) -> Tensor:
    """Mean 'minus log softmax(scale_factor * logits)[label]' over labeled rows.

    Computed in log-space (max subtraction) so saturated logits stay exact.
    Rows whose label equals `ignore` contribute nothing; if every row is
    ignored the loss is 0 with a zero gradient.
    """
    z = logits.data
    if z.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be 2-D, got {z.shape}")
    n, c = z.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: labels must be ({n},), got {labels.shape}")
    valid = labels != ignore
    bad = valid & ((labels < 0) | (labels >= c))
    if bad.any():
        i = int(np.argmax(bad))
        raise LabelError(f"label {labels[i]} out of range [0, {c}) at row {i}")
    nv = int(valid.sum())
    if nv == 0:
        return Tensor(np.zeros((), dtype=z.dtype))

    s = z * z.dtype.type(scale_factor)
    m = s.max(axis=1, keepdims=True)
    e = np.exp(s - m)
    sum_e = e.sum(axis=1, keepdims=True)
    lse = (m + np.log(sum_e)).reshape(-1)
    rows = np.arange(n)
    per_row = lse - s[rows, np.where(valid, labels, 0)]
    loss_val = per_row[valid].sum(dtype=np.float64) / nv
    out = Tensor(np.asarray(loss_val, dtype=z.dtype))
    _finite_or_die(out.data, "cross_entropy")
    if _wants_grad(logits):
        p = e / sum_e
        def backward(g: np.ndarray) -> None:
            d = p.copy()
            d[rows[valid], labels[valid]] -= 1.0
            d[~valid] = 0.0
            _accum(logits, d * (scale_factor * float(g.reshape(-1)[0]) / nv))
        _tape().record("cross_entropy", out, backward, (logits,))
    return out
