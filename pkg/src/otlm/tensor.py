"""Dense tensors with tape-based reverse-mode differentiation.

Storage is a row-major numpy array. Every kernel checks its input shapes and,
when a :class:`Tape` is active and some input requires a gradient, records a
node carrying the kernel's backward rule. Outside a tape, tensors are plain
immutable values.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

MASK_VALUE = -1e9


class ShapeError(ValueError):
    pass


class PrecisionMode(enum.Enum):
    WIDE = "wide"
    NARROW = "narrow"

    @property
    def dtype(self):
        return np.float64 if self is PrecisionMode.WIDE else np.float32

    @classmethod
    def of(cls, mode) -> "PrecisionMode":
        if isinstance(mode, PrecisionMode):
            return mode
        return cls(str(mode))


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, precision=None, name=None):
        if precision is not None:
            arr = np.array(data, dtype=PrecisionMode.of(precision).dtype)
        elif isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            arr = data
        else:
            arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def precision(self) -> PrecisionMode:
        return PrecisionMode.WIDE if self.data.dtype == np.float64 else PrecisionMode.NARROW

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_nonscalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, precision) -> "Tensor":
        return Tensor(self.data, requires_grad=self.requires_grad, precision=precision, name=self.name)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, {self.precision.value}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other, self), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other, self), scale(self, -1.0))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _raise_nonscalar(t):
    raise ValueError(f"expected a scalar tensor, got shape {t.shape}")


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


# ---------------------------------------------------------------------------
# Tape


@dataclass
class Node:
    kernel: str
    inputs: tuple
    output: Tensor
    backward: Callable


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; only operations executed while the tape is
    active are recorded. A tape belongs to one thread.
    """

    nodes: list = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def reset(self):
        self.nodes.clear()


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` of every leaf tensor requiring a gradient.

    Leaf gradients are overwritten, not accumulated. The tape is reset.
    """
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {id(n.output) for n in tape.nodes}
    if not loss.requires_grad or id(loss) not in produced:
        tape.reset()
        return
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(tape.nodes):
        gout = grads.pop(id(node.output), None)
        if gout is None:
            continue
        for inp, g in zip(node.inputs, node.backward(gout)):
            if g is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key not in produced:
                leaves[key] = inp
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
    for key, leaf in leaves.items():
        leaf.grad = np.asarray(grads[key], dtype=leaf.data.dtype)
    tape.reset()


# ---------------------------------------------------------------------------
# Kernels


class Kernel(str, enum.Enum):
    MATMUL = "matmul"
    ADD = "add"
    MUL = "mul"
    SCALE = "scale"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    RELU = "relu"
    SOFTMAX_LASTDIM = "softmax_lastdim"
    CUMSUM_LASTDIM = "cumsum_lastdim"
    SUM_LASTDIM = "sum_lastdim"
    MEAN = "mean"
    CONCAT_LASTDIM = "concat_lastdim"
    SLICE = "slice"
    TRANSPOSE_LAST_TWO = "transpose_last_two"
    MASK_FILL = "mask_fill"
    LAYER_NORM = "layer_norm"
    EMBEDDING_LOOKUP = "embedding_lookup"
    REVERSE_LASTDIM = "reverse_lastdim"
    # structural helpers used by the model
    RESHAPE = "reshape"
    PERMUTE = "permute"
    REPEAT_LASTDIM = "repeat_lastdim"
    SUM_ALL = "sum_all"
    CROSS_ENTROPY = "cross_entropy"
    CUMAX = "cumax"


_KERNELS: dict = {}


def _kernel(kind: Kernel):
    def register(fn):
        _KERNELS[kind] = fn
        return fn

    return register


def kernel_apply(kernel, *inputs, **params) -> Tensor:
    """Run ``kernel`` on ``inputs`` and record it on the active tape."""
    kind = Kernel(kernel)
    tensors = tuple(_as_tensor(x, next((t for t in inputs if isinstance(t, Tensor)), None)) for x in inputs)
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise TypeError(f"{kind.value}: mixed precision inputs {sorted(str(d) for d in dtypes)}")
    out_data, rule = _KERNELS[kind](*(t.data for t in tensors), **params)
    tape = active_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in tensors)
    out = Tensor(out_data, requires_grad=needs_grad)
    if needs_grad:
        tape.nodes.append(Node(kind.value, tensors, out, rule))
    return out


def _shape_error(kind: Kernel, a, b=None):
    if b is None:
        return ShapeError(f"{kind.value}: unsupported shape {tuple(a)}")
    return ShapeError(f"{kind.value}: shape mismatch {tuple(a)} vs {tuple(b)}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_error(kind, a.shape, b.shape) from None


@_kernel(Kernel.MATMUL)
def _matmul(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise _shape_error(Kernel.MATMUL, a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise _shape_error(Kernel.MATMUL, a.shape, b.shape) from None
    out = a @ b

    def rule(g):
        ga = g @ np.swapaxes(b, -1, -2)
        gb = np.swapaxes(a, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return out, rule


@_kernel(Kernel.ADD)
def _add(a, b):
    _broadcast_shape(Kernel.ADD, a, b)
    return a + b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


@_kernel(Kernel.MUL)
def _mul(a, b):
    _broadcast_shape(Kernel.MUL, a, b)
    return a * b, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


@_kernel(Kernel.SCALE)
def _scale(x, factor=1.0):
    c = x.dtype.type(factor)
    return x * c, lambda g: (g * c,)


@_kernel(Kernel.SIGMOID)
def _sigmoid(x):
    out = 0.5 * (np.tanh(0.5 * x) + 1.0)
    return out, lambda g: (g * out * (1.0 - out),)


@_kernel(Kernel.TANH)
def _tanh(x):
    out = np.tanh(x)
    return out, lambda g: (g * (1.0 - out * out),)


@_kernel(Kernel.RELU)
def _relu(x):
    on = x > 0
    return np.where(on, x, 0.0).astype(x.dtype), lambda g: (np.where(on, g, 0.0).astype(g.dtype),)


def _softmax_np(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@_kernel(Kernel.SOFTMAX_LASTDIM)
def _softmax(x):
    if x.ndim == 0:
        raise _shape_error(Kernel.SOFTMAX_LASTDIM, x.shape)
    s = _softmax_np(x)

    def rule(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return s, rule


@_kernel(Kernel.CUMSUM_LASTDIM)
def _cumsum(x):
    if x.ndim == 0:
        raise _shape_error(Kernel.CUMSUM_LASTDIM, x.shape)
    return np.cumsum(x, axis=-1), lambda g: (np.flip(np.cumsum(np.flip(g, -1), axis=-1), -1),)


@_kernel(Kernel.SUM_LASTDIM)
def _sum_lastdim(x):
    if x.ndim == 0:
        raise _shape_error(Kernel.SUM_LASTDIM, x.shape)
    return x.sum(axis=-1), lambda g: (np.broadcast_to(g[..., None], x.shape).copy(),)


@_kernel(Kernel.MEAN)
def _mean(x):
    n = x.size
    return np.asarray(x.mean(), dtype=x.dtype), lambda g: (np.full(x.shape, g / n, dtype=x.dtype),)


@_kernel(Kernel.SUM_ALL)
def _sum_all(x):
    return np.asarray(x.sum(), dtype=x.dtype), lambda g: (np.full(x.shape, g, dtype=x.dtype),)


@_kernel(Kernel.CONCAT_LASTDIM)
def _concat(*xs):
    if not xs:
        raise ShapeError("concat_lastdim: no inputs")
    for x in xs[1:]:
        if x.shape[:-1] != xs[0].shape[:-1]:
            raise _shape_error(Kernel.CONCAT_LASTDIM, xs[0].shape, x.shape)
    out = np.concatenate(xs, axis=-1)
    bounds = np.cumsum([0] + [x.shape[-1] for x in xs])

    def rule(g):
        return tuple(g[..., bounds[i] : bounds[i + 1]] for i in range(len(xs)))

    return out, rule


@_kernel(Kernel.SLICE)
def _slice(x, index=None):
    try:
        out = x[index]
    except IndexError as exc:
        raise ShapeError(f"slice: index {index!r} invalid for shape {x.shape}: {exc}") from None
    out = np.array(out)

    def rule(g):
        full = np.zeros_like(x)
        np.add.at(full, index, g)
        return (full,)

    return out, rule


@_kernel(Kernel.TRANSPOSE_LAST_TWO)
def _transpose(x):
    if x.ndim < 2:
        raise _shape_error(Kernel.TRANSPOSE_LAST_TWO, x.shape)
    return np.swapaxes(x, -1, -2), lambda g: (np.swapaxes(g, -1, -2),)


@_kernel(Kernel.MASK_FILL)
def _mask_fill(x, mask=None, value=MASK_VALUE):
    mask = np.asarray(mask, dtype=bool)
    try:
        np.broadcast_shapes(x.shape, mask.shape)
    except ValueError:
        raise _shape_error(Kernel.MASK_FILL, x.shape, mask.shape) from None
    out = np.where(mask, x.dtype.type(value), x)
    return out, lambda g: (np.where(mask, 0.0, g).astype(g.dtype),)


@_kernel(Kernel.LAYER_NORM)
def _layer_norm(x, gamma, beta, eps=1e-5):
    d = x.shape[-1] if x.ndim else 0
    if gamma.shape != (d,) or beta.shape != (d,):
        raise _shape_error(Kernel.LAYER_NORM, x.shape, gamma.shape if gamma.shape != (d,) else beta.shape)
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma + beta

    def rule(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead)
        gb = g.sum(axis=lead)
        gx_hat = g * gamma
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return out, rule


@_kernel(Kernel.EMBEDDING_LOOKUP)
def _embedding(table, ids=None):
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise _shape_error(Kernel.EMBEDDING_LOOKUP, table.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        bad = int(ids.max()) if ids.max() >= table.shape[0] else int(ids.min())
        raise IndexError(f"embedding_lookup: index {bad} out of range for vocabulary size {table.shape[0]}")
    out = table[ids]

    def rule(g):
        full = np.zeros_like(table)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return out, rule


@_kernel(Kernel.REVERSE_LASTDIM)
def _reverse(x):
    if x.ndim == 0:
        raise _shape_error(Kernel.REVERSE_LASTDIM, x.shape)
    return np.flip(x, -1).copy(), lambda g: (np.flip(g, -1).copy(),)


@_kernel(Kernel.RESHAPE)
def _reshape(x, shape=None):
    try:
        out = x.reshape(shape)
    except ValueError:
        raise _shape_error(Kernel.RESHAPE, x.shape, shape) from None
    return out, lambda g: (g.reshape(x.shape),)


@_kernel(Kernel.PERMUTE)
def _permute(x, axes=None):
    if sorted(axes) != list(range(x.ndim)):
        raise _shape_error(Kernel.PERMUTE, x.shape, axes)
    inverse = np.argsort(axes)
    return np.transpose(x, axes), lambda g: (np.transpose(g, inverse),)


@_kernel(Kernel.REPEAT_LASTDIM)
def _repeat(x, repeats=1):
    if x.ndim == 0 or repeats < 1:
        raise _shape_error(Kernel.REPEAT_LASTDIM, x.shape)
    out = np.repeat(x, repeats, axis=-1)
    return out, lambda g: (g.reshape(*x.shape, repeats).sum(axis=-1),)


@_kernel(Kernel.CROSS_ENTROPY)
def _cross_entropy(logits, targets=None, weights=None):
    """Weighted mean of -log softmax(logits)[target] over rows of a 2-D array."""
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != logits.shape[:1]:
        raise _shape_error(Kernel.CROSS_ENTROPY, logits.shape, targets.shape)
    w = np.ones(len(targets), dtype=logits.dtype) if weights is None else np.asarray(weights, dtype=logits.dtype)
    total = w.sum()
    if total <= 0:
        raise ValueError("cross_entropy: every position is masked")
    z = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logz
    rows = np.arange(len(targets))
    out = np.asarray(-(w * logp[rows, targets]).sum() / total, dtype=logits.dtype)

    def rule(g):
        p = np.exp(logp)
        p[rows, targets] -= 1.0
        return (p * (w / total * g)[:, None],)

    return out, rule


@_kernel(Kernel.CUMAX)
def _cumax(x):
    """cumsum(softmax(x)), normalised by its own last partial sum.

    Partial sums of non-negative terms never decrease under rounding, so the
    result is exactly monotone, inside [0, 1], and ends at exactly 1.
    """
    if x.ndim == 0 or x.shape[-1] == 0:
        raise _shape_error(Kernel.CUMAX, x.shape)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    partial = np.cumsum(e, axis=-1)
    out = partial / partial[..., -1:]
    s = e / partial[..., -1:]

    def rule(g):
        gs = np.flip(np.cumsum(np.flip(g, -1), axis=-1), -1)
        return (s * (gs - (gs * s).sum(axis=-1, keepdims=True)),)

    return out, rule


# ---------------------------------------------------------------------------
# Functional front-end


def matmul(a, b):
    return kernel_apply(Kernel.MATMUL, a, b)


def add(a, b):
    return kernel_apply(Kernel.ADD, a, b)


def mul(a, b):
    return kernel_apply(Kernel.MUL, a, b)


def scale(x, factor: float):
    return kernel_apply(Kernel.SCALE, x, factor=factor)


def sigmoid(x):
    return kernel_apply(Kernel.SIGMOID, x)


def tanh(x):
    return kernel_apply(Kernel.TANH, x)


def relu(x):
    return kernel_apply(Kernel.RELU, x)


def softmax(x):
    return kernel_apply(Kernel.SOFTMAX_LASTDIM, x)


def cumsum(x):
    return kernel_apply(Kernel.CUMSUM_LASTDIM, x)


def sum_lastdim(x):
    return kernel_apply(Kernel.SUM_LASTDIM, x)


def mean(x):
    return kernel_apply(Kernel.MEAN, x)


def sum_all(x):
    return kernel_apply(Kernel.SUM_ALL, x)


def concat(xs: Sequence):
    return kernel_apply(Kernel.CONCAT_LASTDIM, *xs)


def slice_(x, index):
    return kernel_apply(Kernel.SLICE, x, index=index)


def transpose_last_two(x):
    return kernel_apply(Kernel.TRANSPOSE_LAST_TWO, x)


def mask_fill(x, mask, value: float = MASK_VALUE):
    return kernel_apply(Kernel.MASK_FILL, x, mask=mask, value=value)


def layer_norm(x, gamma, beta, eps: float = 1e-5):
    return kernel_apply(Kernel.LAYER_NORM, x, gamma, beta, eps=eps)


def embedding_lookup(table, ids):
    return kernel_apply(Kernel.EMBEDDING_LOOKUP, table, ids=ids)


def reverse_lastdim(x):
    return kernel_apply(Kernel.REVERSE_LASTDIM, x)


def reshape(x, shape):
    return kernel_apply(Kernel.RESHAPE, x, shape=tuple(shape))


def permute(x, axes):
    return kernel_apply(Kernel.PERMUTE, x, axes=tuple(axes))


def repeat_lastdim(x, repeats: int):
    return kernel_apply(Kernel.REPEAT_LASTDIM, x, repeats=int(repeats))


def cross_entropy(logits, targets, weights=None):
    return kernel_apply(Kernel.CROSS_ENTROPY, logits, targets=targets, weights=weights)


def cumax(logits):
    """Cumulative softmax: monotone non-decreasing gate in [0, 1] ending at 1."""
    return kernel_apply(Kernel.CUMAX, logits)


# ---------------------------------------------------------------------------
# Finite-difference oracle


def grad_check(f: Callable[[Tensor], Tensor], point, eps: float = 1e-5) -> float:
    """Largest relative gap between the tape gradient of ``f`` and central differences.

    The error per coordinate is ``|a - n| / max(1, |a| + |n|)``. ``point`` is
    not modified.
    """
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(base.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(x)
        if y.data.size != 1:
            raise ValueError(f"grad_check: f must return a scalar, got shape {y.shape}")
        backward(y, tape)
    analytic = np.zeros_like(base) if x.grad is None else x.grad

    numeric = np.empty_like(base)
    flat = numeric.reshape(-1)
    for i in range(base.size):
        probe = base.copy().reshape(-1)
        probe[i] += eps
        up = float(f(Tensor(probe.reshape(base.shape))).data)
        probe[i] -= 2 * eps
        down = float(f(Tensor(probe.reshape(base.shape))).data)
        flat[i] = (up - down) / (2 * eps)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic) + np.abs(numeric))
    return float(err.max()) if err.size else 0.0
