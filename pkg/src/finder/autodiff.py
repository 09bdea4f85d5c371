"""Dense float32 tensors with tape-based reverse-mode differentiation.

Covers exactly the operations the downstream models need: matmul, 1D
convolution, max-pooling, batchnorm, the elementwise family (relu, sigmoid,
log, pow, scalar add/mul), softmax, dropout, reshape/concat/gather and
reductions. Reductions and contractions accumulate in float64 and store
float32.

Recording: ops executed inside a ``with Tape() as tape:`` block append nodes
in execution order, which is already a topological order of the graph;
``backward`` walks it once in reverse. Ops run outside any tape do plain
forward math (inference mode).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .backend import kernels
from .errors import (
    ConfigError,
    ContractError,
    DegenerateBatchError,
    InputTooShortError,
    NumericDomainError,
    ShapeMismatchError,
    TapeError,
)

DTYPE = np.float32


class Tensor:
    """N-d float32 array, optionally a differentiable leaf.

    ``data`` is treated as immutable once wrapped (training updates write
    fresh arrays via ``assign_``); ``grad`` is the only mutable slot and is
    populated on requires_grad leaves by ``backward``.
    """

    __slots__ = ("data", "requires_grad", "grad", "is_leaf")

    def __init__(self, data, requires_grad: bool = False, _leaf: bool = True):
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.is_leaf = _leaf

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def assign_(self, new_data: np.ndarray) -> None:
        """Replace the value in place (optimizer updates). Shape must match."""
        if new_data.shape != self.data.shape:
            raise ShapeMismatchError("assign_", new_data.shape, self.data.shape)
        self.data = np.asarray(new_data, dtype=DTYPE)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output: Tensor, inputs: tuple[Tensor, ...], backward_fn):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Single-owner record of ops, in execution (= topological) order."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self.consumed = False
        self._output_ids: set[int] = set()

    def record(self, output: Tensor, inputs: tuple[Tensor, ...],
               backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> None:
        self.nodes.append(_Node(output, inputs, backward_fn))
        self._output_ids.add(id(output))

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap an op result, recording it if a tape is active and grads can flow."""
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track, _leaf=False)
    if track:
        tape.record(out, inputs, backward_fn)
    return out


def backward(loss: Tensor, tape: Tape) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf's ``.grad``.

    Returns the leaf gradient map as well. A tape can be walked once;
    re-invocation raises.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if tape.consumed:
        raise TapeError("backward: tape already consumed; build a fresh tape per step")
    if id(loss) not in tape._output_ids:
        raise TapeError("backward: loss was not produced under this tape")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaf_grads: dict[Tensor, np.ndarray] = {}
    for node in reversed(tape.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue  # this node does not feed the loss
        for inp, g in zip(node.inputs, node.backward_fn(g_out)):
            if g is None or not inp.requires_grad:
                continue
            g = np.asarray(g, dtype=DTYPE)
            if inp.is_leaf:
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += g
                leaf_grads[inp] = inp.grad
            else:
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
    return leaf_grads


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeMismatchError("add", a.shape, b.shape) from None

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeMismatchError("mul", a.shape, b.shape) from None

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), bwd)


def add_scalar(x: Tensor, c: float) -> Tensor:
    return _make(x.data + DTYPE(c), (x,), lambda g: (g,))


def mul_scalar(x: Tensor, c: float) -> Tensor:
    c = DTYPE(c)
    return _make(x.data * c, (x,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product with float64 accumulation."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    data = (a.data.astype(np.float64) @ b.data.astype(np.float64)).astype(DTYPE)

    def bwd(g):
        g64 = g.astype(np.float64)
        da = (g64 @ b.data.T.astype(np.float64)).astype(DTYPE)
        db = (a.data.T.astype(np.float64) @ g64).astype(DTYPE)
        return da, db

    return _make(data, (a, b), bwd)


# ---------------------------------------------------------------------------
# elementwise family


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0)
    mask = x.data > 0
    return _make(data, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        data = (1.0 / (1.0 + np.exp(-x.data.astype(np.float64)))).astype(DTYPE)
    return _make(data, (x,), lambda g: (g * data * (1.0 - data),))


def _check_positive(op: str, arr: np.ndarray) -> None:
    flat = arr.reshape(-1)
    bad = np.flatnonzero(~(flat > 0))
    if bad.size:
        raise NumericDomainError(op, int(bad[0]), float(flat[bad[0]]))


def log(x: Tensor) -> Tensor:
    _check_positive("log", x.data)
    data = np.log(x.data)
    return _make(data, (x,), lambda g: (g / x.data,))


def power(x: Tensor, exponent: float) -> Tensor:
    p = float(exponent)
    if p != int(p):
        _check_positive(f"pow({p})", x.data)
    elif p < 0:
        flat = x.data.reshape(-1)
        bad = np.flatnonzero(flat == 0)
        if bad.size:
            raise NumericDomainError(f"pow({p})", int(bad[0]), 0.0)
    data = np.power(x.data, DTYPE(p))

    def bwd(g):
        return (g * p * np.power(x.data, DTYPE(p - 1.0)),)

    return _make(data, (x,), bwd)


def softmax(x: Tensor) -> Tensor:
    """Row softmax over the last axis, max-shifted, float64 internals."""
    z = x.data.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y64 = e / e.sum(axis=-1, keepdims=True)
    data = y64.astype(DTYPE)

    def bwd(g):
        dot = np.sum(g * data, axis=-1, keepdims=True, dtype=np.float64).astype(DTYPE)
        return (data * (g - dot),)

    return _make(data, (x,), bwd)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: scale kept units by 1/(1-p) at train time."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must be in [0,1), got {p}")
    if p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p).astype(DTYPE) / DTYPE(1.0 - p)
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    data = x.data.reshape(shape)
    return _make(data, (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), bwd)


def gather_rows(x: Tensor, indices: np.ndarray) -> Tensor:
    """out[i] = x[i, indices[i]] for a 2-D tensor."""
    idx = np.asarray(indices, dtype=np.int64)
    if x.data.ndim != 2 or idx.shape != (x.shape[0],):
        raise ShapeMismatchError("gather_rows", x.shape, idx.shape)
    rows = np.arange(x.shape[0])
    data = x.data[rows, idx]

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        return (gx,)

    return _make(data, (x,), bwd)


# ---------------------------------------------------------------------------
# reductions


def sum_(x: Tensor, axis: int | None = None) -> Tensor:
    data = np.sum(x.data, axis=axis, dtype=np.float64).astype(DTYPE)

    def bwd(g):
        if axis is None:
            return (np.full_like(x.data, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(data, (x,), bwd)


def mean_(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return mul_scalar(sum_(x, axis=axis), 1.0 / n)


# ---------------------------------------------------------------------------
# structured ops (kernel-backed)


def _pad_same(x: np.ndarray, k: int) -> tuple[np.ndarray, int]:
    left = (k - 1) // 2
    right = k - 1 - left
    return np.pad(x, ((0, 0), (0, 0), (left, right))), left


def conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None, padding: str = "valid") -> Tensor:
    """Stride-1 cross-correlation.

    ``x`` is (B, Cin, L) or (Cin, L) for a single sample; ``w`` is
    (Cout, Cin, K). 'same' zero-pads to keep L; 'valid' yields L-K+1.
    """
    if padding not in ("same", "valid"):
        raise ConfigError(f"conv1d padding must be 'same' or 'valid', got {padding!r}")
    single = x.data.ndim == 2
    xd = x.data[None] if single else x.data
    if xd.ndim != 3 or w.data.ndim != 3 or xd.shape[1] != w.shape[1]:
        raise ShapeMismatchError("conv1d", x.shape, w.shape)
    k, length = w.shape[2], xd.shape[2]
    if padding == "valid":
        if k > length:
            raise InputTooShortError(k, length)
        xp, left = xd, 0
    else:
        xp, left = _pad_same(xd, k)
    krn = kernels()
    y = krn.conv1d_forward(np.ascontiguousarray(xp), np.ascontiguousarray(w.data))
    if bias is not None:
        if bias.shape != (w.shape[0],):
            raise ShapeMismatchError("conv1d bias", bias.shape, (w.shape[0],))
        y = y + bias.data[None, :, None]

    lp = xp.shape[2]

    def bwd(g):
        g = np.ascontiguousarray(g[None] if single else g)
        gx_pad = krn.conv1d_backward_input(g, np.ascontiguousarray(w.data), lp)
        gx = gx_pad[:, :, left:left + length]
        gw = krn.conv1d_backward_weight(np.ascontiguousarray(xp), g)
        gb = None
        if bias is not None:
            gb = np.sum(g, axis=(0, 2), dtype=np.float64).astype(DTYPE)
        if single:
            gx = gx[0]
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, w, bias) if bias is not None else (x, w)
    return _make(y[0] if single else y, inputs, bwd)


def maxpool1d(x: Tensor, pool: int) -> Tensor:
    """Non-overlapping window max over the trailing axis; remainder dropped."""
    if pool < 1:
        raise ConfigError(f"pool size must be >= 1, got {pool}")
    single = x.data.ndim == 2
    xd = x.data[None] if single else x.data
    if xd.ndim != 3:
        raise ShapeMismatchError("maxpool1d", x.shape, ("B", "C", "L"))
    krn = kernels()
    y, idx = krn.maxpool1d_forward(np.ascontiguousarray(xd), pool)
    length = xd.shape[2]

    def bwd(g):
        g = np.ascontiguousarray(g[None] if single else g)
        gx = krn.maxpool1d_backward(g, idx, length)
        return (gx[0] if single else gx,)

    return _make(y[0] if single else y, (x,), bwd)


class BatchNormState:
    """Running statistics for one batchnorm layer (buffers, not parameters)."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros(channels, dtype=DTYPE)
        self.running_var = np.ones(channels, dtype=DTYPE)
        self.momentum = momentum
        self.eps = eps

    def copy(self) -> "BatchNormState":
        out = BatchNormState(len(self.running_mean), self.momentum, self.eps)
        out.running_mean = self.running_mean.copy()
        out.running_var = self.running_var.copy()
        return out


def batchnorm1d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
                mode: str = "train") -> Tensor:
    """Channel-wise batchnorm over (B, C, L): normalize over batch and length.

    Train mode uses batch statistics (biased variance) and updates the running
    stats with the unbiased estimate; eval mode applies the running stats.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"batchnorm mode must be 'train' or 'eval', got {mode!r}")
    xd = x.data
    if xd.ndim != 3 or gamma.shape != (xd.shape[1],) or beta.shape != (xd.shape[1],):
        raise ShapeMismatchError("batchnorm1d", x.shape, gamma.shape, beta.shape)
    b, c, length = xd.shape
    n = b * length
    eps = state.eps

    if mode == "train":
        if n < 2:
            raise DegenerateBatchError(
                f"batchnorm train mode needs >= 2 elements per channel, got {n}")
        mean = np.mean(xd, axis=(0, 2), dtype=np.float64)
        var = np.var(xd.astype(np.float64), axis=(0, 2))
        m = state.momentum
        state.running_mean = ((1 - m) * state.running_mean + m * mean).astype(DTYPE)
        unbiased = var * n / (n - 1)
        state.running_var = ((1 - m) * state.running_var + m * unbiased).astype(DTYPE)
    else:
        mean = state.running_mean.astype(np.float64)
        var = state.running_var.astype(np.float64)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = ((xd.astype(np.float64) - mean[None, :, None]) * inv_std[None, :, None])
    data = (xhat * gamma.data.astype(np.float64)[None, :, None]
            + beta.data.astype(np.float64)[None, :, None]).astype(DTYPE)

    def bwd(g):
        g64 = g.astype(np.float64)
        dgamma = np.sum(g64 * xhat, axis=(0, 2)).astype(DTYPE)
        dbeta = np.sum(g64, axis=(0, 2)).astype(DTYPE)
        gsc = g64 * gamma.data.astype(np.float64)[None, :, None]
        if mode == "eval":
            dx = (gsc * inv_std[None, :, None]).astype(DTYPE)
        else:
            sum_g = np.sum(gsc, axis=(0, 2), keepdims=True)
            sum_gx = np.sum(gsc * xhat, axis=(0, 2), keepdims=True)
            dx = (inv_std[None, :, None] * (gsc - sum_g / n - xhat * sum_gx / n)).astype(DTYPE)
        return dx, dgamma, dbeta

    return _make(data, (x, gamma, beta), bwd)
