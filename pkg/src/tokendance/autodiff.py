"""Minimal reverse-mode automatic differentiation on numpy arrays.

Every primitive records a node on the active :class:`Tape`. Because nodes are
appended in creation order the tape is already topologically sorted, so the
backward pass is a single reverse sweep that visits each node once.

Arrays are float32 by default. :func:`precision` switches the dtype used for
newly created tensors, which the gradient checker uses to run both the analytic
and the finite-difference side in float64.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "AutodiffError",
    "ShapeError",
    "NonFiniteError",
    "Tensor",
    "Parameter",
    "Tape",
    "backward",
    "precision",
    "get_dtype",
    "no_grad",
]


class AutodiffError(RuntimeError):
    pass


class ShapeError(AutodiffError, ValueError):
    pass


class NonFiniteError(AutodiffError, FloatingPointError):
    pass


_DTYPE = [np.float32]
_TAPES: list["Tape"] = []
_GRAD_ENABLED = [True]
_CHECK_FINITE = [True]


def get_dtype():
    return _DTYPE[-1]


@contextlib.contextmanager
def precision(dtype):
    """Create new tensors with ``dtype`` inside the block."""
    _DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DTYPE.pop()


@contextlib.contextmanager
def no_grad():
    """Run primitives without recording them (inference)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


@contextlib.contextmanager
def finite_checks(enabled: bool):
    _CHECK_FINITE.append(enabled)
    try:
        yield
    finally:
        _CHECK_FINITE.pop()


class Tensor:
    """An array plus the bookkeeping needed to differentiate through it."""

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f" or arr.dtype != get_dtype():
            arr = arr.astype(get_dtype())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operators delegate to the primitive functions defined below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)


class Parameter(Tensor):
    """A trainable leaf tensor with a stable name."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; primitives executed inside the block are recorded
    when at least one input requires a gradient.
    """

    nodes: list[Node] = field(default_factory=list)
    consumed: bool = False

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=get_dtype()))


def _record(op: str, inputs: tuple, out_data: np.ndarray, vjp) -> Tensor:
    if _CHECK_FINITE[-1] and not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"non-finite values produced by node '{op}'")
    needs = _GRAD_ENABLED[-1] and any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs and _TAPES:
        _TAPES[-1].nodes.append(Node(op, inputs, out, vjp))
    return out


def backward(tape: Tape, loss: Tensor, accumulate: bool = True) -> dict[str, np.ndarray]:
    """Propagate d(loss) back through ``tape``.

    Returns gradients keyed by parameter name; when ``accumulate`` is set they
    are also stored on each parameter's ``.grad``.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.nodes or not any(n.output is loss for n in reversed(tape.nodes)):
        raise AutodiffError("backward called before a forward pass recorded this loss on the tape")
    if tape.consumed:
        raise AutodiffError("tape has already been consumed by a backward pass")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.vjp(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise ShapeError(f"gradient shape {gi.shape} != input shape {t.shape} at node '{node.op}'")
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if isinstance(t, Parameter):
                leaves[key] = t
    tape.consumed = True
    out: dict[str, np.ndarray] = {}
    for key, p in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        name = p.name or f"param_{key}"
        out[name] = g
        if accumulate:
            p.grad = g if p.grad is None else p.grad + g
    return out


# ---------------------------------------------------------------------------
# helpers


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op: str, *shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError as exc:
        raise ShapeError(f"node '{op}': incompatible shapes {shapes}") from exc


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a.shape, b.shape)
    return _record("add", (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a.shape, b.shape)
    return _record("sub", (a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a.shape, b.shape)
    return _record("mul", (a, b), a.data * b.data,
                   lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                              _unbroadcast(g * a.data, b.shape) if b.requires_grad else None))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a.shape, b.shape)
    out = a.data / b.data
    return _record("div", (a, b), out,
                   lambda g: (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                              _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record("neg", (a,), -a.data, lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    out = a.data ** p
    return _record("pow", (a,), out, lambda g: (g * p * a.data ** (p - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record("exp", (a,), out, lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _record("log", (a,), np.log(a.data), lambda g: (g / a.data,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _record("sigmoid", (a,), out, lambda g: (g * out * (1 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record("tanh", (a,), out, lambda g: (g * (1 - out * out),))


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    out = a.data * s
    return _record("silu", (a,), out, lambda g: (g * (s * (1 + a.data * (1 - s))),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.logaddexp(0, x).astype(x.dtype)
    return _record("softplus", (a,), out, lambda g: (g * _sigmoid(x),))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _record("abs", (a,), np.abs(a.data), lambda g: (g * np.sign(a.data),))


_TAYLOR_CUTOFF = 1e-4


def expm1_over_x(a) -> Tensor:
    """(exp(x) - 1) / x with the removable singularity at 0 filled in.

    Below |x| < 1e-4 a two-term Taylor expansion 1 + x/2 is used.
    """
    a = as_tensor(a)
    x = a.data
    small = np.abs(x) < _TAYLOR_CUTOFF
    safe = np.where(small, 1.0, x)
    em1 = np.expm1(safe)
    out = np.where(small, 1.0 + 0.5 * x, em1 / safe).astype(x.dtype)

    def vjp(g):
        # d/dx = (x e^x - e^x + 1) / x^2 ; series 1/2 + x/3 near 0
        e = em1 + 1.0
        d = np.where(small, 0.5 + x / 3.0, (safe * e - em1) / (safe * safe))
        return (g * d.astype(x.dtype),)

    return _record("expm1_over_x", (a,), out, vjp)


def round_st(a) -> Tensor:
    """Round half away from zero; the backward pass is the identity."""
    a = as_tensor(a)
    out = (np.sign(a.data) * np.floor(np.abs(a.data) + 0.5)).astype(a.data.dtype)
    return _record("round_st", (a,), out, lambda g: (g,))


def stop_gradient(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.data.copy())


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record("sum", (a,), np.asarray(out), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"node 'reshape': cannot reshape {a.shape} to {shape}") from exc
    return _record("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _record("swapaxes", (a,), np.swapaxes(a.data, ax1, ax2),
                   lambda g: (np.swapaxes(g, ax1, ax2),))


def expand_dims(a, axis: int) -> Tensor:
    a = as_tensor(a)
    return reshape(a, np.expand_dims(a.data, axis).shape)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]

    def vjp(g):
        full = np.zeros_like(a.data)
        if _is_fancy(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _record("slice", (a,), np.array(out, copy=True), vjp)


def _is_fancy(index) -> bool:
    idx = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in idx)


def permute_last(a, perm) -> Tensor:
    """Reorder the last axis by the permutation ``perm``."""
    a = as_tensor(a)
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(a.shape[-1])):
        raise ShapeError(f"node 'permute_last': not a permutation of {a.shape[-1]} columns")
    inv = np.argsort(perm)
    return _record("permute_last", (a,), a.data[..., perm], lambda g: (g[..., inv],))


def reverse(a, axis: int = 1) -> Tensor:
    """Reverse along ``axis`` (time reversal for (B, T, C) tensors)."""
    a = as_tensor(a)
    return _record("reverse", (a,), np.flip(a.data, axis).copy(),
                   lambda g: (np.flip(g, axis).copy(),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"node 'concat': incompatible shapes {[t.shape for t in ts]}") from exc
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _record("concat", ts, out, vjp)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [expand_dims(as_tensor(t), axis) for t in tensors]
    return concat(ts, axis=axis)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"node 'matmul': cannot multiply {a.shape} by {b.shape}")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _record("matmul", (a, b), out, vjp)


def linear(x, weight, bias=None) -> Tensor:
    """x (..., in) @ weight (in, out) + bias (out)."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record("softmax", (a,), out, vjp)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _record("log_softmax", (a,), out, vjp)


def cross_entropy(logits, targets) -> Tensor:
    """Mean cross-entropy of integer ``targets`` under ``logits`` (..., K)."""
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.int64)
    if t.shape != logits.shape[:-1]:
        raise ShapeError(f"node 'cross_entropy': targets {t.shape} vs logits {logits.shape}")
    k = logits.shape[-1]
    if t.size and (t.min() < 0 or t.max() >= k):
        raise ShapeError(f"node 'cross_entropy': target outside [0, {k})")
    flat = logits.data.reshape(-1, k)
    z = flat - flat.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    tf = t.reshape(-1)
    n = tf.size
    loss = np.asarray((lse - z[np.arange(n), tf]).mean(), dtype=flat.dtype)

    def vjp(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), tf] -= 1.0
        return ((g / n) * p.reshape(logits.shape),)

    return _record("cross_entropy", (logits,), loss, vjp)


def embedding(table, ids) -> Tensor:
    table = as_tensor(table)
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"node 'embedding': index outside [0, {table.shape[0]})")
    out = table.data[idx]

    def vjp(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _record("embedding", (table,), out, vjp)


def mse_loss(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"node 'mse': shapes {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray((diff * diff).mean(), dtype=diff.dtype)
    return _record("mse", (pred, target), out,
                   lambda g: (g * 2.0 * diff / n, -g * 2.0 * diff / n))


def l1_loss(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"node 'l1': shapes {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    s = np.sign(diff)
    return _record("l1", (pred, target), np.asarray(np.abs(diff).mean(), dtype=diff.dtype),
                   lambda g: (g * s / n, -g * s / n))


# ---------------------------------------------------------------------------
# convolutions (channels-last: x is (B, T, C))


def _conv_out_len(t: int, k: int, stride: int, padding: int) -> int:
    return (t + 2 * padding - k) // stride + 1


def conv1d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x (B, T, Cin) with weight (K, Cin, Cout)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise ShapeError(f"node 'conv1d': x {x.shape} incompatible with weight {weight.shape}")
    bsz, t, cin = x.shape
    k, _, cout = weight.shape
    to = _conv_out_len(t, k, stride, padding)
    if to < 1:
        raise ShapeError(f"node 'conv1d': input length {t} too short for kernel {k}")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)[:, ::stride][:, :to]
    # win: (B, To, Cin, K) -> (B, To, K, Cin)
    cols = np.ascontiguousarray(np.swapaxes(win, 2, 3)).reshape(bsz * to, k * cin)
    w2 = weight.data.reshape(k * cin, cout)
    out = (cols @ w2).reshape(bsz, to, cout)
    inputs = (x, weight) if bias is None else (x, weight, as_tensor(bias))
    if bias is not None:
        out = out + inputs[2].data

    def vjp(g):
        g2 = g.reshape(bsz * to, cout)
        gx = gw = gb = None
        if x.requires_grad:
            dcols = (g2 @ w2.T).reshape(bsz, to, k, cin)
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[:, j:j + stride * (to - 1) + 1:stride] += dcols[:, :, j]
            gx = dxp[:, padding:padding + t]
        if weight.requires_grad:
            gw = (cols.T @ g2).reshape(k, cin, cout)
        if bias is not None:
            gb = g2.sum(axis=0)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _record("conv1d", inputs, out, vjp)


def conv_transpose1d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution of x (B, Tin, Cin) with weight (K, Cin, Cout).

    Output length is (Tin - 1) * stride - 2 * padding + K.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise ShapeError(f"node 'conv_transpose1d': x {x.shape} incompatible with weight {weight.shape}")
    bsz, tin, cin = x.shape
    k, _, cout = weight.shape
    full_len = (tin - 1) * stride + k
    tout = full_len - 2 * padding
    if tout < 1:
        raise ShapeError(f"node 'conv_transpose1d': output length {tout} < 1")
    # (B, Tin, K, Cout)
    contrib = (x.data.reshape(bsz * tin, cin) @ np.swapaxes(weight.data, 0, 1).reshape(cin, k * cout))
    contrib = contrib.reshape(bsz, tin, k, cout)
    full = np.zeros((bsz, full_len, cout), dtype=x.data.dtype)
    for j in range(k):
        full[:, j:j + stride * (tin - 1) + 1:stride] += contrib[:, :, j]
    out = full[:, padding:padding + tout]
    inputs = (x, weight) if bias is None else (x, weight, as_tensor(bias))
    if bias is not None:
        out = out + inputs[2].data

    def vjp(g):
        gfull = np.zeros((bsz, full_len, cout), dtype=g.dtype)
        gfull[:, padding:padding + tout] = g
        # gather (B, Tin, K, Cout)
        gcols = np.stack([gfull[:, j:j + stride * (tin - 1) + 1:stride] for j in range(k)], axis=2)
        gx = gw = gb = None
        if x.requires_grad:
            wt = np.swapaxes(weight.data, 0, 1).reshape(cin, k * cout)
            gx = (gcols.reshape(bsz * tin, k * cout) @ wt.T).reshape(bsz, tin, cin)
        if weight.requires_grad:
            gw = (x.data.reshape(bsz * tin, cin).T @ gcols.reshape(bsz * tin, k * cout))
            gw = np.swapaxes(gw.reshape(cin, k, cout), 0, 1)
        if bias is not None:
            gb = g.sum(axis=(0, 1))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _record("conv_transpose1d", inputs, np.ascontiguousarray(out), vjp)


def depthwise_conv1d_causal(x, weight, bias=None) -> Tensor:
    """Per-channel causal convolution: y[t] = sum_j w[j] * x[t - K + 1 + j]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 2 or weight.shape[1] != x.shape[2]:
        raise ShapeError(f"node 'depthwise_conv1d': x {x.shape} incompatible with weight {weight.shape}")
    bsz, t, c = x.shape
    k = weight.shape[0]
    xp = np.pad(x.data, ((0, 0), (k - 1, 0), (0, 0)))
    out = np.zeros_like(x.data)
    for j in range(k):
        out += xp[:, j:j + t] * weight.data[j]
    inputs = (x, weight) if bias is None else (x, weight, as_tensor(bias))
    if bias is not None:
        out = out + inputs[2].data

    def vjp(g):
        gx = gw = gb = None
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[:, j:j + t] += g * weight.data[j]
            gx = dxp[:, k - 1:]
        if weight.requires_grad:
            gw = np.stack([(g * xp[:, j:j + t]).sum(axis=(0, 1)) for j in range(k)])
        if bias is not None:
            gb = g.sum(axis=(0, 1))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _record("depthwise_conv1d", inputs, out, vjp)


# ---------------------------------------------------------------------------
# cumulative associative scan


def _scan_sequential_np(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    h = np.empty_like(b)
    acc = np.zeros_like(b[:, 0])
    for t in range(b.shape[1]):
        acc = a[:, t] * acc + b[:, t]
        h[:, t] = acc
    return h


def _scan_blelloch_np(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Work-efficient up-sweep/down-sweep scan over axis 1.

    Elements are affine maps h -> a*h + b, combined as
    (a2, b2) o (a1, b1) = (a2*a1, a2*b1 + b2).
    """
    t = a.shape[1]
    if t == 1:
        return b.copy()
    size = 1 << (t - 1).bit_length()
    pad = [(0, 0)] * a.ndim
    pad[1] = (0, size - t)
    A = np.pad(a, pad, constant_values=1.0)
    B = np.pad(b, pad, constant_values=0.0)
    # up-sweep: node i accumulates its left sibling subtree ending at i - step
    step = 1
    while step < size:
        right = slice(2 * step - 1, size, 2 * step)
        left = slice(step - 1, size, 2 * step)
        B[:, right] = A[:, right] * B[:, left] + B[:, right]
        A[:, right] = A[:, right] * A[:, left]
        step *= 2
    # down-sweep to the exclusive prefix
    A[:, size - 1] = 1.0
    B[:, size - 1] = 0.0
    step = size // 2
    while step >= 1:
        right = slice(2 * step - 1, size, 2 * step)
        left = slice(step - 1, size, 2 * step)
        la, lb = A[:, left].copy(), B[:, left].copy()
        A[:, left] = A[:, right]
        B[:, left] = B[:, right]
        # right child prefix = (left subtree total) applied after parent prefix
        B[:, right] = la * B[:, right] + lb
        A[:, right] = la * A[:, right]
        step //= 2
    # inclusive: h_t = a_t * h_{t-1} + b_t with exclusive prefix state in B
    return a * B[:, :t] + b


def scan_affine(a: np.ndarray, b: np.ndarray, method: str = "parallel") -> np.ndarray:
    """h_t = a_t * h_{t-1} + b_t along axis 1 with h_{-1} = 0 (no tape)."""
    if method == "sequential":
        return _scan_sequential_np(a, b)
    if method == "parallel":
        return _scan_blelloch_np(a, b)
    raise ValueError(f"unknown scan method {method!r}")


_SCAN_METHOD = ["parallel"]


@contextlib.contextmanager
def scan_method(method: str):
    _SCAN_METHOD.append(method)
    try:
        yield
    finally:
        _SCAN_METHOD.pop()


def linear_scan(a, b, method: str | None = None) -> Tensor:
    """Differentiable first-order linear recurrence along axis 1.

    The adjoint is itself a reverse-time scan with the decay shifted by one:
    lam_t = g_t + a_{t+1} * lam_{t+1};  db_t = lam_t;  da_t = lam_t * h_{t-1}.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape or a.ndim < 2:
        raise ShapeError(f"node 'linear_scan': shapes {a.shape} vs {b.shape}")
    method = method or _SCAN_METHOD[-1]
    h = scan_affine(a.data, b.data, method)

    def vjp(g):
        a_next = np.zeros_like(a.data)
        a_next[:, :-1] = a.data[:, 1:]
        lam = np.flip(scan_affine(np.flip(a_next, 1), np.flip(g, 1), method), 1)
        ga = None
        if a.requires_grad:
            h_prev = np.zeros_like(h)
            h_prev[:, 1:] = h[:, :-1]
            ga = lam * h_prev
        return ga, np.ascontiguousarray(lam)

    return _record("linear_scan", (a, b), h, vjp)


def cumsum(a, axis: int = 1) -> Tensor:
    """Prefix sum along ``axis`` via the scan primitive with unit decay."""
    a = as_tensor(a)
    moved = swapaxes(a, 1, axis) if axis != 1 else a
    ones = Tensor(np.ones_like(moved.data))
    out = linear_scan(ones, moved)
    return swapaxes(out, 1, axis) if axis != 1 else out


# ---------------------------------------------------------------------------
# gradient checking


def numerical_gradient(fn: Callable[[], Tensor], param: Tensor, eps: float = 1e-3,
                       indices: Iterable[tuple] | None = None) -> dict[tuple, float]:
    """Central finite differences of the scalar ``fn()`` w.r.t. entries of ``param``."""
    out = {}
    idx_iter = indices if indices is not None else np.ndindex(*param.shape)
    with no_grad():
        for idx in idx_iter:
            orig = param.data[idx].copy()
            param.data[idx] = orig + eps
            fp = float(np.asarray(fn().data, dtype=np.float64))
            param.data[idx] = orig - eps
            fm = float(np.asarray(fn().data, dtype=np.float64))
            param.data[idx] = orig
            out[idx] = (fp - fm) / (2 * eps)
    return out


def gradcheck(fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-3,
              max_entries: int | None = None, seed: int = 0) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    Runs in float64. ``fn`` must build its graph from ``params`` on each call.
    When ``max_entries`` is given, that many entries per parameter are sampled.
    """
    rng = np.random.default_rng(seed)
    saved = [p.data for p in params]
    flags = [p.requires_grad for p in params]
    try:
        with precision(np.float64):
            for p in params:
                p.data = p.data.astype(np.float64)
                p.requires_grad = True
                p.grad = None
            tape = Tape()
            with tape:
                loss = fn()
            grads = _collect(tape, loss, params)
            worst = 0.0
            for p, ga in zip(params, grads):
                if max_entries is not None and p.data.size > max_entries:
                    flat = rng.choice(p.data.size, size=max_entries, replace=False)
                    idxs = [np.unravel_index(i, p.shape) for i in flat]
                else:
                    idxs = list(np.ndindex(*p.shape))
                num = numerical_gradient(fn, p, eps, idxs)
                for idx, gn in num.items():
                    g = float(ga[idx])
                    denom = max(abs(g), abs(gn), 1e-6)
                    worst = max(worst, abs(g - gn) / denom)
            return worst
    finally:
        for p, d, f in zip(params, saved, flags):
            p.data = d
            p.requires_grad = f
            p.grad = None


def _collect(tape: Tape, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Backward pass returning gradients for arbitrary (possibly unnamed) leaves."""
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                continue
            key = id(t)
            grads[key] = grads[key] + gi if key in grads else gi
    return [grads.get(id(p), np.zeros_like(p.data)) for p in params]


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))
