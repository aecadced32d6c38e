"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy float64 array. While a Tape is active (see
`tape()`), every primitive op appends a backward closure; `backward()`
replays the tape in reverse execution order, which is a reverse
topological order of the graph, and accumulates gradients additively
into `.grad` buffers. With no tape active, the same ops run as plain
numpy math and produce detached tensors — that is how match costs are
computed without gradient recording.

Conventions:
  - gradients of relu/abs at 0 and of min/max ties are the subgradient
    that sends everything to the first argument (0 for relu/abs);
  - tensors are treated as immutable after creation except for `.grad`
    and explicit parameter updates by the optimizer between passes.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .rng import Stream, fold

Array = np.ndarray


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _ensure(other))

    def __radd__(self, other):
        return add(_ensure(other), self)

    def __sub__(self, other):
        return sub(self, _ensure(other))

    def __rsub__(self, other):
        return sub(_ensure(other), self)

    def __mul__(self, other):
        return mul(self, _ensure(other))

    def __rmul__(self, other):
        return mul(_ensure(other), self)

    def __truediv__(self, other):
        return div(self, _ensure(other))

    def __rtruediv__(self, other):
        return div(_ensure(other), self)

    def __neg__(self):
        return mul(self, _ensure(-1.0))

    def __matmul__(self, other):
        return matmul(self, _ensure(other))

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)


@dataclass
class Parameter:
    """A named trainable tensor; names double as checkpoint keys."""

    name: str
    tensor: Tensor

    @property
    def data(self) -> Array:
        return self.tensor.data

    @property
    def grad(self) -> Array:
        return self.tensor.grad


def uniform_init(name: str, shape: tuple[int, ...], fan_in: int, seed: int) -> Parameter:
    """Weight ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)) from a per-name stream."""
    bound = 1.0 / np.sqrt(fan_in)
    data = Stream(fold(seed, "param", name)).uniform_array(shape, -bound, bound)
    return Parameter(name, Tensor(data, requires_grad=True))


def normal_init(name: str, shape: tuple[int, ...], std: float, seed: int) -> Parameter:
    data = Stream(fold(seed, "param", name)).gaussian_array(shape, std)
    return Parameter(name, Tensor(data, requires_grad=True))


def const_init(name: str, shape: tuple[int, ...], value: float) -> Parameter:
    return Parameter(name, Tensor(np.full(shape, value, dtype=np.float64), requires_grad=True))


# ---------------------------------------------------------------------------
# Tape


class Tape:
    """Ordered record of executed primitives (output, backward closure)."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, object]] = []

    def backward(self, root: Tensor) -> None:
        """Seed d(root)/d(root)=1 and replay nodes in reverse order.

        Every recorded node is visited exactly once; tensors that do not
        feed `root` receive only zero contributions, so untouched
        parameters keep whatever their grad buffers already held
        (zeros, after `zero_grad`).
        """
        if root.data.ndim != 0 and root.data.size != 1:
            raise ContractError(f"backward root must be scalar, got shape {root.shape}")
        if not root.requires_grad:
            raise ContractError("backward root does not require grad (was it recorded on a tape?)")
        root.grad += 1.0
        for _out, fn in reversed(self.nodes):
            fn()


_ACTIVE: list[Tape] = []


@contextlib.contextmanager
def tape():
    """Record primitives onto a fresh tape while the context is active."""
    t = Tape()
    _ACTIVE.append(t)
    try:
        yield t
    finally:
        _ACTIVE.pop()


@contextlib.contextmanager
def no_grad():
    """Suspend recording (ops produce detached tensors)."""
    _ACTIVE.append(None)
    try:
        yield
    finally:
        _ACTIVE.pop()


def backward(root: Tensor) -> None:
    if not _ACTIVE or _ACTIVE[-1] is None:
        raise ContractError("backward() needs an active tape (use `with tape():`)")
    _ACTIVE[-1].backward(root)


def _recording() -> bool:
    return bool(_ACTIVE) and _ACTIVE[-1] is not None


def _make_out(data: Array, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap op output; register on the tape when recording and needed."""
    if _recording() and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        _ACTIVE[-1].nodes.append((out, backward_fn(out)))
        return out
    return Tensor(data)


def _ensure(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _reduce_to(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum out broadcast dimensions so `grad` matches `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _accum(t: Tensor, g: Array) -> None:
    if t.requires_grad:
        t.grad += _reduce_to(g, t.data.shape)


# ---------------------------------------------------------------------------
# Primitive ops


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    _broadcast_check(a, b, "add")

    def bw(out):
        def fn():
            _accum(a, out.grad)
            _accum(b, out.grad)
        return fn

    return _make_out(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    _broadcast_check(a, b, "sub")

    def bw(out):
        def fn():
            _accum(a, out.grad)
            _accum(b, -out.grad)
        return fn

    return _make_out(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    _broadcast_check(a, b, "mul")

    def bw(out):
        def fn():
            _accum(a, out.grad * b.data)
            _accum(b, out.grad * a.data)
        return fn

    return _make_out(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    _broadcast_check(a, b, "div")

    def bw(out):
        def fn():
            _accum(a, out.grad / b.data)
            _accum(b, -out.grad * a.data / (b.data * b.data))
        return fn

    return _make_out(a.data / b.data, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims disagree between {a.shape} and {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not broadcast") from None

    def bw(out):
        def fn():
            if a.requires_grad:
                a.grad += _reduce_to(out.grad @ np.swapaxes(b.data, -1, -2), a.shape)
            if b.requires_grad:
                b.grad += _reduce_to(np.swapaxes(a.data, -1, -2) @ out.grad, b.shape)
        return fn

    return _make_out(data, (a, b), bw)


def relu(x: Tensor) -> Tensor:
    def bw(out):
        def fn():
            _accum(x, out.grad * (x.data > 0.0))
        return fn

    return _make_out(np.maximum(x.data, 0.0), (x,), bw)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def bw(out):
        def fn():
            _accum(x, out.grad * y * (1.0 - y))
        return fn

    return _make_out(y, (x,), bw)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)

    def bw(out):
        def fn():
            _accum(x, out.grad * y)
        return fn

    return _make_out(y, (x,), bw)


def log(x: Tensor) -> Tensor:
    def bw(out):
        def fn():
            _accum(x, out.grad / x.data)
        return fn

    return _make_out(np.log(x.data), (x,), bw)


def absolute(x: Tensor) -> Tensor:
    def bw(out):
        def fn():
            _accum(x, out.grad * np.sign(x.data))
        return fn

    return _make_out(np.abs(x.data), (x,), bw)


def minimum(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    _broadcast_check(a, b, "minimum")
    take_a = a.data <= b.data

    def bw(out):
        def fn():
            _accum(a, out.grad * take_a)
            _accum(b, out.grad * ~take_a)
        return fn

    return _make_out(np.minimum(a.data, b.data), (a, b), bw)


def maximum(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    _broadcast_check(a, b, "maximum")
    take_a = a.data >= b.data

    def bw(out):
        def fn():
            _accum(a, out.grad * take_a)
            _accum(b, out.grad * ~take_a)
        return fn

    return _make_out(np.maximum(a.data, b.data), (a, b), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not (-x.ndim <= axis < x.ndim):
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(out):
        def fn():
            g = out.grad
            _accum(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))
        return fn

    return _make_out(y, (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not (-x.ndim <= axis < x.ndim):
        raise ShapeError(f"log_softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    sm = np.exp(y)

    def bw(out):
        def fn():
            g = out.grad
            _accum(x, g - sm * g.sum(axis=axis, keepdims=True))
        return fn

    return _make_out(y, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(out):
        def fn():
            g = out.grad
            if gain.requires_grad:
                gain.grad += _reduce_to(g * xhat, gain.shape)
            if bias.requires_grad:
                bias.grad += _reduce_to(g, bias.shape)
            if x.requires_grad:
                dxhat = g * gain.data
                term = dxhat - dxhat.mean(axis=-1, keepdims=True) \
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
                x.grad += _reduce_to(inv * term, x.shape)
        return fn

    return _make_out(xhat * gain.data + bias.data, (x, gain, bias), bw)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bw(out):
        def fn():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(g, x.shape))
        return fn

    return _make_out(x.data.sum(axis=axis, keepdims=keepdims), (x,), bw)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else x.shape[axis]

    def bw(out):
        def fn():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(g, x.shape) / count)
        return fn

    return _make_out(x.data.mean(axis=axis, keepdims=keepdims), (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    def bw(out):
        def fn():
            _accum(x, out.grad.reshape(x.shape))
        return fn

    return _make_out(x.data.reshape(shape), (x,), bw)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(out):
        def fn():
            _accum(x, out.grad.transpose(inv))
        return fn

    return _make_out(x.data.transpose(axes), (x,), bw)


def swap_last2(x: Tensor) -> Tensor:
    return transpose(x, tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2))


def concat(parts: list[Tensor], axis: int = -1) -> Tensor:
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def bw(out):
        def fn():
            for p, g in zip(parts, np.split(out.grad, offsets, axis=axis)):
                _accum(p, g)
        return fn

    return _make_out(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bw)


def getitem(x: Tensor, idx) -> Tensor:
    """Index with ints/slices (basic indexing); gradient scatters back."""
    def bw(out):
        def fn():
            if x.requires_grad:
                g = np.zeros_like(x.data)
                g[idx] += out.grad
                x.grad += g
        return fn

    return _make_out(x.data[idx], (x,), bw)


def pick(x: Tensor, *index_arrays) -> Tensor:
    """Advanced integer indexing, e.g. pick(logp, rows, cols) -> logp[rows, cols].

    Duplicate indices accumulate additively in the gradient, so this also
    serves as the embedding lookup (pick(table, ids)).
    """
    idx = tuple(np.asarray(ix, dtype=np.intp) for ix in index_arrays)

    def bw(out):
        def fn():
            if x.requires_grad:
                g = np.zeros_like(x.data)
                np.add.at(g, idx, out.grad)
                x.grad += g
        return fn

    return _make_out(x.data[idx], (x,), bw)


# ---------------------------------------------------------------------------
# Gradient checking


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst: str  # "tensor_name[flat_index]"
    n_checked: int

    def __str__(self) -> str:
        return f"max rel err {self.max_rel_err:.3e} at {self.worst} ({self.n_checked} coords)"


def grad_check(forward, wrt, h: float = 1e-5, max_checks_per_tensor: int | None = None,
               seed: int = 0, rel_floor: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients of `forward()` against central differences.

    `forward` must rebuild its graph on every call and return a scalar
    Tensor; `wrt` is an iterable of (name, Tensor). Relative error uses
    |a - fd| / max(|a|, |fd|, rel_floor) so that near-zero gradients do
    not divide by noise. Coordinates are subsampled deterministically
    when `max_checks_per_tensor` is set.
    """
    wrt = list(wrt)
    with tape():
        for _, t in wrt:
            t.zero_grad()
        loss = forward()
        backward(loss)
    analytic = {name: t.grad.copy() for name, t in wrt}

    worst = ("", -1.0)
    n_checked = 0
    with no_grad():
        for name, t in wrt:
            flat = t.data.reshape(-1)
            indices = range(flat.size)
            if max_checks_per_tensor is not None and flat.size > max_checks_per_tensor:
                stream = Stream(fold(seed, "gradcheck", name))
                indices = sorted({stream.below(flat.size) for _ in range(max_checks_per_tensor)})
            for i in indices:
                orig = flat[i]
                flat[i] = orig + h
                f_plus = forward().item()
                flat[i] = orig - h
                f_minus = forward().item()
                flat[i] = orig
                fd = (f_plus - f_minus) / (2.0 * h)
                a = analytic[name].reshape(-1)[i]
                rel = abs(a - fd) / max(abs(a), abs(fd), rel_floor)
                n_checked += 1
                if rel > worst[1]:
                    worst = (f"{name}[{i}]", rel)
    return GradCheckReport(max_rel_err=worst[1], worst=worst[0], n_checked=n_checked)
