"""Minimal reverse-mode autodiff over float64 numpy arrays.

Operations run eagerly.  While a :class:`GradientTape` is active (``with
GradientTape() as tape:``) every operation whose inputs require gradients is
appended to the tape together with a closure mapping the output gradient to
input gradients.  :func:`backward` replays the tape in reverse.

A tensor's ``grad`` of ``None`` means zero.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


class UnknownKernelError(KeyError):
    pass


class TapeError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class DiffTensor:
    """Dense float64 array that can take part in a gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.node = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"DiffTensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.data)

    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_lift(other), -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    @property
    def T(self):
        return transpose(self)


def _lift(x) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else DiffTensor(x)


def constant(x) -> DiffTensor:
    return DiffTensor(x)


def parameter(x, name: str | None = None) -> DiffTensor:
    return DiffTensor(np.array(x, dtype=np.float64), requires_grad=True, name=name)


# --------------------------------------------------------------------------
# tape


class Node(NamedTuple):
    tag: str
    inputs: tuple
    output: DiffTensor
    backward: Callable


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> "GradientTape | None":
    stack = _stack()
    return stack[-1] if stack else None


class GradientTape:
    """Ordered record of operations; confined to the thread that opened it."""

    def __init__(self):
        self.ops: list[Node] = []
        self.consumed = False

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self):
        return len(self.ops)

    def record(self, tag, inputs, output, backward_fn) -> int:
        self.ops.append(Node(tag, tuple(inputs), output, backward_fn))
        return len(self.ops) - 1

    def reset(self):
        self.ops.clear()
        self.consumed = False


@contextmanager
def no_tape():
    """Suspend recording for the enclosed block."""
    _stack().append(None)
    try:
        yield
    finally:
        _stack().pop()


class RowGrad(NamedTuple):
    """Sparse gradient for a row-gathered table: add ``values`` at ``rows``."""

    rows: np.ndarray
    values: np.ndarray


def _accumulate(t: DiffTensor, g):
    if isinstance(g, RowGrad):
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        np.add.at(t.grad, g.rows, g.values)
    elif t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.data.shape)
    else:
        t.grad += g


def backward(tape: GradientTape, loss: DiffTensor, params: Sequence[DiffTensor] = ()):
    """Populate ``grad`` on every tensor reachable from ``loss``.

    Gradients accumulate into existing ``grad`` buffers.  Tensors in
    ``params`` that the loss does not reach get an explicit zero gradient.
    """
    if tape.consumed:
        raise TapeError("backward already ran on this tape; call tape.reset() first")
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape.consumed = True
    if loss.node is not None:
        loss.grad = np.ones_like(loss.data)
        for node in reversed(tape.ops[: loss.node + 1]):
            g = node.output.grad
            if g is None:
                continue
            grads = node.backward(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is not None and inp.requires_grad:
                    _accumulate(inp, gi)
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


# --------------------------------------------------------------------------
# kernels


KERNELS: dict[str, Callable] = {}


def kernel(tag):
    def register(fn):
        KERNELS[tag] = fn
        return fn

    return register


def forward_kernel(tag: str, inputs: Sequence[DiffTensor], **attrs) -> DiffTensor:
    """Evaluate kernel ``tag`` and record it on the active tape."""
    try:
        fn = KERNELS[tag]
    except KeyError:
        raise UnknownKernelError(f"unknown kernel {tag!r}") from None
    out, bwd = fn(*[t.data for t in inputs], **attrs)
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    result = DiffTensor(out, requires_grad=needs)
    if needs:
        result.node = tape.record(tag, inputs, result, bwd)
    return result


def _shape_error(tag, *arrays, why=""):
    shapes = ", ".join(str(a.shape) for a in arrays)
    msg = f"{tag}: incompatible shapes {shapes}"
    return ShapeError(f"{msg} ({why})" if why else msg)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


@kernel("matmul")
def _matmul(a, b):
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise _shape_error("matmul", a, b, why="inner dimensions must agree")
    out = a @ b

    def bwd(g):
        if a.ndim == 2 and b.ndim == 2:
            return g @ b.T, a.T @ g
        if a.ndim == 1 and b.ndim == 2:
            return b @ g, np.outer(a, g)
        if a.ndim == 2:
            return np.outer(g, b), a.T @ g
        return g * b, g * a

    return out, bwd


@kernel("add")
def _add(a, b):
    try:
        out = a + b
    except ValueError:
        raise _shape_error("add", a, b) from None
    return out, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


@kernel("mul")
def _mul(a, b):
    try:
        out = a * b
    except ValueError:
        raise _shape_error("mul", a, b) from None
    return out, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


@kernel("scale")
def _scale(a, k=1.0):
    return a * k, lambda g: (g * k,)


@kernel("concat")
def _concat(*arrays):
    lead = arrays[0].shape[:-1]
    if any(x.shape[:-1] != lead for x in arrays):
        raise _shape_error("concat", *arrays, why="leading dimensions must agree")
    out = np.concatenate(arrays, axis=-1)
    bounds = np.cumsum([0] + [x.shape[-1] for x in arrays])

    def bwd(g):
        return tuple(g[..., bounds[k]:bounds[k + 1]] for k in range(len(arrays)))

    return out, bwd


@kernel("stack")
def _stack_rows(*arrays):
    if any(x.shape != arrays[0].shape for x in arrays):
        raise _shape_error("stack", *arrays, why="all shapes must match")
    return np.stack(arrays), lambda g: tuple(g[k] for k in range(len(arrays)))


@kernel("relu")
def _relu(a):
    on = a > 0
    return np.where(on, a, 0.0), lambda g: (g * on,)


@kernel("tanh")
def _tanh(a):
    y = np.tanh(a)
    return y, lambda g: (g * (1.0 - y * y),)


@kernel("sigmoid")
def _sigmoid(a):
    y = 0.5 * (1.0 + np.tanh(0.5 * a))
    return y, lambda g: (g * y * (1.0 - y),)


def softmax_array(a):
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@kernel("softmax")
def _softmax(a):
    y = softmax_array(a)
    return y, lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),)


@kernel("log_softmax")
def _log_softmax(a):
    shifted = a - a.max(axis=-1, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    p = np.exp(y)
    return y, lambda g: (g - p * g.sum(axis=-1, keepdims=True),)


@kernel("mean")
def _mean(a, axis=None):
    out = a.mean(axis=axis)
    count = a.size if axis is None else a.shape[axis]

    def bwd(g):
        g = g if axis is None else np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape) / count,)

    return out, bwd


@kernel("sum")
def _sum(a, axis=None):
    out = a.sum(axis=axis)

    def bwd(g):
        g = g if axis is None else np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return out, bwd


@kernel("transpose")
def _transpose(a):
    if a.ndim != 2:
        raise _shape_error("transpose", a, why="expects a matrix")
    return a.T, lambda g: (g.T,)


@kernel("slice_last")
def _slice_last(a, start=0, stop=None):
    out = a[..., start:stop]

    def bwd(g):
        full = np.zeros_like(a)
        full[..., start:stop] = g
        return (full,)

    return out, bwd


@kernel("pick")
def _pick(a, index=()):
    out = a[index]

    def bwd(g):
        full = np.zeros_like(a)
        np.add.at(full, index, g)
        return (full,)

    return out, bwd


@kernel("gather_rows")
def _gather_rows(table, rows=None):
    rows = np.asarray(rows, dtype=np.int64)
    if table.ndim != 2 or (rows.size and (rows.min() < 0 or rows.max() >= table.shape[0])):
        raise _shape_error("gather_rows", table, why="row index out of range")
    return table[rows], lambda g: (RowGrad(rows, g),)


@kernel("layer_norm")
def _layer_norm(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain + bias
    d = x.shape[-1]

    def bwd(g):
        gx = g * gain
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    if gain.shape[-1] != d or bias.shape[-1] != d:
        raise _shape_error("layer_norm", x, gain, bias)
    return out, bwd


@kernel("l2norm")
def _l2norm(*arrays):
    total = math.sqrt(sum(float(np.sum(a * a)) for a in arrays))

    def bwd(g):
        if total == 0.0:
            return tuple(np.zeros_like(a) for a in arrays)
        return tuple(g * a / total for a in arrays)

    return np.array(total), bwd


@kernel("lstm")
def _lstm(xg, U, reverse=False):
    if xg.ndim != 2 or U.ndim != 2 or U.shape[1] != 4 * U.shape[0] or xg.shape[1] != U.shape[1]:
        raise _shape_error("lstm", xg, U, why="need xg (n, 4d) and U (d, 4d)")
    xg = np.ascontiguousarray(xg)
    U = np.ascontiguousarray(U)
    H, gates, cells, tanh_cells = kernels.lstm_forward(xg, U, reverse)

    def bwd(g):
        return kernels.lstm_backward(np.ascontiguousarray(g), U, H, gates, cells,
                                     tanh_cells, reverse)

    return H, bwd


# thin named wrappers ------------------------------------------------------


def matmul(a, b):
    return forward_kernel("matmul", [a, b])


def add(a, b):
    return forward_kernel("add", [a, b])


def mul(a, b):
    return forward_kernel("mul", [a, b])


def scale(a, k: float):
    return forward_kernel("scale", [a], k=float(k))


def concat(tensors):
    return forward_kernel("concat", list(tensors))


def stack(tensors):
    return forward_kernel("stack", list(tensors))


def relu(a):
    return forward_kernel("relu", [a])


def tanh(a):
    return forward_kernel("tanh", [a])


def sigmoid(a):
    return forward_kernel("sigmoid", [a])


def softmax(a):
    return forward_kernel("softmax", [a])


def log_softmax(a):
    return forward_kernel("log_softmax", [a])


def mean(a, axis=None):
    return forward_kernel("mean", [a], axis=axis)


def sum_(a, axis=None):
    return forward_kernel("sum", [a], axis=axis)


def transpose(a):
    return forward_kernel("transpose", [a])


def slice_last(a, start, stop):
    return forward_kernel("slice_last", [a], start=start, stop=stop)


def pick(a, index):
    return forward_kernel("pick", [a], index=index)


def gather_rows(table, rows):
    return forward_kernel("gather_rows", [table], rows=rows)


def layer_norm(x, gain, bias, eps=1e-5):
    return forward_kernel("layer_norm", [x, gain, bias], eps=eps)


def l2norm(tensors):
    return forward_kernel("l2norm", list(tensors))


def lstm(xg, U, reverse=False):
    return forward_kernel("lstm", [xg, U], reverse=bool(reverse))


# --------------------------------------------------------------------------
# gradient checking


def gradient_errors(f: Callable[[], DiffTensor], params: Sequence[DiffTensor],
                    step: float = 1e-5) -> list[float]:
    """Per-tensor max relative error between tape gradients and central differences.

    ``f`` must rebuild the scalar from ``params`` on every call.  The error
    for one coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    for p in params:
        p.zero_grad()
    with GradientTape() as tape:
        loss = f()
    backward(tape, loss, params)
    analytic = [p.grad.copy() for p in params]

    def probe():
        value = float(f().data)
        if not math.isfinite(value):
            raise NonFiniteError("non-finite value while probing finite differences")
        return value

    errors = []
    for p, ga in zip(params, analytic):
        worst = 0.0
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = probe()
            flat[k] = orig - step
            down = probe()
            flat[k] = orig
            numeric = (up - down) / (2 * step)
            err = abs(gflat[k] - numeric) / max(1.0, abs(gflat[k]))
            worst = max(worst, err)
        errors.append(worst)
    return errors


def finite_diff_check(f, params, step: float = 1e-5) -> float:
    errors = gradient_errors(f, params, step)
    return max(errors, default=0.0)


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
        return state


def adam_step(params: Sequence[DiffTensor], state: AdamState):
    """One bias-corrected Adam update, in place; gradients are cleared afterwards."""
    if len(params) != len(state.m):
        raise ShapeError(f"adam: {len(params)} parameters but state holds {len(state.m)}")
    for p, m in zip(params, state.m):
        if p.data.shape != m.shape:
            raise ShapeError(f"adam: parameter {p.name or ''} shape {p.data.shape} "
                             f"drifted from state shape {m.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, m, v in zip(params, state.m, state.v):
        if p.grad is None:
            g = 0.0
        else:
            g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None
