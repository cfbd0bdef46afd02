"""Dense float64 tensors with tape-based reverse-mode differentiation and Adam.

Every differentiable computation in the model is built from the primitives
registered here. A primitive computes its forward value with numpy and, when
any input requires a gradient, records a :class:`TapeNode` holding the inputs
and a closure that maps the upstream gradient to per-input gradients.

Example
-------
>>> w = Tensor([1.0, 2.0], requires_grad=True)
>>> loss = (w * w).sum()
>>> backward(loss)
>>> w.grad
array([2., 4.])
"""

from __future__ import annotations

import contextlib
import math
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DomainError, OracleError, ShapeError

__all__ = [
    "Tensor",
    "TapeNode",
    "AdamState",
    "Adam",
    "GradCheckReport",
    "PRIMITIVES",
    "apply_primitive",
    "record",
    "backward",
    "adam_step",
    "check_gradient",
    "no_grad",
    "as_tensor",
    "concat",
    "dump_tensor",
    "load_tensor",
]

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording on the current thread."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class TapeNode:
    """One recorded primitive application."""

    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op: str, inputs: tuple, backward: Callable):
        self.op = op
        self.inputs = inputs
        # backward(upstream) -> sequence of input gradients (None = no gradient)
        self.backward = backward

    def __repr__(self):
        return f"TapeNode({self.op!r}, n_inputs={len(self.inputs)})"


class Tensor:
    """A float64 array with an optional gradient slot.

    Parameters
    ----------
    data : array_like
        Values; copied and cast to float64.
    requires_grad : bool
        Whether :func:`backward` should populate ``grad`` for this tensor.
    name : str, optional
        Label used in checkpoints and error messages.
    """

    __slots__ = ("data", "requires_grad", "grad", "node", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: TapeNode | None = None
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.grad = None
        t.node = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return apply_primitive("add", [self, other])

    def __radd__(self, other):
        return apply_primitive("add", [other, self])

    def __sub__(self, other):
        return apply_primitive("sub", [self, other])

    def __rsub__(self, other):
        return apply_primitive("sub", [other, self])

    def __mul__(self, other):
        return apply_primitive("mul", [self, other])

    def __rmul__(self, other):
        return apply_primitive("mul", [other, self])

    def __truediv__(self, other):
        return apply_primitive("div", [self, other])

    def __rtruediv__(self, other):
        return apply_primitive("div", [other, self])

    def __neg__(self):
        return apply_primitive("neg", [self])

    def __matmul__(self, other):
        return apply_primitive("matmul", [self, other])

    def __rmatmul__(self, other):
        return apply_primitive("matmul", [other, self])

    def __pow__(self, exponent: float):
        return apply_primitive("pow", [self], exponent=exponent)

    def __getitem__(self, index):
        return apply_primitive("slice", [self], index=index)

    # named ops ------------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return apply_primitive("sum", [self], axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return apply_primitive("mean", [self], axis=axis, keepdims=keepdims)

    def var(self, axis=None, keepdims=False):
        return apply_primitive("var", [self], axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return apply_primitive("max", [self], axis=axis, keepdims=keepdims)

    def exp(self):
        return apply_primitive("exp", [self])

    def log(self):
        return apply_primitive("log", [self])

    def sigmoid(self):
        return apply_primitive("sigmoid", [self])

    def tanh(self):
        return apply_primitive("tanh", [self])

    def relu(self):
        return apply_primitive("relu", [self])

    def softmax(self, axis=-1):
        return apply_primitive("softmax", [self], axis=axis)

    def clip(self, lo=None, hi=None):
        return apply_primitive("clip", [self], lo=lo, hi=hi)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return apply_primitive("transpose", [self], axes=axes or None)

    @property
    def T(self):
        return self.transpose()

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply_primitive("reshape", [self], shape=shape)

    def broadcast_to(self, shape):
        return apply_primitive("broadcast", [self], shape=tuple(shape))


def as_tensor(x) -> Tensor:
    """Return ``x`` unchanged if it is a Tensor, else wrap it as a constant."""
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# primitive registry

PRIMITIVES: dict[str, Callable] = {}


def _primitive(name):
    def register(fn):
        PRIMITIVES[name] = fn
        return fn

    return register


def record(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap a forward value and, if needed, push its backward rule on the tape.

    This is the single extension point for new primitives; ``backward_fn``
    receives the upstream gradient and returns one gradient (or None) per input.
    """
    if not np.all(np.isfinite(out)):
        raise DomainError(f"{op}: non-finite forward value")
    t = Tensor._wrap(out)
    if _grad_enabled() and any(x.requires_grad for x in inputs):
        t.requires_grad = True
        t.node = TapeNode(op, tuple(inputs), backward_fn)
    return t


def apply_primitive(op: str, inputs: Sequence, **kwargs) -> Tensor:
    """Apply the registered primitive ``op`` to ``inputs``."""
    try:
        fn = PRIMITIVES[op]
    except KeyError:
        raise ContractError(f"unknown primitive {op!r}") from None
    return fn(*[as_tensor(x) for x in inputs], **kwargs)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def _axis_count(op, x, axis):
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if n == 0:
        raise DomainError(f"{op}: empty reduction axis for shape {x.shape}")
    return n


def _expand(g, x_shape, axis, keepdims):
    """Re-insert reduced axes so ``g`` broadcasts against the input."""
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(x_shape)), x_shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = sorted(a % len(x_shape) for a in axes)
        for a in axes:
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, x_shape)


@_primitive("add")
def _add(a, b):
    _broadcast_shape("add", a, b)
    return record("add", a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


@_primitive("sub")
def _sub(a, b):
    _broadcast_shape("sub", a, b)
    return record("sub", a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


@_primitive("mul")
def _mul(a, b):
    _broadcast_shape("mul", a, b)
    return record("mul", a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


@_primitive("div")
def _div(a, b):
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    out = a.data / b.data
    return record("div", out, (a, b),
                  lambda g: (_unbroadcast(g / b.data, a.shape),
                             _unbroadcast(-g * out / b.data, b.shape)))


@_primitive("neg")
def _neg(a):
    return record("neg", -a.data, (a,), lambda g: (-g,))


@_primitive("pow")
def _pow(a, exponent):
    if exponent < 0 and np.any(a.data == 0):
        raise DomainError("pow: zero base with negative exponent")
    if not float(exponent).is_integer() and np.any(a.data < 0):
        raise DomainError("pow: negative base with fractional exponent")
    out = a.data ** exponent
    return record("pow", out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


@_primitive("matmul")
def _matmul(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot contract shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch shapes {a.shape} and {b.shape} do not broadcast") from None

    flat = b.ndim == 2 and a.ndim > 2  # weight matrix: fold batch axes into one GEMM

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            if flat:
                ga = (g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(a.shape)
            else:
                ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    if flat:
        out = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))
    else:
        out = a.data @ b.data
    return record("matmul", out, (a, b), bw)


@_primitive("exp")
def _exp(a):
    out = np.exp(a.data)
    return record("exp", out, (a,), lambda g: (g * out,))


@_primitive("log")
def _log(a):
    if a.size == 0:
        raise DomainError("log: empty input")
    if np.any(a.data <= 0):
        raise DomainError("log: non-positive input")
    return record("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def _sigmoid_np(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@_primitive("sigmoid")
def _sigmoid(a):
    out = _sigmoid_np(a.data)
    return record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


@_primitive("tanh")
def _tanh(a):
    out = np.tanh(a.data)
    return record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


@_primitive("relu")
def _relu(a):
    pos = a.data > 0
    return record("relu", np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


@_primitive("clip")
def _clip(a, lo=None, hi=None):
    out = np.clip(a.data, lo, hi)
    inside = out == a.data
    return record("clip", out, (a,), lambda g: (g * inside,))


@_primitive("softmax")
def _softmax(a, axis=-1):
    if a.ndim == 0 or a.shape[axis] == 0:
        raise DomainError(f"softmax: empty axis for shape {a.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return record("softmax", out, (a,),
                  lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


@_primitive("concat")
def _concat(*xs, axis=0):
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[x.shape for x in xs]}") from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record("concat", out, xs, bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    return apply_primitive("concat", list(tensors), axis=axis)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


@_primitive("slice")
def _slice(a, index=None):
    try:
        out = a.data[index]
    except IndexError as exc:
        raise ShapeError(f"slice: {exc} for shape {a.shape}") from None
    basic = _is_basic_index(index)

    def bw(g):
        full = np.zeros(a.shape)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return record("slice", np.array(out, dtype=np.float64), (a,), bw)


@_primitive("transpose")
def _transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    if sorted(a_ % max(a.ndim, 1) for a_ in axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inv = np.argsort(axes)
    return record("transpose", np.transpose(a.data, axes), (a,),
                  lambda g: (np.transpose(g, inv),))


@_primitive("reshape")
def _reshape(a, shape=None):
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return record("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


@_primitive("broadcast")
def _broadcast(a, shape=None):
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast {a.shape} to {shape}") from None
    return record("broadcast", np.array(out), (a,), lambda g: (_unbroadcast(g, a.shape),))


@_primitive("sum")
def _sum(a, axis=None, keepdims=False):
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims), dtype=np.float64)
    return record("sum", out, (a,), lambda g: (np.array(_expand(g, a.shape, axis, keepdims)),))


@_primitive("mean")
def _mean(a, axis=None, keepdims=False):
    n = _axis_count("mean", a, axis)
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims), dtype=np.float64)
    return record("mean", out, (a,), lambda g: (_expand(g, a.shape, axis, keepdims) / n,))


@_primitive("var")
def _var(a, axis=None, keepdims=False):
    n = _axis_count("var", a, axis)
    centred = a.data - a.data.mean(axis=axis, keepdims=True)
    out = np.asarray((centred**2).mean(axis=axis, keepdims=keepdims), dtype=np.float64)
    return record("var", out, (a,),
                  lambda g: (_expand(g, a.shape, axis, keepdims) * 2.0 * centred / n,))


@_primitive("max")
def _max(a, axis=None, keepdims=False):
    _axis_count("max", a, axis)
    if axis is None:
        flat = a.data.reshape(-1)
        idx = int(np.argmax(flat))  # lowest index on ties
        out = np.asarray(flat[idx]).reshape((1,) * a.ndim if keepdims else ())

        def bw(g):
            full = np.zeros(a.size)
            full[idx] = np.sum(g)
            return (full.reshape(a.shape),)

        return record("max", out, (a,), bw)

    ax = axis % a.ndim
    idx = np.expand_dims(np.argmax(a.data, axis=ax), ax)
    out = np.take_along_axis(a.data, idx, axis=ax)
    if not keepdims:
        out = np.squeeze(out, ax)

    def bw(g):
        full = np.zeros(a.shape)
        gg = g if keepdims else np.expand_dims(g, ax)
        np.put_along_axis(full, idx, gg, axis=ax)
        return (full,)

    return record("max", out, (a,), bw)


# ---------------------------------------------------------------------------
# reverse pass


def _topological_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for x in t.node.inputs:
                if x.requires_grad and id(x) not in seen:
                    stack.append((x, False))
    return order


def backward(loss: Tensor, inputs: Iterable[Tensor] | None = None) -> None:
    """Populate ``.grad`` of every leaf reachable from the scalar ``loss``.

    Gradients accumulate into existing ``.grad`` arrays. Leaves listed in
    ``inputs`` that the loss does not depend on receive a zero gradient.
    """
    if loss.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss has no recorded tape")
    grads = {id(loss): np.ones(loss.shape)}
    for t in reversed(_topological_order(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            if not np.all(np.isfinite(g)):
                raise DomainError(f"backward: non-finite gradient for {t.name or t}")
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for x, gx in zip(t.node.inputs, t.node.backward(g)):
            if gx is None or not x.requires_grad:
                continue
            prev = grads.get(id(x))
            grads[id(x)] = gx if prev is None else prev + gx
    for x in inputs or ():
        if x.requires_grad and x.grad is None:
            x.grad = np.zeros(x.shape)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Per-parameter Adam moments and hyper-parameters."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4

    @classmethod
    def for_param(cls, p: Tensor, **kwargs) -> "AdamState":
        return cls(m=np.zeros(p.shape), v=np.zeros(p.shape), **kwargs)


def adam_step(params: Sequence[Tensor], states: Sequence[AdamState]) -> None:
    """One Adam update in place; gradients are zeroed afterwards.

    Weight decay is folded into the gradient before the moment update
    (``g <- g + weight_decay * theta``).
    """
    if len(params) != len(states):
        raise ContractError("adam_step: params and states are not aligned")
    for p, s in zip(params, states):
        if p.grad is None:
            raise ContractError(f"adam_step: missing gradient for {p.name or p}")
        if s.m.shape != p.shape:
            raise ContractError(f"adam_step: state shape {s.m.shape} != param shape {p.shape}")
    for p, s in zip(params, states):
        g = p.grad + s.weight_decay * p.data if s.weight_decay else p.grad
        s.t += 1
        s.m = s.beta1 * s.m + (1.0 - s.beta1) * g
        s.v = s.beta2 * s.v + (1.0 - s.beta2) * g * g
        m_hat = s.m / (1.0 - s.beta1**s.t)
        v_hat = s.v / (1.0 - s.beta2**s.t)
        p.data = p.data - s.lr * m_hat / (np.sqrt(v_hat) + s.eps)
        p.grad = None


class Adam:
    """Convenience wrapper holding one :class:`AdamState` per parameter.

    ``no_decay`` names parameters (by ``Tensor.name``) that get zero weight decay.
    """

    def __init__(self, params: Sequence[Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=1e-4, no_decay: Iterable[str] = ()):
        self.params = list(params)
        skip = set(no_decay)
        self.states = [
            AdamState.for_param(p, lr=lr, beta1=betas[0], beta2=betas[1], eps=eps,
                                weight_decay=0.0 if p.name in skip else weight_decay)
            for p in self.params
        ]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, self.states)


# ---------------------------------------------------------------------------
# finite-difference oracle


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_checked: int
    worst: tuple = field(default=())

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def __bool__(self):
        return self.passed


def check_gradient(f: Callable[..., Tensor], x: Tensor | Sequence[Tensor], h: float = 1e-5,
                   tol: float = 1e-4, n_probe: int | None = None, seed: int = 0,
                   floor: float = 1e-6) -> GradCheckReport:
    """Compare :func:`backward` gradients of scalar ``f`` with central differences.

    The per-coordinate error is ``|a - n| / max(|a|, |n|, floor)``; ``floor``
    keeps near-zero gradients from dividing rounding noise by zero. With
    ``n_probe`` set, only that many random coordinates per input are probed.
    """
    if h <= 0:
        raise ContractError("check_gradient: step h must be positive")
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.requires_grad = True
        t.grad = None
    out = f(*xs) if not isinstance(x, Tensor) else f(x)
    backward(out, inputs=xs)
    analytic = [t.grad.copy() for t in xs]

    def evaluate():
        with no_grad():
            val = (f(*xs) if not isinstance(x, Tensor) else f(x)).data
        val = float(np.sum(val))
        if not math.isfinite(val):
            raise OracleError("check_gradient: function is non-finite near x")
        return val

    rng = np.random.default_rng(seed)
    worst, worst_at, count = 0.0, (), 0
    for k, t in enumerate(xs):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if n_probe is not None and n_probe < flat.size:
            coords = rng.choice(flat.size, size=n_probe, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            fp = evaluate()
            flat[c] = orig - h
            fm = evaluate()
            flat[c] = orig
            num = (fp - fm) / (2.0 * h)
            ana = analytic[k].reshape(-1)[c]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            count += 1
            if err > worst:
                worst, worst_at = float(err), (k, int(c), float(ana), float(num))
    for t in xs:
        t.grad = None
    return GradCheckReport(max_rel_error=worst, tol=tol, n_checked=count, worst=worst_at)


# ---------------------------------------------------------------------------
# binary dump: u64 ndim, u64 dims, f64 data (all little-endian)


def dump_tensor(t: Tensor | np.ndarray) -> bytes:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
    head = struct.pack("<Q", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f8").tobytes()


def load_tensor(buf: bytes, offset: int = 0) -> tuple[Tensor, int]:
    """Parse one dumped tensor from ``buf`` at ``offset``; returns (tensor, new offset)."""
    from .errors import LengthError

    if len(buf) < offset + 8:
        raise LengthError("tensor dump truncated in header")
    (ndim,) = struct.unpack_from("<Q", buf, offset)
    offset += 8
    if len(buf) < offset + 8 * ndim:
        raise LengthError("tensor dump truncated in dims")
    dims = struct.unpack_from(f"<{ndim}Q", buf, offset)
    offset += 8 * ndim
    n = int(np.prod(dims)) if ndim else 1
    if len(buf) < offset + 8 * n:
        raise LengthError("tensor dump truncated in payload")
    data = np.frombuffer(buf, dtype="<f8", count=n, offset=offset).astype(np.float64)
    return Tensor(data.reshape(dims)), offset + 8 * n
