"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything downstream (the graph layers, the recurrent cells, the training
loop) is built from the small op set in this module. Each operation computes
its value eagerly with numpy and, when a gradient tape is active and an input
is tracked, records how to push adjoints back through itself. Gradients are
then obtained by replaying the tape once in reverse.

Shapes are explicit: binary operations accept operands of identical shape, or
one scalar (shape ()) operand, and nothing else. There is no silent
broadcasting; structural ops (tile_rows, sum_rows, concat, reshape,
transpose) express every shape change.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

_LN10 = math.log(10.0)


class NumericsError(Exception):
    """Base class for every error raised by this module."""


class ShapeError(NumericsError):
    """Operand shapes do not satisfy an operation's contract."""


class DomainError(NumericsError):
    """Operand values lie outside an operation's domain."""


class NonFiniteError(NumericsError):
    """An operation produced NaN or infinity."""


class NonFiniteGradientError(NumericsError):
    """A gradient handed to the optimizer is NaN or infinite."""


class Tensor:
    """Immutable dense array of float64 values.

    Tensors are value objects: no operation mutates an existing tensor, and
    callers must not write through ``values`` after construction. Identity
    (not value) is what the tape tracks, so the same Tensor object can be
    reused freely across operations and its gradient contributions will
    accumulate.
    """

    __slots__ = ("values",)

    def __init__(self, values) -> None:
        arr = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor constructed from non-finite values")
        self.values = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.values.reshape(()))

    def tolist(self):
        return self.values.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    # Arithmetic sugar; the free functions below do the actual work.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(values) -> Tensor:
    """Build a tensor from array-like data (lists, scalars, ndarrays)."""
    return Tensor(values)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return Tensor(np.float64(x))
    raise TypeError(f"expected Tensor or number, got {type(x).__name__}")


# ---------------------------------------------------------------------------
# Gradient tape


class _Record:
    __slots__ = ("out", "parents")

    def __init__(self, out: Tensor, parents: list[tuple[Tensor, Callable]]) -> None:
        self.out = out
        self.parents = parents


_ACTIVE = threading.local()


def active_tape() -> "GradientTape | None":
    """The tape currently recording on this thread, if any."""
    return getattr(_ACTIVE, "tape", None)


_active_tape = active_tape


class GradientTape:
    """Records operations on watched tensors for one reverse pass.

    Use as a context manager; only one tape may be active per thread. Tensors
    become tracked either by an explicit ``watch`` call or by being produced
    from tracked inputs while the tape is active.
    """

    def __init__(self) -> None:
        self._ops: list[_Record] = []
        self._tracked: set[int] = set()
        self._watched: list[Tensor] = []

    def __enter__(self) -> "GradientTape":
        if _active_tape() is not None:
            raise NumericsError("a gradient tape is already active on this thread")
        _ACTIVE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE.tape = None

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            if not isinstance(t, Tensor):
                raise TypeError("watch() takes Tensor arguments")
            if id(t) not in self._tracked:
                self._tracked.add(id(t))
                self._watched.append(t)

    def is_tracked(self, t: Tensor) -> bool:
        return id(t) in self._tracked

    def num_recorded(self) -> int:
        return len(self._ops)


def _finish(op: str, values: np.ndarray, parents: Sequence[tuple[Tensor, Callable]]) -> Tensor:
    """Validate an op's output, wrap it, and record it on the active tape."""
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.values = values
    tape = _active_tape()
    if tape is not None:
        tracked = [(p, fn) for p, fn in parents if id(p) in tape._tracked]
        if tracked:
            tape._tracked.add(id(out))
            tape._ops.append(_Record(out, tracked))
    return out


def backward(loss: Tensor, tape: GradientTape) -> dict[Tensor, Tensor]:
    """Reverse pass: gradients of a scalar loss for every watched tensor.

    Visits each recorded operation exactly once, in reverse order of
    execution. Returns a dict keyed by the watched Tensor objects themselves;
    watched tensors the loss does not depend on get zero gradients.
    """
    if loss.shape != ():
        raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
    if not tape._watched:
        raise NumericsError("tape has no watched tensors")
    if id(loss) not in tape._tracked:
        raise NumericsError("loss was not recorded on this tape")

    adjoints: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for record in reversed(tape._ops):
        up = adjoints.get(id(record.out))
        if up is None:
            continue
        for parent, grad_fn in record.parents:
            contrib = grad_fn(up)
            key = id(parent)
            held = adjoints.get(key)
            adjoints[key] = contrib if held is None else held + contrib

    grads: dict[Tensor, Tensor] = {}
    for t in tape._watched:
        g = adjoints.get(id(t))
        if g is None:
            g = np.zeros(t.shape, dtype=np.float64)
        elif not np.all(np.isfinite(g)):
            raise NonFiniteError("backward produced a non-finite gradient")
        grads[t] = _finish("gradient", np.asarray(g, dtype=np.float64), ())
    return grads


# ---------------------------------------------------------------------------
# Binary elementwise ops


def _binary_values(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are incompatible")


def _scalar_aware(grad: np.ndarray, operand: Tensor) -> np.ndarray:
    # A scalar operand paired with an array one receives the summed gradient.
    if operand.shape == () and grad.shape != ():
        return grad.sum()
    return grad


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_values("add", a, b)
    out = a.values + b.values
    return _finish(
        "add",
        out,
        [(a, lambda g: _scalar_aware(g, a)), (b, lambda g: _scalar_aware(g, b))],
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_values("sub", a, b)
    out = a.values - b.values
    return _finish(
        "sub",
        out,
        [(a, lambda g: _scalar_aware(g, a)), (b, lambda g: _scalar_aware(-g, b))],
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_values("mul", a, b)
    av, bv = a.values, b.values
    out = av * bv
    return _finish(
        "mul",
        out,
        [(a, lambda g: _scalar_aware(g * bv, a)), (b, lambda g: _scalar_aware(g * av, b))],
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_values("div", a, b)
    av, bv = a.values, b.values
    if np.any(bv == 0.0):
        raise DomainError("div: denominator contains zero")
    out = av / bv
    return _finish(
        "div",
        out,
        [
            (a, lambda g: _scalar_aware(g / bv, a)),
            (b, lambda g: _scalar_aware(-g * out / bv, b)),
        ],
    )


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _finish("neg", -a.values, [(a, lambda g: -g)])


# ---------------------------------------------------------------------------
# Unary elementwise ops


def absolute(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    sign = np.sign(a.values)
    return _finish("abs", np.abs(a.values), [(a, lambda g: g * sign)])


def sqrt(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.values < 0.0):
        raise DomainError("sqrt: negative operand")
    out = np.sqrt(a.values)
    if np.any(out == 0.0):
        # The derivative 1/(2*sqrt(x)) blows up at zero; refuse early rather
        # than emit infinities during the reverse pass.
        raise DomainError("sqrt: operand contains zero, derivative undefined")
    return _finish("sqrt", out, [(a, lambda g: g * (0.5 / out))])


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.values > 0.0
    return _finish("relu", np.where(mask, a.values, 0.0), [(a, lambda g: g * mask)])


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    v = a.values
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return _finish("sigmoid", out, [(a, lambda g: g * out * (1.0 - out))])


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.values)
    return _finish("tanh", out, [(a, lambda g: g * (1.0 - out * out))])


def log10p1(a: Tensor) -> Tensor:
    """Elementwise log10(x + 1), the transform applied to counts."""
    a = _as_tensor(a)
    if np.any(a.values <= -1.0):
        raise DomainError("log10p1: operand must exceed -1")
    xp1 = a.values + 1.0
    return _finish("log10p1", np.log10(xp1), [(a, lambda g: g / (xp1 * _LN10))])


def pow10m1(a: Tensor) -> Tensor:
    """Elementwise 10**x - 1, the inverse of log10p1."""
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        p = np.power(10.0, a.values)
    if not np.all(np.isfinite(p)):
        raise NonFiniteError("pow10m1 overflowed")
    return _finish("pow10m1", p - 1.0, [(a, lambda g: g * p * _LN10)])


# ---------------------------------------------------------------------------
# Structural ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} vs {b.shape}")
    av, bv = a.values, b.values
    out = av @ bv
    return _finish(
        "matmul",
        out,
        [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)],
    )


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a 2-d operand, got {a.shape}")
    return _finish("transpose", a.values.T, [(a, lambda g: g.T)])


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    if int(np.prod(shape, dtype=np.int64)) != a.values.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    orig = a.shape
    return _finish("reshape", a.values.reshape(shape), [(a, lambda g: g.reshape(orig))])


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along axis 0 or 1. Gradients split back per input."""
    if axis not in (0, 1):
        raise ShapeError(f"concat supports axis 0 or 1, got {axis}")
    parts = [_as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    ndim = parts[0].ndim
    if ndim not in (1, 2) or any(p.ndim != ndim for p in parts):
        raise ShapeError("concat operands must share rank 1 or 2")
    if axis == 1 and ndim != 2:
        raise ShapeError("concat on axis 1 needs 2-d operands")
    other = 1 - axis
    if ndim == 2 and any(p.shape[other] != parts[0].shape[other] for p in parts):
        raise ShapeError("concat operands disagree on the non-concatenated axis")
    out = np.concatenate([p.values for p in parts], axis=axis)

    parents = []
    offset = 0
    for p in parts:
        extent = p.shape[axis] if p.ndim == 2 else p.shape[0]
        lo, hi = offset, offset + extent
        if ndim == 1:
            parents.append((p, (lambda g, lo=lo, hi=hi: g[lo:hi])))
        elif axis == 0:
            parents.append((p, (lambda g, lo=lo, hi=hi: g[lo:hi, :])))
        else:
            parents.append((p, (lambda g, lo=lo, hi=hi: g[:, lo:hi])))
        offset = hi
    return _finish("concat", out, parents)


def tile_rows(vec: Tensor, n: int) -> Tensor:
    """Stack a length-d vector into an (n, d) matrix of identical rows."""
    vec = _as_tensor(vec)
    if vec.ndim != 1:
        raise ShapeError(f"tile_rows needs a 1-d operand, got {vec.shape}")
    if n < 1:
        raise ShapeError("tile_rows needs n >= 1")
    out = np.broadcast_to(vec.values, (n, vec.shape[0])).copy()
    return _finish("tile_rows", out, [(vec, lambda g: g.sum(axis=0))])


def sum_rows(a: Tensor) -> Tensor:
    """Column sums of an (n, d) matrix, returned as a length-d vector."""
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"sum_rows needs a 2-d operand, got {a.shape}")
    n = a.shape[0]
    d = a.shape[1]
    return _finish(
        "sum_rows", a.values.sum(axis=0), [(a, lambda g: np.broadcast_to(g, (n, d)))]
    )


def sum_all(a: Tensor) -> Tensor:
    """Sum of every element, returned as a scalar tensor."""
    a = _as_tensor(a)
    shape = a.shape
    return _finish("sum_all", a.values.sum(), [(a, lambda g: np.broadcast_to(g, shape))])


# ---------------------------------------------------------------------------
# Parameter initialization


def kaiming_uniform(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator) -> Tensor:
    """Uniform(-b, b) with b = sqrt(6 / fan_in)."""
    if fan_in <= 0:
        raise ShapeError("kaiming_uniform needs fan_in >= 1")
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape))


def uniform_symmetric(shape: tuple[int, ...], bound: float, rng: np.random.Generator) -> Tensor:
    """Uniform(-bound, bound), the recurrent-cell initialization."""
    if not (bound > 0.0) or not math.isfinite(bound):
        raise DomainError("uniform_symmetric needs a positive finite bound")
    return Tensor(rng.uniform(-bound, bound, size=shape))


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Mutable optimizer state shared across steps.

    ``lr`` may be lowered between steps (plateau decay); the moment estimates
    and the step counter persist for the life of a training run.
    """

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, Tensor],
    state: AdamState,
) -> dict[str, Tensor]:
    """One Adam update. Returns fresh tensors; the inputs are not mutated."""
    if params.keys() != grads.keys():
        missing = sorted(set(params) ^ set(grads))
        raise NumericsError(f"adam_step: parameter/gradient name mismatch: {missing}")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    updated: dict[str, Tensor] = {}
    for name in params:
        p = params[name].values
        g = grads[name].values
        if g.shape != p.shape:
            raise ShapeError(
                f"adam_step: gradient shape {g.shape} does not match parameter "
                f"{name!r} of shape {p.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.first_moment[name] = m
        state.second_moment[name] = v
        step = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        updated[name] = Tensor(p - step)
    return updated
