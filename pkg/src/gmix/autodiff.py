"""Dense float64 tensors with tape-based reverse-mode differentiation.

Values are numpy float64 arrays. Every operation checks that its result
is finite and, when an operand is attached to a :class:`Tape`, records a
closure routing the output gradient back to the operand slots. A reverse
pass replays the records in exact reverse execution order, so a slot's
gradient is fully accumulated before the record that produced it runs.

Tensors without a tape behave as constants: nothing is recorded and no
gradient bookkeeping happens, which makes evaluation-only forward passes
cheap.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "NonFiniteError",
    "Tape",
    "Tensor",
    "Parameter",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "exp",
    "log",
    "powi",
    "neg",
    "leaky_relu",
    "tsum",
    "tmean",
    "tmax",
    "logsumexp",
    "reshape",
    "backward",
    "clip_global_norm",
    "finite_diff_check",
]


class NonFiniteError(FloatingPointError):
    """A forward operation produced NaN or Inf."""


class Tape:
    """Ordered record of the operations executed in one forward pass."""

    __slots__ = ("_records",)

    def __init__(self) -> None:
        self._records: list[Callable[[], None]] = []

    def __len__(self) -> int:
        return len(self._records)

    def record(self, fn: Callable[[], None]) -> None:
        self._records.append(fn)

    def replay_reverse(self) -> None:
        """Run recorded closures in reverse execution order."""
        for fn in reversed(self._records):
            fn()


class Tensor:
    """A dense float64 array, optionally attached to a tape."""

    __slots__ = ("data", "grad", "tape")

    def __init__(self, data, tape: Tape | None = None) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.tape = tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, n):
        return powi(self, n)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims: bool = False):
        return tmax(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def __repr__(self) -> str:
        tag = ", taped" if self.tape is not None else ""
        return f"Tensor(shape={self.data.shape}{tag})"


class Parameter:
    """Trainable value with a persistent gradient accumulator.

    Gradients accumulate across backward passes until :meth:`zero_grad`
    is called; zeroing is always explicit, never implicit.
    """

    __slots__ = ("value", "grad", "name", "trainable")

    def __init__(self, value, name: str = "", trainable: bool = True) -> None:
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.name = name
        self.trainable = trainable

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def use(self, tape: Tape | None) -> Tensor:
        """Place this parameter on a tape as a leaf tensor.

        The leaf record runs last in the reverse pass (it was recorded
        first), at which point every consumer has deposited its gradient
        contribution into the leaf slot.
        """
        t = Tensor(self.value, tape)
        if tape is not None and self.trainable:

            def backward_leaf() -> None:
                if t.grad is not None:
                    self.grad += t.grad

            tape.record(backward_leaf)
        return t

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.value.shape})"


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _join_tape(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ValueError("operands are recorded on different tapes")
    return tape


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced a non-finite value")


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes that broadcasting expanded."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    squeezed = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if squeezed:
        g = g.sum(axis=squeezed, keepdims=True)
    return g


def _binary(op: str, a, b, fwd, da, db) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    tape = _join_tape(a, b)
    try:
        with np.errstate(all="ignore"):
            data = fwd(a.data, b.data)
    except ValueError:
        raise ValueError(
            f"{op}: shapes {a.data.shape} and {b.data.shape} are not broadcast-compatible"
        ) from None
    _check_finite(data, op)
    out = Tensor(data, tape)
    if tape is not None:

        def backward_fn() -> None:
            g = out.grad
            if g is None:
                return
            _accumulate(a, _unbroadcast(da(g, a.data, b.data, data), a.data.shape))
            _accumulate(b, _unbroadcast(db(g, a.data, b.data, data), b.data.shape))

        tape.record(backward_fn)
    return out


def add(a, b) -> Tensor:
    return _binary(
        "add", a, b, np.add,
        lambda g, x, y, o: g,
        lambda g, x, y, o: g,
    )


def sub(a, b) -> Tensor:
    return _binary(
        "sub", a, b, np.subtract,
        lambda g, x, y, o: g,
        lambda g, x, y, o: -g,
    )


def mul(a, b) -> Tensor:
    return _binary(
        "mul", a, b, np.multiply,
        lambda g, x, y, o: g * y,
        lambda g, x, y, o: g * x,
    )


def div(a, b) -> Tensor:
    return _binary(
        "div", a, b, np.divide,
        lambda g, x, y, o: g / y,
        lambda g, x, y, o: -g * o / y,
    )


def matmul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(
            f"matmul: inner dimensions differ ({a.data.shape} @ {b.data.shape})"
        )
    tape = _join_tape(a, b)
    data = a.data @ b.data
    _check_finite(data, "matmul")
    out = Tensor(data, tape)
    if tape is not None:

        def backward_fn() -> None:
            g = out.grad
            if g is None:
                return
            _accumulate(a, g @ b.data.T)
            _accumulate(b, a.data.T @ g)

        tape.record(backward_fn)
    return out


def _unary(op: str, a, fwd, dx) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(all="ignore"):
        data = fwd(a.data)
    _check_finite(data, op)
    out = Tensor(data, a.tape)
    if a.tape is not None:

        def backward_fn() -> None:
            g = out.grad
            if g is None:
                return
            _accumulate(a, dx(g, a.data, data))

        a.tape.record(backward_fn)
    return out


def exp(a) -> Tensor:
    return _unary("exp", a, np.exp, lambda g, x, o: g * o)


def log(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.size and np.min(a.data) <= 0.0:
        raise ValueError("log requires strictly positive input")
    return _unary("log", a, np.log, lambda g, x, o: g / x)


def powi(a, n: int) -> Tensor:
    if not isinstance(n, int):
        raise TypeError("powi exponent must be an integer")
    return _unary(
        f"powi({n})", a,
        lambda x: x ** n,
        lambda g, x, o: g * (n * x ** (n - 1)),
    )


def neg(a) -> Tensor:
    return _unary("neg", a, np.negative, lambda g, x, o: -g)


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    return _unary(
        "leaky_relu", a,
        lambda x: np.where(x > 0.0, x, slope * x),
        lambda g, x, o: g * np.where(x > 0.0, 1.0, slope),
    )


def _normalize_axes(axis, ndim: int) -> tuple[int, ...] | None:
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axes, keepdims: bool) -> np.ndarray:
    if not keepdims and axes is not None:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def _reduced_count(shape: tuple[int, ...], axes) -> int:
    if axes is None:
        return int(np.prod(shape)) if shape else 1
    n = 1
    for a in axes:
        n *= shape[a]
    return n


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _normalize_axes(axis, a.data.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)
    _check_finite(data, "sum")
    out = Tensor(data, a.tape)
    if a.tape is not None:
        shape = a.data.shape

        def backward_fn() -> None:
            g = out.grad
            if g is None:
                return
            _accumulate(a, _expand_reduced(g, shape, axes, keepdims))

        a.tape.record(backward_fn)
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _normalize_axes(axis, a.data.ndim)
    count = _reduced_count(a.data.shape, axes)
    if count == 0:
        raise ValueError("mean over an empty reduction")
    data = a.data.mean(axis=axes, keepdims=keepdims)
    _check_finite(data, "mean")
    out = Tensor(data, a.tape)
    if a.tape is not None:
        shape = a.data.shape
        inv = 1.0 / count

        def backward_fn() -> None:
            g = out.grad
            if g is None:
                return
            _accumulate(a, _expand_reduced(g * inv, shape, axes, keepdims))

        a.tape.record(backward_fn)
    return out


def tmax(a, axis=None, keepdims: bool = False) -> Tensor:
    """Reduce-max; ties route the gradient to the first maximal entry."""
    a = _as_tensor(a)
    if axis is not None and not isinstance(axis, int):
        raise ValueError("max supports a single axis or None")
    if _reduced_count(a.data.shape, _normalize_axes(axis, a.data.ndim)) == 0:
        raise ValueError("max over an empty reduction")
    data = a.data.max(axis=axis, keepdims=keepdims)
    _check_finite(data, "max")
    out = Tensor(data, a.tape)
    if a.tape is not None:
        x = a.data

        def backward_fn() -> None:
            g = out.grad
            if g is None:
                return
            full = np.zeros_like(x)
            if axis is None:
                idx = np.unravel_index(np.argmax(x), x.shape)
                full[idx] = np.asarray(g).reshape(())
            else:
                am = np.expand_dims(np.argmax(x, axis=axis), axis)
                gg = g if keepdims else np.expand_dims(g, axis)
                np.put_along_axis(full, am, np.broadcast_to(gg, am.shape), axis)
            _accumulate(a, full)

        a.tape.record(backward_fn)
    return out


def logsumexp(a, axis=None, keepdims: bool = False) -> Tensor:
    """Max-shifted log of summed exponentials, exact for extreme magnitudes."""
    a = _as_tensor(a)
    if axis is not None and not isinstance(axis, int):
        raise ValueError("logsumexp supports a single axis or None")
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    shifted = np.exp(x - m)
    total = shifted.sum(axis=axis, keepdims=True)
    data_kept = np.log(total) + m
    if keepdims:
        data = data_kept
    elif axis is None:
        data = data_kept.reshape(())
    else:
        data = np.squeeze(data_kept, axis=axis)
    _check_finite(data, "logsumexp")
    out = Tensor(data, a.tape)
    if a.tape is not None:
        softmax = shifted / total

        def backward_fn() -> None:
            g = out.grad
            if g is None:
                return
            if axis is None:
                gg = np.asarray(g).reshape((1,) * x.ndim)
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, gg * softmax)

        a.tape.record(backward_fn)
    return out


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    data = a.data.reshape(shape)
    out = Tensor(data, a.tape)
    if a.tape is not None:
        original = a.data.shape

        def backward_fn() -> None:
            g = out.grad
            if g is None:
                return
            _accumulate(a, np.asarray(g).reshape(original))

        a.tape.record(backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(slot) into every slot on the loss's tape."""
    if loss.data.shape != ():
        raise ValueError("backward requires a scalar loss")
    if loss.tape is None:
        raise ValueError("loss is not attached to a tape")
    loss.grad = np.ones(())
    loss.tape.replay_reverse()


def clip_global_norm(params: Iterable[Parameter], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns the scaling factor applied (1.0 when no clipping happened).
    """
    params = list(params)
    total = 0.0
    for p in params:
        total += float(np.sum(p.grad * p.grad))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
        return scale
    return 1.0


def finite_diff_check(
    fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    h: float = 1e-6,
) -> float:
    """Compare reverse-mode gradients of ``fn()`` against central differences.

    ``fn`` must build a fresh tape and return a scalar loss computed from
    the current parameter values. Returns the worst relative error, with
    denominator max(|analytic|, |numeric|, 1e-8).
    """
    for p in params:
        p.zero_grad()
    loss = fn()
    backward(loss)
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()
    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.value.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            kept = flat[i]
            flat[i] = kept + h
            up = float(fn().data)
            flat[i] = kept - h
            down = float(fn().data)
            flat[i] = kept
            numeric = (up - down) / (2.0 * h)
            denom = max(abs(gflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst
