"""Dense float64 arrays with tape-based reverse-mode differentiation.

Storage is a numpy array; every differentiable operation in this package goes
through the functions defined here so that a single ``Tape`` can replay them
backward. Usage::

    w = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = (w * w).sum()
    grads = tape.backward(loss)
    grads[w]  # array([2., 4.])
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

LOG_FLOOR = 1e-12

_state = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """A float64 array that can be recorded on a ``Tape``."""

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

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
        if self.data.size != 1:
            raise ValueError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar
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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis: int | None = None) -> "Tensor":
        return reduce_sum(self, axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return reduce_mean(self, axis)


class _Record:
    __slots__ = ("op", "inputs", "output", "vjp")

    def __init__(self, op, inputs, output, vjp):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


class Gradients:
    """Gradient lookup keyed by tensor identity.

    Tensors that were never reached from the root get an exact zero array.
    """

    def __init__(self, grads: dict[int, np.ndarray], leaves: dict[int, Tensor]):
        self._grads = grads
        self._leaves = leaves

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(id(t))
        if g is None:
            return np.zeros_like(t.data)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads

    def leaves(self) -> list[Tensor]:
        return list(self._leaves.values())


class Tape:
    """Ordered record of traced operations; use as a context manager."""

    def __init__(self):
        self.records: list[_Record] = []
        self._produced: set[int] = set()
        # keep outputs alive so ids stay unique for the tape's lifetime
        self._keep: list[Tensor] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, vjp) -> None:
        self.records.append(_Record(op, tuple(inputs), output, vjp))
        self._produced.add(id(output))
        self._keep.append(output)

    def backward(self, root: Tensor) -> Gradients:
        if root.data.size != 1:
            raise ValueError(f"backward: root must be a scalar, got shape {root.shape}")
        if id(root) not in self._produced:
            raise ValueError("backward: root was not produced on this tape")
        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        leaves: dict[int, Tensor] = {}
        for rec in reversed(self.records):
            g_out = grads.get(id(rec.output))
            if g_out is None:
                continue
            parts = rec.vjp(g_out)
            for inp, g in zip(rec.inputs, parts):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if id(inp) not in self._produced:
                    leaves[key] = inp
                prev = grads.get(key)
                grads[key] = g if prev is None else prev + g
        return Gradients(grads, leaves)


def backward(root: Tensor, tape: Tape | None = None) -> Gradients:
    tape = tape or _active_tape()
    if tape is None:
        raise ValueError("backward: no tape given and none active")
    return tape.backward(root)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finish(op: str, inputs: Sequence[Tensor], out: np.ndarray, vjp) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"{op}: produced non-finite values")
    t = Tensor.__new__(Tensor)
    t.data = out
    t.name = None
    tape = _active_tape()
    traced = tape is not None and any(i.requires_grad for i in inputs)
    t.requires_grad = traced
    if traced:
        tape.record(op, inputs, t, vjp)
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} are incompatible") from None


# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _finish("add", (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _finish("sub", (a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _finish("mul", (a, b), a.data * b.data,
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0):
        raise ZeroDivisionError("div: zero in denominator")
    out = a.data / b.data
    return _finish("div", (a, b), out,
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _finish("scale", (a,), a.data * c, lambda g: (g * c,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _finish("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("sqrt: input must be strictly positive")
    out = np.sqrt(a.data)
    return _finish("sqrt", (a,), out, lambda g: (g * 0.5 / out,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _finish("exp", (a,), out, lambda g: (g * out,))


def log(a, floor: float = LOG_FLOOR) -> Tensor:
    """log(max(a, floor)); the derivative is zero where the floor is active."""
    a = as_tensor(a)
    live = a.data > floor
    safe = np.where(live, a.data, floor)
    return _finish("log", (a,), np.log(safe), lambda g: (np.where(live, g / safe, 0.0),))


# linear algebra and reductions


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    return _finish("matmul", (a, b), a.data @ b.data,
                   lambda g: (g @ b.data.T, a.data.T @ g))


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot reshape {src} to {shape}") from None
    return _finish("reshape", (a,), out, lambda g: (g.reshape(src),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"transpose: expected 2-d, got shape {a.shape}")
    return _finish("transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


def reduce_sum(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _finish("sum", (a,), out, vjp)


def reduce_mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(reduce_sum(a, axis), 1.0 / n)


def softmax(a) -> Tensor:
    """Row-wise softmax over the last axis, max-shifted."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _finish("softmax", (a,), out, vjp)


def take_rows(a, index: np.ndarray) -> Tensor:
    """Per-row gather: out[i, k] = a[i, index[i, k]]."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if a.ndim != 2 or index.ndim != 2 or index.shape[0] != a.shape[0]:
        raise ValueError(f"take_rows: shapes {a.shape} and index {index.shape} are incompatible")
    rows = np.arange(a.shape[0])[:, None]
    out = a.data[rows, index]

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (np.broadcast_to(rows, index.shape), index), g)
        return (full,)

    return _finish("take_rows", (a,), out, vjp)


def prod_rows(a) -> Tensor:
    """Product along the last axis of a 2-d tensor."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"prod_rows: expected 2-d, got shape {a.shape}")
    x = a.data
    out = x.prod(axis=1)

    def vjp(g):
        # product of the other entries, without dividing by x
        k = x.shape[1]
        others = np.empty_like(x)
        for j in range(k):
            others[:, j] = np.prod(np.delete(x, j, axis=1), axis=1)
        return (g[:, None] * others,)

    return _finish("prod_rows", (a,), out, vjp)


# finite differences


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1e-12, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def grad_check(f: Callable[[Tensor], Tensor], point, step: float = 1e-6) -> float:
    """Max relative error between the tape gradient of ``f`` and central differences."""
    x = Tensor(np.array(point, dtype=np.float64), requires_grad=True)
    with Tape() as tape:
        y = f(x)
    if not np.isfinite(y.data).all():
        raise FloatingPointError("grad_check: non-finite evaluation at point")
    analytic = tape.backward(y)[x] if id(y) in tape._produced else np.zeros_like(x.data)
    numeric = _central_diff(lambda: f(Tensor(x.data)).item(), x.data, step)
    return _relative_error(analytic, numeric)


def grad_check_params(loss: Callable[[], Tensor], params: Iterable[Tensor],
                      step: float = 1e-6) -> dict[str, float]:
    """Check the gradient of a closure with respect to several tensors in place.

    Returns the max relative error per tensor (keyed by name or position).
    """
    params = list(params)
    with Tape() as tape:
        y = loss()
    grads = tape.backward(y) if id(y) in tape._produced else None
    out = {}
    for k, p in enumerate(params):
        analytic = grads[p] if grads is not None else np.zeros_like(p.data)
        numeric = _central_diff(lambda: loss().item(), p.data, step)
        out[p.name or str(k)] = _relative_error(analytic, numeric)
    return out


def _central_diff(evaluate: Callable[[], float], buf: np.ndarray, step: float) -> np.ndarray:
    """Central differences of ``evaluate`` w.r.t. ``buf``, perturbed in place."""
    numeric = np.zeros_like(buf)
    flat = buf.reshape(-1)
    out = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = evaluate()
        flat[i] = orig - step
        lo = evaluate()
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError(f"grad_check: non-finite evaluation at coordinate {i}")
        out[i] = (hi - lo) / (2.0 * step)
    return numeric
