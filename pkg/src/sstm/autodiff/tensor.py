"""Dense tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` wraps a contiguous numpy array. Operations executed while a
:class:`GradTape` is active and at least one input requires a gradient are
recorded on that tape; :func:`backward` replays the records in reverse order.
Outside a tape nothing is recorded, which is the cheap inference path.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence, Union

import numpy as np

Scalar = Union[int, float]
BackwardFn = Callable[[np.ndarray], Sequence[Union[np.ndarray, None]]]

_dtype_stack: list[type] = [np.float32]
_tape_stack: list["GradTape"] = []


class TapeError(RuntimeError):
    pass


def default_dtype() -> type:
    return _dtype_stack[-1]


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Set the dtype used when building tensors from python data."""
    _dtype_stack.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _dtype_stack.pop()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording, even inside an active tape."""
    saved = _tape_stack[:]
    _tape_stack.clear()
    try:
        yield
    finally:
        _tape_stack[:] = saved


class _Record:
    __slots__ = ("tape", "index", "inputs", "backward_fn", "grad")

    def __init__(self, tape, index, inputs, backward_fn):
        self.tape = tape
        self.index = index
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.grad = None


class GradTape:
    """Ordered log of differentiable operations.

    Use as a context manager; records stay available for repeated
    :func:`backward` calls until :meth:`clear` is called.
    """

    def __init__(self) -> None:
        self.records: list[_Record] = []

    def __enter__(self) -> "GradTape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        for rec in self.records:
            rec.tape = None
            rec.inputs = ()
            rec.backward_fn = None
            rec.grad = None
        self.records = []

    def backward(self, root: "Tensor") -> None:
        if root._record is None or root._record.tape is not self:
            raise TapeError("root was not recorded on this tape")
        backward(root)


def _active_tape() -> GradTape | None:
    return _tape_stack[-1] if _tape_stack else None


class Tensor:
    """n-dimensional real array with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "_record", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None) -> None:
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = default_dtype()
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._record: _Record | None = None

    # -- metadata ---------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._record is None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # -- operators --------------------------------------------------------
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
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by python scalars")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _raise_item(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap ``data`` as the output of an op, recording it if needed."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._record = None
    out.requires_grad = False
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        rec = _Record(tape, len(tape.records), tuple(inputs), backward_fn)
        tape.records.append(rec)
        out._record = rec
    return out


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every recorded leaf."""
    if root.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    rec = root._record
    if rec is None or rec.tape is None:
        raise TapeError("root is not on an active tape")
    tape = rec.tape
    span = tape.records[: rec.index + 1]
    for r in span:
        r.grad = None
    rec.grad = np.ones_like(root.data)
    for r in reversed(span):
        g = r.grad
        if g is None:
            continue
        r.grad = None
        grads = r.backward_fn(g)
        for inp, gi in zip(r.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            irec = inp._record
            if irec is None:
                gi = np.asarray(gi, dtype=inp.dtype).reshape(inp.shape)
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            elif irec.tape is tape:
                irec.grad = gi if irec.grad is None else irec.grad + gi


# ---------------------------------------------------------------------------
# elementwise arithmetic (scalar broadcast only)
# ---------------------------------------------------------------------------

def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise TypeError("at least one operand must be a Tensor")
    ref = a if isinstance(a, Tensor) else b
    a = as_tensor(a, ref)
    b = as_tensor(b, ref)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _unbroadcast(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum()).reshape(t.shape)


def _scalar_view(t: Tensor, other: Tensor) -> np.ndarray:
    # size-1 tensor against a larger one: use a 0-d view so numpy keeps the larger shape
    if t.size == 1 and t.shape != other.shape and (other.size != 1 or t.ndim < other.ndim):
        return t.data.reshape(())
    return t.data


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    out = _scalar_view(a, b) + _scalar_view(b, a)

    def bw(g):
        return _unbroadcast(g, a), _unbroadcast(g, b)

    return make_result(np.asarray(out), (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    out = _scalar_view(a, b) - _scalar_view(b, a)

    def bw(g):
        return _unbroadcast(g, a), _unbroadcast(-g, b)

    return make_result(np.asarray(out), (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    av, bv = _scalar_view(a, b), _scalar_view(b, a)

    def bw(g):
        ga = _unbroadcast(g * bv, a) if a.requires_grad else None
        gb = _unbroadcast(g * av, b) if b.requires_grad else None
        return ga, gb

    return make_result(np.asarray(av * bv), (a, b), bw)


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    y = y.astype(x.dtype, copy=False)
    return make_result(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_result(y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(x.data * mask, (x,), lambda g: (g * mask,))


def tabs(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return make_result(np.abs(x.data), (x,), lambda g: (g * sign,))


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "abs": tabs}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def pointwise(x, f: str, other=None) -> Tensor:
    """Apply a named elementwise function (unary, or binary with ``other``)."""
    if f in _UNARY:
        if other is not None:
            raise TypeError(f"{f} is unary")
        return _UNARY[f](x)
    if f in _BINARY:
        if other is None:
            raise TypeError(f"{f} needs a second operand")
        return _BINARY[f](x, other)
    raise ValueError(f"unknown pointwise function {f!r}")


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = np.asarray(x.data.sum(axis=axes, keepdims=keepdims))

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return make_result(out, (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return tsum(x, axes, keepdims) * (1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return make_result(out, (x,), lambda g: (g.transpose(inv),))


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def getitem(x: Tensor, index) -> Tensor:
    out = np.ascontiguousarray(x.data[index])
    basic = _is_basic_index(index)

    def bw(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        if basic:
            gx[index] = g
        else:
            np.add.at(gx, index, g)
        return (gx,)

    return make_result(out, (x,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of an empty list")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(out, tensors, bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_result(out, tensors, bw)


def split(x: Tensor, sections: int, axis: int = 0) -> list[Tensor]:
    n = x.shape[axis]
    if n % sections:
        raise ValueError(f"cannot split extent {n} into {sections} equal parts")
    step = n // sections
    out = []
    for i in range(sections):
        index = [slice(None)] * x.ndim
        index[axis] = slice(i * step, (i + 1) * step)
        out.append(getitem(x, tuple(index)))
    return out
