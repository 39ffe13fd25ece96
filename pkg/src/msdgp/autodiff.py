"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations run eagerly on numpy arrays.  While a :class:`GradTape` is active,
every primitive whose inputs require gradients appends a node to the tape;
:func:`grad` later replays the vector-Jacobian products in reverse recording
order.

    >>> x = Tensor(3.0, requires_grad=True)
    >>> with GradTape():
    ...     y = x * x
    >>> grad(y, [x])[0].item()
    6.0
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

_state = threading.local()


def _active_tape() -> "GradTape | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class _Node:
    __slots__ = ("tape", "index", "inputs", "vjp")

    def __init__(self, tape, index, inputs, vjp):
        self.tape = tape
        self.index = index
        self.inputs = inputs
        self.vjp = vjp


class GradTape:
    """Ordered record of differentiable primitive applications."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, _Node]] = []

    def __enter__(self):
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def gradient(self, output: "Tensor", params):
        return grad(output, params)


class Tensor:
    """Immutable n-dimensional float64 array.

    ``data`` is a read-only numpy array.  Leaves created with
    ``requires_grad=True`` are the parameters gradients are taken against.
    """

    __slots__ = ("data", "requires_grad", "_node")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._node = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.flags.writeable = False
        t.data = arr
        t.requires_grad = False
        t._node = None
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

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # arithmetic sugar
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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64))


def _make(out: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap a primitive's result, recording it on the active tape if needed."""
    result = Tensor._wrap(out)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        node = _Node(tape, len(tape.nodes), tuple(inputs), vjp)
        result._node = node
        tape.nodes.append((result, node))
    return result


def grad(output: Tensor, params):
    """Gradients of a scalar ``output`` with respect to ``params``.

    ``params`` may be a sequence of tensors or a mapping of name to tensor;
    the result has the same structure.  Parameters that ``output`` does not
    depend on receive zero tensors of their own shape.
    """
    if isinstance(params, Mapping):
        names = list(params)
        grads = grad(output, [params[n] for n in names])
        return dict(zip(names, grads))
    params = list(params)
    if output.size != 1:
        raise ValueError(f"grad needs a scalar output, got shape {output.shape}")
    keep = {id(p) for p in params}
    adjoint: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    node = output._node
    if node is not None:
        for result, nd in reversed(node.tape.nodes[: node.index + 1]):
            key = id(result)
            g = adjoint.get(key) if key in keep else adjoint.pop(key, None)
            if g is None:
                continue
            in_grads = nd.vjp(g)
            for inp, gi in zip(nd.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + gi
                else:
                    adjoint[key] = gi
    out = []
    for p in params:
        g = adjoint.get(id(p))
        if g is None:
            g = np.zeros(p.shape)
        out.append(Tensor._wrap(np.broadcast_to(g, p.shape).copy()))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        ),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        ),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(ad**p, (a,), lambda g: (g * p * ad ** (p - 1),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def clamp_min(a, floor: float) -> Tensor:
    """``max(a, floor)``; values below the floor pass no gradient."""
    a = as_tensor(a)
    mask = a.data > floor
    return _make(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,))


ARCCOS_GRAD_CLAMP = 1.0 - 1e-9


def arccos(a) -> Tensor:
    """Arc-cosine with the argument clamped to [-1, 1].

    The derivative is evaluated at the argument clamped to +-(1 - 1e-9) so it
    stays finite at parallel inputs.
    """
    a = as_tensor(a)
    c = np.clip(a.data, -1.0, 1.0)
    cg = np.clip(a.data, -ARCCOS_GRAD_CLAMP, ARCCOS_GRAD_CLAMP)
    return _make(np.arccos(c), (a,), lambda g: (-g / np.sqrt(1.0 - cg * cg),))


def arccos_j1(a) -> Tensor:
    """Angular part of the order-1 arc-cosine kernel.

    ``J(c) = sin(t) + (pi - t) cos(t)`` with ``t = arccos(c)``.  Its derivative
    ``pi - arccos(c)`` is bounded, so no gradient clamp is needed.
    """
    a = as_tensor(a)
    c = np.clip(a.data, -1.0, 1.0)
    t = np.arccos(c)
    out = np.sqrt(1.0 - c * c) + (np.pi - t) * c
    return _make(out, (a,), lambda g: (g * (np.pi - t),))


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    """Reverse all axes, or permute by ``axes``; for ndim > 2 with no axes,
    swap the last two (matrix transpose of a stack)."""
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2) if a.ndim >= 2 else (0,)
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(np.broadcast_to(a.data, shape), (a,), lambda g: (_unbroadcast(g, old),))


def getitem(a, index) -> Tensor:
    """Basic slicing or integer-array indexing; repeated indices accumulate."""
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), vjp)


def take_rows(a, idx) -> Tensor:
    """Gather rows ``a[idx]`` along axis 0."""
    idx = np.asarray(idx, dtype=np.intp)
    return getitem(a, idx)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, vjp)


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if axis < 0:
        axis += ts[0].ndim + 1
    return concat([reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in ts], axis=axis)


def diagonal(a) -> Tensor:
    """Diagonal of the trailing two axes."""
    a = as_tensor(a)
    shape = a.shape
    n = min(shape[-2], shape[-1])

    def vjp(g):
        out = np.zeros(shape)
        i = np.arange(n)
        out[..., i, i] = g
        return (out,)

    return _make(np.diagonal(a.data, axis1=-2, axis2=-1).copy(), (a,), vjp)


def row_norms(a) -> Tensor:
    """Euclidean norm of each row; zero rows get a zero gradient."""
    a = as_tensor(a)
    ad = a.data
    n = np.sqrt(np.sum(ad * ad, axis=-1))
    safe = np.where(n > 0, n, 1.0)

    def vjp(g):
        return ((g / safe)[..., None] * ad * (n > 0)[..., None],)

    return _make(n, (a,), vjp)


# ---------------------------------------------------------------------------
# matrix products


def _grad_left(g: np.ndarray, bd: np.ndarray, shape) -> np.ndarray:
    """d(a @ b)/da contracted with g, summed to ``shape``."""
    if len(shape) == 2 and g.ndim > 2:
        # a was broadcast over the stack: one GEMM over the flattened stack
        lead = g.ndim - 2
        bt = np.broadcast_to(bd, g.shape[:-2] + bd.shape[-2:])
        return np.tensordot(g, bt, axes=(list(range(lead)) + [g.ndim - 1], list(range(lead)) + [g.ndim - 1]))
    if bd.ndim == 2:
        full = (g.reshape(-1, g.shape[-1]) @ bd.T).reshape(g.shape[:-1] + (bd.shape[0],))
        return _unbroadcast(full, shape)
    return _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), shape)


def _grad_right(g: np.ndarray, ad_: np.ndarray, shape) -> np.ndarray:
    if len(shape) == 2 and g.ndim > 2:
        lead = g.ndim - 2
        at = np.broadcast_to(ad_, g.shape[:-2] + ad_.shape[-2:])
        return np.tensordot(at, g, axes=(list(range(lead)) + [lead], list(range(lead)) + [lead]))
    if ad_.ndim == 2 and g.ndim > 2:
        full = np.moveaxis(np.tensordot(ad_, g, axes=([0], [g.ndim - 2])), 0, -2)
        return _unbroadcast(full, shape)
    return _unbroadcast(np.matmul(np.swapaxes(ad_, -1, -2), g), shape)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad_, bd = a.data, b.data
    if ad_.ndim < 2 or bd.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def vjp(g):
        ga = _grad_left(g, bd, ad_.shape) if a.requires_grad else None
        gb = _grad_right(g, ad_, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(np.matmul(ad_, bd), (a, b), vjp)
