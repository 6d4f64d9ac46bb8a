"""Dense arrays with reverse-mode automatic differentiation.

Every operation builds a node holding its parents and a closure that maps the
output gradient to parent gradients. ``Tensor.backward`` walks the graph in
reverse topological order; only leaves that require grad accumulate into
``.grad``, so calling ``backward`` twice on the same graph adds up.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand extents are incompatible."""


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


# ---------------------------------------------------------------------------
# matmul instrumentation
# ---------------------------------------------------------------------------


@dataclass
class FlopRecord:
    scope: str
    kind: str
    macs: int
    shape: tuple


@dataclass
class FlopCounter:
    """Tallies multiply-accumulates of every contracted product.

    A product of [..., M, K] x [..., K, P] contributes batch*M*K*P MACs, which
    is 2*batch*M*K*P FLOPs.
    """

    records: list[FlopRecord] = field(default_factory=list)

    def macs(self, scope: str | None = None, kind: str | None = None) -> int:
        return sum(
            r.macs
            for r in self.records
            if (scope is None or r.scope == scope) and (kind is None or r.kind == kind)
        )

    def flops(self, scope: str | None = None, kind: str | None = None) -> int:
        return 2 * self.macs(scope, kind)

    def by_scope(self, kind: str | None = None) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.records:
            if kind is None or r.kind == kind:
                out[r.scope] = out.get(r.scope, 0) + r.macs
        return out


_counters: list[FlopCounter] = []
_scopes: list[str] = []


@contextlib.contextmanager
def count_flops():
    counter = FlopCounter()
    _counters.append(counter)
    try:
        yield counter
    finally:
        _counters.remove(counter)


@contextlib.contextmanager
def flop_scope(name: str):
    _scopes.append(name)
    try:
        yield
    finally:
        _scopes.pop()


def _record_matmul(a_shape, b_shape, out_shape, kind):
    if not _counters:
        return
    m, k = a_shape[-2], a_shape[-1]
    p = b_shape[-1]
    batch = int(np.prod(out_shape[:-2], dtype=np.int64)) if len(out_shape) > 2 else 1
    rec = FlopRecord(
        scope=_scopes[-1] if _scopes else "",
        kind=kind,
        macs=int(batch) * int(m) * int(k) * int(p),
        shape=(tuple(a_shape), tuple(b_shape)),
    )
    for c in _counters:
        c.records.append(rec)


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "fc":
            arr = arr.astype(np.float64)
        self._data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # data is a property so Parameter can materialize lazily
    @property
    def data(self) -> np.ndarray:
        return self._data

    @data.setter
    def data(self, value: np.ndarray) -> None:
        self._data = value

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def astype(self, dtype) -> Tensor:
        if self.dtype == np.dtype(dtype):
            return self
        src = self.dtype
        return _make(self.data.astype(dtype), (self,), lambda g: (g.astype(src),))

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph ----------------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.size != 1:
                raise ShapeError(
                    f"backward() needs a scalar loss, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent._needs_grad():
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    def _needs_grad(self) -> bool:
        return self.requires_grad or self._backward is not None

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other) -> Tensor:
        other = as_tensor(other, self.dtype)
        sa, sb = self.shape, other.shape
        return _make(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        )

    __radd__ = __add__

    def __sub__(self, other) -> Tensor:
        other = as_tensor(other, self.dtype)
        sa, sb = self.shape, other.shape
        return _make(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
        )

    def __rsub__(self, other) -> Tensor:
        return as_tensor(other, self.dtype) - self

    def __mul__(self, other) -> Tensor:
        other = as_tensor(other, self.dtype)
        a, b = self.data, other.data
        return _make(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> Tensor:
        other = as_tensor(other, self.dtype)
        a, b = self.data, other.data
        return _make(
            a / b,
            (self, other),
            lambda g: (
                _unbroadcast(g / b, a.shape),
                _unbroadcast(-g * a / (b * b), b.shape),
            ),
        )

    def __rtruediv__(self, other) -> Tensor:
        return as_tensor(other, self.dtype) / self

    def __neg__(self) -> Tensor:
        return _make(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, exponent: float) -> Tensor:
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        a = self.data
        return _make(a**exponent, (self,), lambda g: (g * exponent * a ** (exponent - 1),))

    def __matmul__(self, other) -> Tensor:
        return matmul(self, other)

    def __getitem__(self, index) -> Tensor:
        a_shape, dtype = self.shape, self.dtype

        def back(g):
            out = np.zeros(a_shape, dtype=dtype)
            np.add.at(out, index, g)
            return (out,)

        return _make(self.data[index], (self,), back)

    # -- reductions and shape ops ---------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return _make(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        if axis is None:
            n = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            n = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        try:
            out = self.data.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"cannot reshape {src} into {shape}") from exc
        return _make(out, (self,), lambda g: (g.reshape(src),))

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = tuple(np.argsort(axes))
        return _make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),))

    permute = transpose

    def swapaxes(self, a: int, b: int) -> Tensor:
        return _make(self.data.swapaxes(a, b), (self,), lambda g: (g.swapaxes(a, b),))

    def broadcast_to(self, shape) -> Tensor:
        src = self.shape
        return _make(
            np.broadcast_to(self.data, shape).copy(),
            (self,),
            lambda g: (_unbroadcast(g, src),),
        )

    def roll(self, shift, axis) -> Tensor:
        if isinstance(shift, int):
            shift, axis = (shift,), (axis,)
        neg = tuple(-s for s in shift)
        return _make(
            np.roll(self.data, shift, axis),
            (self,),
            lambda g: (np.roll(g, neg, axis),),
        )

    # -- elementwise ----------------------------------------------------------

    def exp(self) -> Tensor:
        out = np.exp(self.data)
        return _make(out, (self,), lambda g: (g * out,))

    def log(self) -> Tensor:
        a = self.data
        return _make(np.log(a), (self,), lambda g: (g / a,))

    def sqrt(self) -> Tensor:
        out = np.sqrt(self.data)
        return _make(out, (self,), lambda g: (g * 0.5 / out,))

    def tanh(self) -> Tensor:
        out = np.tanh(self.data)
        return _make(out, (self,), lambda g: (g * (1.0 - out * out),))

    def sigmoid(self) -> Tensor:
        out = _sigmoid(self.data)
        return _make(out, (self,), lambda g: (g * out * (1.0 - out),))

    def relu(self) -> Tensor:
        a = self.data
        return _make(np.maximum(a, 0), (self,), lambda g: (g * (a > 0),))

    def silu(self) -> Tensor:
        a = self.data
        s = _sigmoid(a)
        return _make(a * s, (self,), lambda g: (g * (s * (1.0 + a * (1.0 - s))),))

    def gelu(self) -> Tensor:
        """GELU, tanh approximation."""
        a = self.data
        c = np.sqrt(2.0 / np.pi)
        inner = c * (a + 0.044715 * a**3)
        t = np.tanh(inner)
        out = 0.5 * a * (1.0 + t)

        def back(g):
            dinner = c * (1.0 + 3 * 0.044715 * a * a)
            return (g * (0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * dinner),)

        return _make(out, (self,), back)

    def softmax(self, axis: int = -1) -> Tensor:
        return softmax(self, axis)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p._needs_grad() for p in parents):
        out._parents = parents
        out._backward = backward
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def tensor(data, requires_grad: bool = False, dtype=np.float64) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# free functions
# ---------------------------------------------------------------------------


def matmul(a, b, kind: str = "other") -> Tensor:
    """Batched contraction ``[..., M, K] @ [..., K, P]``.

    ``kind`` labels the product for an active :func:`count_flops` hook.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner extents differ: {a.shape} has K={a.shape[-1]}, "
            f"{b.shape} has K={b.shape[-2]}"
        )
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul batch extents not broadcastable: {a.shape}, {b.shape}") from exc
    _record_matmul(a.shape, b.shape, out.shape, kind)
    ad, bd = a.data, b.data

    def back(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return (_unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape))

    return _make(out, (a, b), back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    a = x.data
    if not np.all(np.isfinite(a)):
        raise FloatingPointError("softmax received non-finite input")
    shifted = a - a.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), back)


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis, then apply optional affine terms."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    a = x.data
    mu = a.mean(axis=-1, keepdims=True)
    xc = a - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    d = a.shape[-1]

    def back(g):
        gx = (inv / d) * (d * g - g.sum(-1, keepdims=True) - xhat * (g * xhat).sum(-1, keepdims=True))
        return (gx,)

    out = _make(xhat, (x,), back)
    if gain is not None:
        out = out * gain
    if bias is not None:
        out = out + bias
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), back)


def zeros(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))
