"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every operation records its parents and a vector-Jacobian closure on the
output node. ``backward`` walks the graph once in reverse topological
order. Gradients accumulate into leaf nodes only (``Param`` and plain
tensors created with ``requires_grad=True``); intermediate gradients are
kept in a scratch dict and freed with the graph. Repeated backward calls
keep accumulating until the caller resets with ``zero_grads``.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import GraphStateError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference/eval paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """Graph node: row-major float64 array plus backward bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Param(Tensor):
    """Trainable leaf. Gradient buffer is always allocated."""

    __slots__ = ("name",)

    def __init__(self, name, value):
        super().__init__(value, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.data.shape})"


def zero_grads(params):
    """Reset accumulated gradients in place."""
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        else:
            p.grad[...] = 0.0


def make_op(data, parents, vjp):
    """Create the output node of an operation.

    ``vjp(g)`` must return one gradient (or None) per parent, aligned
    with ``parents``. Recording is skipped entirely under ``no_grad`` or
    when no parent needs gradients.
    """
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out

def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g, shape):
    """Sum g over the axes that numpy broadcasting expanded."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _topo_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
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


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every reachable leaf with requires_grad."""
    if not isinstance(loss, Tensor):
        raise TypeError(f"backward expects a Tensor, got {type(loss).__name__}")
    if loss.data.size != 1:
        raise GraphStateError(
            f"backward needs a scalar loss, got shape {loss.data.shape}"
        )
    if loss._vjp is None:
        raise GraphStateError(
            "backward called before any forward pass was recorded for this tensor"
        )
    topo = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    borrowed = set()  # ids whose buffer may be a read-only view, copy before +=
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        borrowed.discard(id(node))
        if g is None:
            continue
        if node._vjp is None:
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            acc = grads.get(key)
            if acc is None:
                grads[key] = pg
                borrowed.add(key)
            elif key in borrowed:
                grads[key] = acc + pg
                borrowed.discard(key)
            else:
                acc += pg


def add(a, b):
    a, b = _lift(a), _lift(b)
    return make_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b):
    a, b = _lift(a), _lift(b)
    return make_op(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)),
    )


def mul(a, b):
    a, b = _lift(a), _lift(b)
    return make_op(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def neg(a):
    a = _lift(a)
    return make_op(-a.data, (a,), lambda g: (-g,))


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(
            f"matmul expects 2-d operands, got {a.data.shape} @ {b.data.shape}"
        )
    return make_op(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a):
    a = _lift(a)
    if a.data.ndim != 2:
        raise ValueError(f"transpose expects a 2-d tensor, got {a.data.shape}")
    return make_op(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    a = _lift(a)
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def log(a):
    a = _lift(a)
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def power(a, exponent):
    """Elementwise a**exponent for a constant exponent.

    exponent == 0 gives the constant 1 with zero derivative everywhere,
    also at a == 0 where the naive p*a**(p-1) rule would produce 0*inf.
    """
    a = _lift(a)
    p = float(exponent)
    if p == 0.0:
        return make_op(np.ones_like(a.data), (a,), lambda g: (np.zeros_like(g),))
    return make_op(
        a.data**p,
        (a,),
        lambda g: (g * (p * a.data ** (p - 1.0)),),
    )


def clamp(a, lo=None, hi=None):
    """Clip values; gradient passes only through the unclipped region."""
    a = _lift(a)
    out = np.clip(a.data, lo, hi)
    mask = np.ones(a.data.shape, dtype=bool)
    if lo is not None:
        mask &= a.data >= lo
    if hi is not None:
        mask &= a.data <= hi
    return make_op(out, (a,), lambda g: (g * mask,))


def sum_all(a):
    a = _lift(a)
    return make_op(
        np.asarray(a.data.sum()),
        (a,),
        lambda g: (np.full_like(a.data, float(g)),),
    )


def mean_all(a):
    a = _lift(a)
    n = a.data.size
    return make_op(
        np.asarray(a.data.mean()),
        (a,),
        lambda g: (np.full_like(a.data, float(g) / n),),
    )


def gather_rows(a, index):
    """Pick one column per row: out[i] = a[i, index[i]]."""
    a = _lift(a)
    idx = np.asarray(index, dtype=np.intp)
    if a.data.ndim != 2 or idx.shape != (a.data.shape[0],):
        raise ValueError(
            f"gather_rows expects [N, C] and index [N], got {a.data.shape} and {idx.shape}"
        )
    rows = np.arange(a.data.shape[0])

    def vjp(g):
        out = np.zeros_like(a.data)
        out[rows, idx] = g
        return (out,)

    return make_op(a.data[rows, idx], (a,), vjp)


def concat(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return make_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp)
