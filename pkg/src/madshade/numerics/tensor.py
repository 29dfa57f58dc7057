"""Define-by-run reverse-mode differentiation over numpy arrays.

Every differentiable operation creates a new :class:`Tensor` that remembers
its parents and a closure propagating the output gradient back to them.
Calling :meth:`Tensor.backward` on a scalar walks the recorded graph (the
tape) once, in reverse topological order.
"""
from __future__ import annotations

import contextlib

import numpy as np

DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Run forward passes without recording the graph."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_array(value, dtype=None):
    arr = np.asarray(value)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype == np.float64 or arr.dtype == np.float32:
        return arr
    return arr.astype(DEFAULT_DTYPE)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """An n-dimensional float array carrying an optional gradient.

    Parameters
    ----------
    data : array_like
        Values. Integer input is promoted to float32; float32 and float64
        are kept as given so gradient checks can run in double precision.
    requires_grad : bool
        Whether gradients should be accumulated into ``grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_live", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._live = ()
        self._backward = None
        self.name = name

    # -- bookkeeping -----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        """Return a view of the value that is cut from the graph."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def grad_or_zeros(self):
        return np.zeros_like(self.data) if self.grad is None else self.grad

    @classmethod
    def _make(cls, data, parents, backward):
        parents = tuple(p for p in parents if isinstance(p, Tensor))
        out = cls(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            # freeze which inputs were differentiable when the op ran
            out._live = tuple(p.requires_grad for p in parents)
            out._backward = backward
        return out

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        """Populate ``grad`` on every tensor that feeds into this one.

        Raises
        ------
        ValueError
            If called on a non-scalar without an explicit seed gradient.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError(
                    f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p, live in zip(node._parents, node._live):
                if live and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            parent_grads = node._backward(g)
            for p, live, pg in zip(node._parents, node._live, parent_grads):
                if pg is None or not live:
                    continue
                key = id(p)
                grads[key] = grads[key] + pg if key in grads else pg

    # -- elementwise arithmetic -------------------------------------------
    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(_as_array(other, self.dtype))
        a, b = self, other
        return Tensor._make(a.data + b.data, (a, b), lambda g: (
            _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-other if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(_as_array(other, self.dtype))
        a, b = self, other
        return Tensor._make(a.data * b.data, (a, b), lambda g: (
            _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(_as_array(other, self.dtype))
        a, b = self, other
        out = a.data / b.data
        return Tensor._make(out, (a, b), lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape)))

    def __rtruediv__(self, other):
        return Tensor(_as_array(other, self.dtype)) / self

    def __pow__(self, p):
        if isinstance(p, Tensor):
            raise TypeError("only scalar exponents are supported")
        a = self
        return Tensor._make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))

    def __matmul__(self, other):
        a, b = self, other
        def back(g):
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = np.swapaxes(a.data, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
        return Tensor._make(a.data @ b.data, (a, b), back)

    # -- shape ops --------------------------------------------------------
    def __getitem__(self, idx):
        a = self
        basic = all(isinstance(i, (slice, int, type(Ellipsis))) or i is None
                    for i in (idx if isinstance(idx, tuple) else (idx,)))
        def back(g):
            full = np.zeros_like(a.data)
            if basic:
                full[idx] += g
            else:
                np.add.at(full, idx, g)
            return (full,)
        return Tensor._make(a.data[idx], (a,), back)

    def reshape(self, *shape):
        a = self
        return Tensor._make(a.data.reshape(*shape), (a,), lambda g: (g.reshape(a.shape),))

    def transpose(self, *axes):
        a = self
        inv = np.argsort(axes)
        return Tensor._make(a.data.transpose(*axes), (a,), lambda g: (g.transpose(*inv),))

    def sum(self, axis=None, keepdims=False):
        a = self
        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)
        return Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- unary math -------------------------------------------------------
    def exp(self):
        a = self
        out = np.exp(a.data)
        return Tensor._make(out, (a,), lambda g: (g * out,))

    def log(self):
        a = self
        return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,))

    def clamp_min(self, lo):
        """``max{x, lo}``; the gradient passes only where ``x > lo``."""
        a = self
        mask = a.data > lo
        return Tensor._make(np.where(mask, a.data, lo).astype(a.dtype), (a,),
                            lambda g: (g * mask,))

    def clamp(self, lo, hi):
        """``min{max{x, lo}, hi}``; the gradient passes only strictly inside."""
        a = self
        mask = (a.data > lo) & (a.data < hi)
        return Tensor._make(np.clip(a.data, lo, hi).astype(a.dtype), (a,),
                            lambda g: (g * mask,))


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    def back(g):
        return tuple(np.split(g, splits, axis=axis))
    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis),
                        tensors, back)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))
    return Tensor._make(np.stack([t.data for t in tensors], axis=axis), tensors, back)
