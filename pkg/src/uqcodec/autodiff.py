"""A small reverse-mode automatic differentiation engine over numpy arrays.

Each op records its parents and a backward closure on the output node.
Graphs are built fresh for every training step and discarded afterwards.
Only the ops the codec needs are provided. Broadcasting is accepted where
numpy allows it and gradients are summed back to the parent's shape, which
covers per-channel parameters applied over spatial positions.
"""

import itertools

import numpy as np
from scipy.special import expit

_ids = itertools.count()


class AutodiffError(RuntimeError):
    """Raised for malformed graphs or non-finite values."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "id",
                 "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, op="leaf",
                 parents=(), check=True):
        data = np.asarray(data, dtype=np.float64)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = op
        self.id = next(_ids)
        self._parents = tuple(parents)
        self._backward = None
        if check and not np.all(np.isfinite(data)):
            raise AutodiffError(f"non-finite value produced by op '{op}' (node {self.id})")

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(op={self.op!r}, shape={self.shape}{label})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, op="detach")

    __array_priority__ = 1000

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, power):
        if power != 2:
            raise NotImplementedError("only squaring is supported")
        return square(self)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x, op="const")


def _make(data, op, parents, backward):
    parents = tuple(parents)
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, op=op, parents=parents if needs else ())
    if needs:
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, "mul", (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def reciprocal(a):
    a = as_tensor(a)
    out = 1.0 / a.data
    return _make(out, "reciprocal", (a,), lambda g: (-g * out * out,))


def square(a):
    a = as_tensor(a)
    return _make(a.data * a.data, "square", (a,), lambda g: (2.0 * g * a.data,))


def matmul(a, b):
    """Matrix product, batched over leading axes like ``np.matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    # promote vectors to matrices the way np.matmul does
    a2 = a.data[None, :] if a.data.ndim == 1 else a.data
    b2 = b.data[:, None] if b.data.ndim == 1 else b.data

    def backward(g):
        g = np.asarray(g)
        if a.data.ndim == 1:
            g = np.expand_dims(g, -2)
        if b.data.ndim == 1:
            g = np.expand_dims(g, -1)
        ga = g @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g
        ga = ga.reshape(ga.shape[:-2] + (ga.shape[-1],)) if a.data.ndim == 1 else ga
        gb = gb.reshape(gb.shape[:-1]) if b.data.ndim == 1 else gb
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, "matmul", (a, b), backward)


def transpose(a):
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, -1, -2), "transpose", (a,),
                 lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(a.shape),))


def sum_(a, axis=None):
    a = as_tensor(a)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(a.data.sum(axis=axis), "sum", (a,), backward)


def mean(a):
    a = as_tensor(a)
    n = max(a.size, 1)
    return _make(a.data.mean() if a.size else np.float64(0.0), "mean", (a,),
                 lambda g: (np.full(a.shape, g / n),))


def mse(a, b):
    d = add(a, neg(b))
    return mean(square(d))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _make(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    return _make(out, "softplus", (a,), lambda g: (g * _sigmoid(a.data),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, "exp", (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), "log", (a,), lambda g: (g / a.data,))


def log2(a):
    a = as_tensor(a)
    return _make(np.log2(a.data), "log2", (a,), lambda g: (g / (a.data * np.log(2.0)),))


def lower_bound(a, bound):
    """``max(a, bound)``; gradient flows only where the input is above the bound."""
    a = as_tensor(a)
    keep = a.data > bound
    return _make(np.where(keep, a.data, bound), "lower_bound", (a,),
                 lambda g: (np.where(keep, g, 0.0),))


def round_stop_gradient(a):
    """Round half away from zero in the forward pass, zero derivative."""
    a = as_tensor(a)
    return Tensor(round_half_away(a.data), op="round")


def elementwise(a, fn, dfn, op):
    """Apply a user-supplied elementwise function with a known derivative."""
    a = as_tensor(a)
    return _make(fn(a.data), op, (a,), lambda g: (g * dfn(a.data),))


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    a = np.abs(x)
    f = np.floor(a)
    return np.copysign(f + (a - f >= 0.5), x)


def _sigmoid(x):
    return expit(x)


def _expected_link(y, multiplier):
    # contributes zero to the forward value; routes upstream * multiplier into y
    return _make(np.zeros(y.shape), "expected_grad", (y,), lambda g: (g * multiplier,))


def finite_difference_multiplier(h, y):
    """``h(y + 0.5) - h(y - 0.5)``, the derivative of ``E[h(y + U)]``."""
    y = np.asarray(y, dtype=np.float64)
    upper = _eval_const(h, y + 0.5)
    lower = _eval_const(h, y - 0.5)
    m = upper - lower
    if not np.all(np.isfinite(m)):
        bad = int(np.flatnonzero(~np.isfinite(m))[0])
        raise AutodiffError(f"function is not finite at the interval endpoints (element {bad})")
    return m


def _eval_const(h, x):
    out = h(Tensor(x, op="const"))
    return out.data if isinstance(out, Tensor) else np.asarray(out, dtype=np.float64)


def expected_grad_wrap(h, y, u, multiplier=None):
    """Evaluate ``h(y + u)`` with the derivative w.r.t. ``y`` replaced by its
    expectation over ``u``.

    ``h`` maps a Tensor to a Tensor elementwise and may close over trainable
    tensors; those still receive ordinary pathwise gradients at the sampled
    point. ``multiplier`` overrides the finite-difference rule when the
    expected derivative is known in closed form.
    """
    y = as_tensor(y)
    u = np.asarray(u, dtype=np.float64)
    if np.any(u < -0.5) or np.any(u >= 0.5):
        raise ValueError("noise samples must lie in [-0.5, 0.5)")
    sampled = h(Tensor(y.data + u, op="noisy"))
    if not y.requires_grad:
        return sampled
    if multiplier is None:
        multiplier = finite_difference_multiplier(h, y.data)
    else:
        multiplier = np.broadcast_to(np.asarray(multiplier, dtype=np.float64), y.shape)
    return add(sampled, _expected_link(y, multiplier))


def _topological_order(root):
    order = []
    state = {}
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            state[node.id] = 2
            order.append(node)
            continue
        s = state.get(node.id)
        if s == 2:
            continue
        if s == 1:
            raise AutodiffError(f"cycle detected at node {node.id}")
        state[node.id] = 1
        stack.append((node, True))
        for p in node._parents:
            ps = state.get(p.id)
            if ps == 1:
                raise AutodiffError(f"cycle detected at node {p.id}")
            if ps is None and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss):
    """Backpropagate from a scalar ``loss``.

    Sets ``.grad`` on every leaf that requires grad and returns
    ``{name: gradient}`` for the named ones.
    """
    if loss.size != 1:
        raise AutodiffError(f"loss must be scalar, got shape {loss.shape}")
    # contributions are kept separately and summed in sorted order, so the
    # result does not depend on the order branches were recorded (two terms
    # need no sort: float addition commutes exactly)
    grads = {loss.id: [np.ones(loss.shape)]}
    leaves = {}
    for node in reversed(_topological_order(loss)):
        parts = grads.pop(node.id, None)
        if parts is None:
            continue
        if len(parts) == 1:
            g = parts[0]
        elif len(parts) == 2:
            g = parts[0] + parts[1]
        else:
            g = np.sort(np.stack(parts), axis=0).sum(axis=0)
        if not np.all(np.isfinite(g)):
            raise AutodiffError(f"non-finite gradient at node {node.id} (op '{node.op}')")
        if node._backward is None:
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
                leaves[node.id] = node
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            grads.setdefault(parent.id, []).append(np.asarray(pg, dtype=np.float64))
    return {n.name: n.grad for n in leaves.values() if n.name is not None}


def zero_grad(params):
    for p in params:
        p.grad = None
