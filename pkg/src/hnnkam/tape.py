"""Minimal reverse-mode tape over numpy arrays.

Only the handful of operations needed to differentiate the closed-form
input gradient of a layered network (and the linear solves of the
coordinate-transformed field) are provided. This is not a general
autodiff library.
"""

import numpy as np


class Var:
    """A node on the tape.

    ``parents`` holds ``(node, vjp)`` pairs where ``vjp`` maps the upstream
    gradient of this node to the gradient contribution for ``node``.
    """

    __slots__ = ("value", "grad", "requires_grad", "parents")

    def __init__(self, value, requires_grad=False, parents=()):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents

    @property
    def shape(self):
        return self.value.shape

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"


def param(value):
    return Var(np.array(value, dtype=float), requires_grad=True)


def as_var(x):
    return x if isinstance(x, Var) else Var(x)


def _node(value, pairs):
    pairs = tuple((p, f) for p, f in pairs if p.requires_grad)
    return Var(value, requires_grad=bool(pairs), parents=pairs)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    a, b = as_var(a), as_var(b)
    return _node(a.value + b.value, [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    ])


def sub(a, b):
    a, b = as_var(a), as_var(b)
    return _node(a.value - b.value, [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: -_unbroadcast(g, b.shape)),
    ])


def mul(a, b):
    a, b = as_var(a), as_var(b)
    return _node(a.value * b.value, [
        (a, lambda g: _unbroadcast(g * b.value, a.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.shape)),
    ])


def matmul(a, b):
    """``np.matmul`` with batch broadcasting; both operands at least 2-D."""
    a, b = as_var(a), as_var(b)
    return _node(a.value @ b.value, [
        (a, lambda g: _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape)),
        (b, lambda g: _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape)),
    ])


def tanh(a):
    a = as_var(a)
    out = np.tanh(a.value)
    return _node(out, [(a, lambda g: g * (1.0 - out * out))])


def abs_pow(a, p):
    """Elementwise ``|a|**p``; subgradient 0 at exact zeros."""
    a = as_var(a)
    if p == 2:
        return mul(a, a)
    x = a.value
    out = np.abs(x) ** p
    return _node(out, [(a, lambda g: g * p * np.sign(x) * np.abs(x) ** (p - 1))])


def total(a, axis=None, keepdims=False):
    a = as_var(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).copy()

    return _node(out, [(a, vjp)])


def mean(a):
    a = as_var(a)
    return mul(total(a), 1.0 / a.value.size)


def reshape(a, shape):
    a = as_var(a)
    return _node(a.value.reshape(shape), [(a, lambda g: g.reshape(a.shape))])


def transpose(a):
    """Swap the last two axes."""
    a = as_var(a)
    return _node(np.swapaxes(a.value, -1, -2), [(a, lambda g: np.swapaxes(g, -1, -2))])


def where_rows(mask, a):
    """Zero the rows (leading axis) where ``mask`` is False."""
    a = as_var(a)
    m = mask.reshape((-1,) + (1,) * (a.value.ndim - 1)).astype(float)
    return _node(a.value * m, [(a, lambda g: g * m)])


def _gather(x, shifts):
    # x (B, L, C) -> (B, L, k*C); column block j holds x[:, (l + s_j) % L, :]
    return np.concatenate([np.roll(x, -s, axis=1) for s in shifts], axis=2)


def _scatter(y, shifts, channels):
    out = np.zeros(y.shape[:2] + (channels,))
    for j, s in enumerate(shifts):
        out += np.roll(y[:, :, j * channels:(j + 1) * channels], s, axis=1)
    return out


def circular_patches(x, shifts):
    """Circular im2col; the adjoint is :func:`circular_unpatch`."""
    x = as_var(x)
    if tuple(shifts) == (0,):
        return x
    c = x.shape[2]
    return _node(_gather(x.value, shifts), [(x, lambda g: _scatter(g, shifts, c))])


def circular_unpatch(y, shifts, channels):
    y = as_var(y)
    if tuple(shifts) == (0,):
        return y
    return _node(_scatter(y.value, shifts, channels), [(y, lambda g: _gather(g, shifts))])


def solve(a, b, trans=False):
    """Batched ``A x = b`` (or ``A^T x = b``) for ``A`` (B, N, N), ``b`` (B, N, 1)."""
    a, b = as_var(a), as_var(b)
    A = np.swapaxes(a.value, -1, -2) if trans else a.value
    x = np.linalg.solve(A, b.value)

    def vjp_b(g):
        return np.linalg.solve(np.swapaxes(A, -1, -2), g)

    def vjp_a(g):
        gb = np.linalg.solve(np.swapaxes(A, -1, -2), g)
        ga = -gb @ np.swapaxes(x, -1, -2)
        return np.swapaxes(ga, -1, -2) if trans else ga

    return _node(x, [(a, vjp_a), (b, vjp_b)])


def backward(out):
    """Accumulate ``d out / d leaf`` into ``leaf.grad`` for every leaf on the tape.

    ``out`` must be a scalar node.
    """
    order, seen = [], set()
    stack = [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p, _ in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads = {id(out): np.ones_like(out.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, vjp in node.parents:
            contrib = vjp(g)
            key = id(p)
            grads[key] = contrib if key not in grads else grads[key] + contrib
