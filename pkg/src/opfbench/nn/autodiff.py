"""Reverse-mode autodiff over numpy arrays."""

import itertools

import numpy as np

_ids = itertools.count()


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "id", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward
        self.id = next(_ids)
        self.name = name

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def _acc(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        order, seen = [], set()
        # iterative post-order walk; deep graphs would overflow recursion
        stack = [(self, False)]
        while stack:
            t, done = stack.pop()
            if done:
                order.append(t)
                continue
            if t.id in seen:
                continue
            seen.add(t.id)
            stack.append((t, True))
            for p in t._parents:
                if p.id not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)
        for t in reversed(order):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        a._acc(_unbroadcast(g, a.shape))
        b._acc(_unbroadcast(g, b.shape))

    return Tensor(a.data + b.data, parents=(a, b), backward=bw)


def neg(a):
    return Tensor(-a.data, parents=(a,), backward=lambda g: a._acc(-g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._acc(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._acc(_unbroadcast(g * a.data, b.shape))

    return Tensor(a.data * b.data, parents=(a, b), backward=bw)


def reciprocal(a):
    out = 1.0 / a.data
    return Tensor(out, parents=(a,), backward=lambda g: a._acc(-g * out * out))


def square(a):
    return Tensor(a.data * a.data, parents=(a,), backward=lambda g: a._acc(2.0 * g * a.data))


def sqrt(a):
    out = np.sqrt(a.data)
    return Tensor(out, parents=(a,), backward=lambda g: a._acc(0.5 * g / out))


def exp(a):
    out = np.exp(a.data)
    return Tensor(out, parents=(a,), backward=lambda g: a._acc(g * out))


def log(a):
    return Tensor(np.log(a.data), parents=(a,), backward=lambda g: a._acc(g / a.data))


def relu(a):
    mask = a.data > 0
    return Tensor(a.data * mask, parents=(a,), backward=lambda g: a._acc(g * mask))


def matmul(a, b):
    """Batched matmul with numpy semantics (both operands at least 2-D)."""
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._acc(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._acc(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return Tensor(a.data @ b.data, parents=(a, b), backward=bw)


def tsum(a, axis=None, keepdims=False):
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._acc(np.broadcast_to(g, a.shape))

    return Tensor(a.data.sum(axis=axis, keepdims=keepdims), parents=(a,), backward=bw)


def tmean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    return Tensor(a.data.reshape(shape), parents=(a,), backward=lambda g: a._acc(g.reshape(a.shape)))


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inv = np.argsort(axes)
    return Tensor(np.transpose(a.data, axes), parents=(a,), backward=lambda g: a._acc(np.transpose(g, inv)))


def swapaxes(a, i, j):
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, tuple(axes))


def softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        a._acc(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return Tensor(out, parents=(a,), backward=bw)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    d = x.shape[-1]

    def bw(g):
        if gamma.requires_grad:
            gamma._acc(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta._acc(_unbroadcast(g, beta.shape))
        if x.requires_grad:
            gx = g * gamma.data
            x._acc(inv / d * (d * gx - gx.sum(axis=-1, keepdims=True)
                              - xhat * (gx * xhat).sum(axis=-1, keepdims=True)))

    return Tensor(out, parents=(x, gamma, beta), backward=bw)


def dropout(x, p, rng, training):
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return Tensor(x.data * keep, parents=(x,), backward=lambda g: x._acc(g * keep))


def mse_loss(pred, target):
    diff = pred - as_tensor(target)
    return tmean(square(diff))


def grad_check(f, point, step=1e-6, n_checks=None, seed=0):
    """Normwise relative error between reverse-mode and central-difference
    gradients of scalar ``f`` over the arrays in ``point``:
    max|g_ad - g_fd| / max(max|g_ad|, max|g_fd|) over all checked coordinates.

    ``f`` takes a list of Tensors and returns a scalar Tensor.  With
    ``n_checks`` only that many randomly chosen coordinates per array are
    differenced."""
    arrays = [np.array(p, dtype=np.float64) for p in point]
    params = [Tensor(a, requires_grad=True) for a in arrays]
    out = f(params)
    out.backward()
    rng = np.random.default_rng(seed)
    ana_all, num_all = [], []
    for k, a in enumerate(arrays):
        ana = params[k].grad if params[k].grad is not None else np.zeros_like(a)
        flat = a.ravel()
        idx = np.arange(flat.size)
        if n_checks is not None and n_checks < flat.size:
            idx = rng.choice(flat.size, n_checks, replace=False)
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + step
            fp = float(f([Tensor(x) for x in arrays]).data)
            flat[i] = old - step
            fm = float(f([Tensor(x) for x in arrays]).data)
            flat[i] = old
            num[j] = (fp - fm) / (2 * step)
        ana_all.append(ana.ravel()[idx])
        num_all.append(num)
    an, nu = np.concatenate(ana_all), np.concatenate(num_all)
    scale = max(np.max(np.abs(an), initial=0.0), np.max(np.abs(nu), initial=0.0), 1e-12)
    return float(np.max(np.abs(an - nu), initial=0.0) / scale)
