"""Layers built on the autodiff tensors.  Initialisation follows the common
uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) rule for affine maps."""

import math

import numpy as np

from . import autodiff as ad


class Module:
    training = True

    def named_parameters(self, prefix=""):
        out = []
        for k, v in vars(self).items():
            if isinstance(v, ad.Tensor) and v.requires_grad:
                out.append((prefix + k, v))
            elif isinstance(v, Module):
                out += v.named_parameters(prefix + k + ".")
            elif isinstance(v, list):
                for i, m in enumerate(v):
                    if isinstance(m, Module):
                        out += m.named_parameters(f"{prefix}{k}.{i}.")
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def param_count(self):
        return int(sum(p.data.size for p in self.parameters()))

    def modules(self):
        yield self
        for v in vars(self).values():
            if isinstance(v, Module):
                yield from v.modules()
            elif isinstance(v, list):
                for m in v:
                    if isinstance(m, Module):
                        yield from m.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {k: np.array(p.data) for k, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        if set(own) != set(state):
            raise KeyError(f"parameter names differ: {sorted(set(own) ^ set(state))[:5]}")
        for k, p in own.items():
            a = np.asarray(state[k], dtype=np.float64)
            if a.shape != p.data.shape:
                raise ValueError(f"{k}: shape {a.shape} != {p.data.shape}")
            p.data = np.array(a)


class Linear(Module):
    """x @ W + b, weights U(-gain/sqrt(n_in), gain/sqrt(n_in)); gain sqrt(6) is He-uniform."""

    def __init__(self, n_in, n_out, rng, gain=1.0):
        bound = 1.0 / math.sqrt(n_in)
        self.weight = ad.parameter(rng.uniform(-gain * bound, gain * bound, (n_in, n_out)))
        self.bias = ad.parameter(rng.uniform(-bound, bound, n_out))
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x):
        return x @ self.weight + self.bias

    def macs(self, rows=1):
        return rows * self.n_in * self.n_out


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        self.gamma = ad.parameter(np.ones(d))
        self.beta = ad.parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x):
        return ad.layer_norm(x, self.gamma, self.beta, self.eps)


class Dropout(Module):
    def __init__(self, p, rng):
        self.p = p
        self.rng = rng

    def __call__(self, x):
        return ad.dropout(x, self.p, self.rng, self.training)


class MultiHeadAttention(Module):
    def __init__(self, d, heads, dropout, rng):
        if d % heads:
            raise ValueError(f"embedding width {d} not divisible by {heads} heads")
        self.d, self.h = d, heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.out = Linear(d, d, rng)
        self.drop = Dropout(dropout, rng)

    def _split(self, x, B, N):
        # (B, N, d) -> (B, h, N, d/h)
        return ad.transpose(x.reshape(B, N, self.h, self.d // self.h), (0, 2, 1, 3))

    def __call__(self, x):
        B, N, _ = x.shape
        q = self._split(self.q(x), B, N)
        k = self._split(self.k(x), B, N)
        v = self._split(self.v(x), B, N)
        scores = (q @ ad.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(self.d // self.h))
        a = self.drop(ad.softmax(scores, axis=-1))
        ctx = ad.transpose(a @ v, (0, 2, 1, 3)).reshape(B, N, self.d)
        return self.out(ctx)

    def macs(self, N):
        proj = 4 * N * self.d * self.d
        attn = 2 * N * N * self.d  # scores and weighted sum over all heads
        return proj + attn


class EncoderLayer(Module):
    """Post-norm encoder block: x = LN(x + att(x)); x = LN(x + ff(x))."""

    def __init__(self, d, heads, ff, dropout, rng, activation=ad.relu):
        self.attn = MultiHeadAttention(d, heads, dropout, rng)
        self.norm1 = LayerNorm(d)
        self.norm2 = LayerNorm(d)
        self.ff1 = Linear(d, ff, rng)
        self.ff2 = Linear(ff, d, rng)
        self.drop1 = Dropout(dropout, rng)
        self.drop2 = Dropout(dropout, rng)
        self.drop_ff = Dropout(dropout, rng)
        self.act = activation

    def __call__(self, x):
        x = self.norm1(x + self.drop1(self.attn(x)))
        h = self.ff2(self.drop_ff(self.act(self.ff1(x))))
        return self.norm2(x + self.drop2(h))

    def macs(self, N):
        return self.attn.macs(N) + self.ff1.macs(N) + self.ff2.macs(N)
