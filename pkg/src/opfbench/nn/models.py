"""The two neural voltage predictors and their input/target encoding."""

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigMismatch, LayoutMismatch
from ..powerflow import VoltageState
from . import autodiff as ad
from .layers import Dropout, EncoderLayer, Linear, Module

FEATURE_SETS = ("feats-2", "feats-8")
ACTIVATIONS = {"relu": ad.relu}


@dataclass
class ModelConfig:
    kind: str = "opformer"
    features: str = "feats-2"
    dropout: float = 0.1
    activation: str = "relu"
    standardize: bool = True
    # mlp
    hidden: int = None  # default: 256 up to 100 buses, else 1024
    affine_layers: int = 7
    # opformer
    d_model: int = 16
    heads: int = 4
    encoder_layers: int = 4
    ff: int = 64
    seed: int = 0

    def resolved(self, n_buses):
        c = ModelConfig(**asdict(self))
        if c.hidden is None:
            c.hidden = 256 if n_buses <= 100 else 1024
        return c

    def validate(self):
        if self.kind not in ("mlp", "opformer"):
            raise ConfigMismatch(f"unknown model kind {self.kind!r}")
        if self.features not in FEATURE_SETS:
            raise ConfigMismatch(f"unknown feature set {self.features!r}")
        if self.kind == "mlp" and self.features != "feats-2":
            raise ConfigMismatch("the MLP takes flat load features only (feats-2)")
        if self.activation not in ACTIVATIONS:
            raise ConfigMismatch(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigMismatch("dropout must be in [0, 1)")
        if self.kind == "opformer" and self.d_model % self.heads:
            raise ConfigMismatch(f"d_model {self.d_model} not divisible by {self.heads} heads")
        if self.kind == "mlp" and self.affine_layers < 1:
            raise ConfigMismatch("MLP needs at least one affine layer")


class MLP(Module):
    def __init__(self, n_in, n_out, hidden, affine_layers, dropout, rng, activation=ad.relu):
        widths = [n_in] + [hidden] * (affine_layers - 1) + [n_out]
        # He-uniform keeps activations from shrinking through the deep ReLU stack
        gain = math.sqrt(6.0) if activation is ad.relu else 1.0
        self.layers = [Linear(a, b, rng, gain=gain) for a, b in zip(widths[:-2], widths[1:-1])]
        self.layers.append(Linear(widths[-2], widths[-1], rng))
        self.drops = [Dropout(dropout, rng) for _ in self.layers[:-1]]
        self.act = activation

    def __call__(self, x):
        for lin, drop in zip(self.layers[:-1], self.drops):
            x = drop(self.act(lin(x)))
        return self.layers[-1](x)

    def macs(self):
        return sum(l.macs() for l in self.layers)


class OPFormer(Module):
    """Per-bus tokens -> encoder stack -> concatenated token outputs -> affine head."""

    def __init__(self, n_tokens, n_feat, n_out, d, heads, layers, ff, dropout, rng, activation=ad.relu):
        self.n = n_tokens
        self.embed = Linear(n_feat, d, rng)
        self.blocks = [EncoderLayer(d, heads, ff, dropout, rng, activation) for _ in range(layers)]
        self.head = Linear(n_tokens * d, n_out, rng)
        self.d = d

    def encode(self, tokens):
        x = self.embed(tokens)
        for blk in self.blocks:
            x = blk(x)
        return x

    def __call__(self, tokens):
        x = self.encode(tokens)
        B = x.shape[0]
        return self.head(x.reshape(B, self.n * self.d))

    def macs(self):
        return self.embed.macs(self.n) + sum(b.macs(self.n) for b in self.blocks) + self.head.macs()


def _gen_bus_features(net):
    """Per-bus (pmax, qmax, qmin, c1, c2) summed over the generators at each bus."""
    out = np.zeros((net.n_buses, 5))
    for col, vals in enumerate((net.pmax, net.qmax, net.qmin, net.c1, net.c2)):
        np.add.at(out[:, col], net.gen_bus, vals)
    return out


@dataclass
class Encoding:
    """Input/target scaling fitted on a training split."""

    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray
    const: np.ndarray = None  # n x 6 scaled constant token features (feats-8)

    def arrays(self):
        d = {"x_mean": self.x_mean, "x_scale": self.x_scale, "y_mean": self.y_mean, "y_scale": self.y_scale}
        if self.const is not None:
            d["const"] = self.const
        return d


def _safe_scale(s):
    return np.where(s > 0, s, 1.0)


class Surrogate:
    """A model plus its encoding, bound to one network."""

    def __init__(self, cfg, net, model, encoding=None):
        self.cfg = cfg
        self.net = net
        self.model = model
        self.encoding = encoding
        self.fingerprint = net.fingerprint
        self.n = net.n_buses
        self.load_buses = np.asarray(net.load_buses)
        self.last_inference_s = None

    # encoding -------------------------------------------------------------

    def raw_inputs(self, pd, qd):
        pd, qd = np.atleast_2d(pd), np.atleast_2d(qd)
        if pd.shape[1] != self.n or qd.shape[1] != self.n:
            raise LayoutMismatch(f"model expects {self.n} buses per scenario, got {pd.shape[1]}")
        if self.cfg.kind == "mlp":
            return np.hstack([pd[:, self.load_buses], qd[:, self.load_buses]])
        return np.stack([pd, qd], axis=-1)  # K x n x 2

    def fit_encoding(self, train):
        X = self.raw_inputs(train.pd, train.qd)
        Y = np.hstack([train.vm, train.va])
        if self.cfg.standardize:
            ym, ys = Y.mean(axis=0), _safe_scale(Y.std(axis=0))
        else:
            ym, ys = np.zeros(Y.shape[1]), np.ones(Y.shape[1])
        const = None
        if self.cfg.features == "feats-8":
            c = np.column_stack([self.net.bs, _gen_bus_features(self.net)])
            lo, hi = c.min(axis=0), c.max(axis=0)
            const = (c - lo) / _safe_scale(hi - lo)
        self.encoding = Encoding(X.mean(axis=0), _safe_scale(X.std(axis=0)), ym, ys, const)
        return self.encoding

    def inputs(self, pd, qd):
        e = self.encoding
        X = (self.raw_inputs(pd, qd) - e.x_mean) / e.x_scale
        if e.const is not None:
            X = np.concatenate([X, np.broadcast_to(e.const, (X.shape[0],) + e.const.shape)], axis=-1)
        return X

    def targets(self, vm, va):
        e = self.encoding
        return (np.hstack([vm, va]) - e.y_mean) / e.y_scale

    def decode(self, Z):
        Y = Z * self.encoding.y_scale + self.encoding.y_mean
        return VoltageState(Y[:, :self.n], Y[:, self.n:])

    # inference ------------------------------------------------------------

    def forward(self, X):
        return self.model(ad.Tensor(X))

    def predict(self, pd, qd, batch=1024):
        self.model.eval()
        X = self.inputs(pd, qd)
        t0 = time.perf_counter()
        Z = np.concatenate([self.forward(X[i:i + batch]).data for i in range(0, len(X), batch)])
        self.last_inference_s = time.perf_counter() - t0
        return self.decode(Z)

    def param_count(self):
        return self.model.param_count()

    def macs(self):
        return self.model.macs()


def build_model(cfg, net):
    cfg = cfg.resolved(net.n_buses)
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x6D6F64]))
    act = ACTIVATIONS[cfg.activation]
    n = net.n_buses
    if cfg.kind == "mlp":
        n_in = 2 * len(net.load_buses)
        model = MLP(n_in, 2 * n, cfg.hidden, cfg.affine_layers, cfg.dropout, rng, act)
    else:
        n_feat = 2 if cfg.features == "feats-2" else 8
        model = OPFormer(n, n_feat, 2 * n, cfg.d_model, cfg.heads, cfg.encoder_layers, cfg.ff, cfg.dropout, rng, act)
    return Surrogate(cfg, net, model)


def predict_nn(s, pd, qd):
    return s.predict(pd, qd)
