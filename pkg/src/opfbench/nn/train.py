"""SGD training with momentum, weight decay and per-epoch cosine annealing."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigMismatch, Divergence, EmptyTrainSet
from . import autodiff as ad

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 2e-6
    momentum: float = 0.9
    epochs: int = 60
    batch_size: int = 8
    schedule: str = "cosine"
    seed: int = 0

    def validate(self):
        if self.lr < 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigMismatch("need lr >= 0, epochs >= 1 and batch_size >= 1")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigMismatch(f"unknown schedule {self.schedule!r}")

    def lr_at(self, epoch):
        if self.schedule == "constant":
            return self.lr
        return 0.5 * self.lr * (1.0 + math.cos(math.pi * epoch / self.epochs))


@dataclass
class TrainResult:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    epoch0_loss: float = None  # training loss before any update
    best_epoch: int = None
    best_val: float = math.inf


class SGD:
    """Heavy-ball SGD: b = mu b + (g + wd p); p -= lr b."""

    def __init__(self, params, lr, momentum, weight_decay):
        self.params = params
        self.lr, self.mu, self.wd = lr, momentum, weight_decay
        self.buf = [None] * len(params)

    def step(self):
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad + self.wd * p.data if self.wd else p.grad
            if self.mu:
                self.buf[i] = g if self.buf[i] is None else self.mu * self.buf[i] + g
                g = self.buf[i]
            p.data = p.data - self.lr * g


def _loss(s, X, T):
    return ad.mse_loss(s.forward(X), T)


def evaluate_loss(s, X, T, batch=1024):
    s.model.eval()
    tot = 0.0
    for i in range(0, len(X), batch):
        tot += float(_loss(s, X[i:i + batch], T[i:i + batch]).data) * len(X[i:i + batch])
    return tot / len(X)


def train(s, train_ds, val_ds, cfg=None):
    """Fit ``s`` (a Surrogate) on ``train_ds``; keeps the best-validation
    parameters.  Deterministic for a fixed seed."""
    cfg = cfg or TrainConfig()
    cfg.validate()
    if len(train_ds.objective) == 0 or len(val_ds.objective) == 0:
        raise EmptyTrainSet("train and validation splits must be nonempty")
    if s.encoding is None:
        s.fit_encoding(train_ds)
    X = s.inputs(train_ds.pd, train_ds.qd)
    T = s.targets(train_ds.vm, train_ds.va)
    Xv = s.inputs(val_ds.pd, val_ds.qd)
    Tv = s.targets(val_ds.vm, val_ds.va)
    params = s.model.parameters()
    opt = SGD(params, cfg.lr, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x747261]))
    res = TrainResult()
    res.epoch0_loss = evaluate_loss(s, X, T)
    best = s.model.state_dict()
    K = len(X)
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        s.model.train()
        order = rng.permutation(K)
        tot = 0.0
        for step, i in enumerate(range(0, K, cfg.batch_size)):
            idx = order[i:i + cfg.batch_size]
            s.model.zero_grad()
            loss = _loss(s, X[idx], T[idx])
            lv = float(loss.data)
            if not math.isfinite(lv):
                raise Divergence(epoch, step, res.train_loss + [lv])
            loss.backward()
            opt.step()
            tot += lv * len(idx)
        res.train_loss.append(tot / K)
        vl = evaluate_loss(s, Xv, Tv)
        if not math.isfinite(vl):
            raise Divergence(epoch, None, res.val_loss + [vl])
        res.val_loss.append(vl)
        if vl < res.best_val:
            res.best_val, res.best_epoch = vl, epoch
            best = s.model.state_dict()
        log.info("epoch %d lr %.3g train %.5g val %.5g", epoch, opt.lr, res.train_loss[-1], vl)
    s.model.load_state_dict(best)
    s.model.eval()
    return res
