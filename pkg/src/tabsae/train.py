"""Adam with decoupled weight decay, step-decay schedule and an early-stopping training loop."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .nn import Module, seed_dropout
from .tensor import NumericError, Tensor, cross_entropy, no_grad

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class TrainingFailure(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 5e-4
    step_size: int = 10
    gamma: float = 0.5
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 10
    min_delta: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 42
    divergence_factor: float = 10.0
    divergence_patience: int = 100

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigError("early-stopping patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1 or self.step_size < 1:
            raise ConfigError("batch_size, max_epochs and step_size must be positive")
        if self.lr <= 0 or not 0 < self.gamma <= 1:
            raise ConfigError("lr must be positive and gamma in (0, 1]")


def step_lr(base_lr: float, epoch: int, step_size: int = 10, gamma: float = 0.5) -> float:
    """Learning rate for a 0-based epoch: ``base_lr * gamma ** (epoch // step_size)``."""
    return base_lr * gamma ** (epoch // step_size)


class Adam:
    """Adam moments with weight decay applied directly to the parameters."""

    def __init__(self, named_params: Iterable[tuple[str, Tensor]], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay:
                p.data = p.data - self.lr * self.weight_decay * p.data
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: dict,
              cfg: TrainConfig, epoch: int) -> dict[str, np.ndarray]:
    """Functional Adam update at the scheduled rate for ``epoch``; mutates ``state``."""
    lr = step_lr(cfg.lr, epoch, cfg.step_size, cfg.gamma)
    t = state["t"] = state.get("t", 0) + 1
    out = {}
    for name, w in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}")
        m = state.setdefault("m", {}).setdefault(name, np.zeros_like(w))
        v = state.setdefault("v", {}).setdefault(name, np.zeros_like(w))
        m[...] = cfg.beta1 * m + (1 - cfg.beta1) * g
        v[...] = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        mhat = m / (1 - cfg.beta1**t)
        vhat = v / (1 - cfg.beta2**t)
        out[name] = w - lr * cfg.weight_decay * w - lr * mhat / (np.sqrt(vhat) + cfg.eps)
    return out


# ------------------------------------------------------------------- logging
LOG_FIELDS = ("epoch", "train_loss", "val_loss", "train_acc", "val_acc", "lr", "seconds")


@dataclass
class TrainingLog:
    records: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def column(self, key: str) -> list[float]:
        return [r[key] for r in self.records]

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_FIELDS)
            for r in self.records:
                w.writerow([r["epoch"]] + [repr(float(r[k])) for k in LOG_FIELDS[1:]])

    @classmethod
    def read_csv(cls, path: str | Path) -> "TrainingLog":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        recs = [{k: (int(r[k]) if k == "epoch" else float(r[k])) for k in LOG_FIELDS} for r in rows]
        out = cls(recs)
        if recs:
            out.best_epoch = int(np.argmin([r["val_loss"] for r in recs]))
        return out


# ------------------------------------------------------------------ training
def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for s in range(0, n, size):
        yield order[s:s + size]


def evaluate_loss(model, cat: np.ndarray, num: np.ndarray, y: np.ndarray,
                  batch_size: int = 512) -> tuple[float, float]:
    """Mean cross-entropy and accuracy in eval mode."""
    was = model.training
    model.eval()
    total = 0.0
    hits = 0
    with no_grad():
        for s in range(0, len(y), batch_size):
            logits = model(cat[s:s + batch_size], num[s:s + batch_size])
            yy = y[s:s + batch_size]
            total += cross_entropy(logits, yy).item() * len(yy)
            hits += int(np.sum(np.argmax(logits.data, axis=1) == yy))
    model.train(was)
    return total / len(y), hits / len(y)


def train(model: Module, train_data, val_data, cfg: TrainConfig | None = None) -> tuple[Module, TrainingLog]:
    """Mini-batch training with step decay, early stopping and best-epoch restore.

    ``train_data`` and ``val_data`` are objects with ``cat``, ``num`` and ``y``
    arrays (e.g. :class:`tabsae.data.EncodedMatrix`).
    """
    cfg = cfg or TrainConfig()
    if train_data.n == 0 or val_data.n == 0:
        raise ConfigError("training and validation splits must be non-empty")
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    seed_dropout(model, np.random.default_rng(seeds[1]))
    opt = Adam(model.named_parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps,
               weight_decay=cfg.weight_decay)
    out = TrainingLog()
    best = np.inf
    best_state = model.state_dict()
    wait = 0
    first_loss = None
    bad_steps = 0
    model.train()
    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        opt.lr = step_lr(cfg.lr, epoch, cfg.step_size, cfg.gamma)
        loss_sum = 0.0
        hits = 0
        for idx in _batches(train_data.n, cfg.batch_size, shuffle_rng):
            logits = model(train_data.cat[idx], train_data.num[idx])
            loss = cross_entropy(logits, train_data.y[idx])
            model.zero_grad()
            loss.backward()
            opt.step()
            val = loss.item()
            if first_loss is None:
                first_loss = val
            bad_steps = bad_steps + 1 if val > cfg.divergence_factor * first_loss else 0
            if bad_steps >= cfg.divergence_patience or not np.isfinite(val):
                raise TrainingFailure(f"training diverged in epoch {epoch} (loss {val:.4g})")
            loss_sum += val * len(idx)
            hits += int(np.sum(np.argmax(logits.data, axis=1) == train_data.y[idx]))
        val_loss, val_acc = evaluate_loss(model, val_data.cat, val_data.num, val_data.y)
        out.records.append({
            "epoch": epoch,
            "train_loss": loss_sum / train_data.n,
            "val_loss": val_loss,
            "train_acc": hits / train_data.n,
            "val_acc": val_acc,
            "lr": opt.lr,
            "seconds": time.perf_counter() - t0,
        })
        log.info("epoch %d train %.4f val %.4f acc %.4f", epoch, loss_sum / train_data.n,
                 val_loss, val_acc)
        if val_loss < best - cfg.min_delta:
            best = val_loss
            best_state = model.state_dict()
            out.best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                out.stopped_early = True
                break
    model.load_state_dict(best_state)
    model.eval()
    return model, out
