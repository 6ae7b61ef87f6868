"""Desk-scale prior-data-fitted network for in-context classification.

A transformer encoder sees a labelled support set and unlabelled queries as
one token sequence.  Support tokens attend among themselves; each query
attends to the support and to itself only, so queries never exchange
information.  Meta-training fits the network on tasks drawn from a synthetic
prior; at deployment it predicts with a single forward pass.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..nn import EncoderLayer, Linear, Module, Parameter, seed_dropout
from ..train import Adam, TrainingFailure
from ..tensor import Tensor, concat, cross_entropy, embedding, no_grad, softmax

log = logging.getLogger(__name__)


class CapacityError(ValueError):
    pass


# ------------------------------------------------------------------- the prior
@dataclass
class TaskPrior:
    min_features: int = 2
    max_features: int = 8
    n_classes: int = 3
    teachers: tuple[str, ...] = ("linear", "mlp")
    label_noise: float = 0.0
    min_support: int = 16
    max_support: int = 64
    n_query: int = 16
    mlp_hidden: int = 16

    def __post_init__(self):
        if not 1 <= self.min_features <= self.max_features:
            raise ValueError("feature range must satisfy 1 <= min <= max")
        if not 2 <= self.min_support <= self.max_support <= 256:
            raise ValueError("support size range must lie within [2, 256]")
        if not 0.0 <= self.label_noise < 1.0:
            raise ValueError("label noise must be in [0, 1)")
        if self.n_classes != 3:
            raise ValueError("only 3-class tasks are supported")
        for t in self.teachers:
            if t not in ("linear", "mlp"):
                raise ValueError(f"unknown teacher family {t!r}")


@dataclass
class Task:
    x_support: np.ndarray
    y_support: np.ndarray
    x_query: np.ndarray
    y_query: np.ndarray
    teacher: str


def _teacher_logits(kind: str, X: np.ndarray, params) -> np.ndarray:
    if kind == "linear":
        W, b = params
        return X @ W + b
    W1, b1, W2, b2 = params
    return np.tanh(X @ W1 + b1) @ W2 + b2


def sample_task(prior: TaskPrior, seed=None, rng: np.random.Generator | None = None,
                n_features: int | None = None, n_support: int | None = None,
                teacher: str | None = None) -> Task:
    """Draw a teacher, then i.i.d. support and query examples labelled by it."""
    rng = np.random.default_rng(seed) if rng is None else rng
    F = n_features or int(rng.integers(prior.min_features, prior.max_features + 1))
    ns = n_support or int(rng.integers(prior.min_support, prior.max_support + 1))
    kind = teacher or prior.teachers[int(rng.integers(len(prior.teachers)))]
    n = ns + prior.n_query
    for _ in range(100):
        if kind == "linear":
            params = (rng.normal(size=(F, 3)), rng.normal(scale=0.5, size=3))
        else:
            h = prior.mlp_hidden
            params = (rng.normal(size=(F, h)) / math.sqrt(F) * 2.0, rng.normal(size=h),
                      rng.normal(size=(h, 3)), rng.normal(scale=0.5, size=3))
        X = rng.normal(size=(n, F))
        y = np.argmax(_teacher_logits(kind, X, params), axis=1)
        if prior.label_noise > 0:
            flip = rng.random(n) < prior.label_noise
            y = np.where(flip, rng.integers(0, 3, size=n), y)
        if len(np.unique(y[:ns])) >= 2:
            break
    else:  # pragma: no cover - vanishingly unlikely
        raise RuntimeError("could not sample a task with two support classes")
    return Task(X[:ns], y[:ns].astype(np.int64), X[ns:], y[ns:].astype(np.int64), kind)


# ------------------------------------------------------------------- the model
@dataclass
class PFNConfig:
    max_features: int = 8
    max_support: int = 256
    d_model: int = 64
    heads: int = 4
    layers: int = 3
    ff_dim: int = 128
    dropout: float = 0.0
    n_classes: int = 3
    permutation_invariant: bool = True


def attention_mask(n_support: int, n_query: int) -> np.ndarray:
    """Boolean [N, N] mask (True = may attend): all rows see the support; queries also see themselves."""
    n = n_support + n_query
    mask = np.zeros((n, n), dtype=bool)
    mask[:, :n_support] = True
    idx = np.arange(n_support, n)
    mask[idx, idx] = True
    return mask


def standardize_task(x_support: np.ndarray, x_query: np.ndarray, max_features: int):
    """Z-score with support statistics, zero-pad to ``max_features`` and rescale for width."""
    F = x_support.shape[-1]
    if F > max_features:
        raise CapacityError(f"{F} features exceed the model's {max_features}")
    mu = x_support.mean(axis=-2, keepdims=True)
    sd = x_support.std(axis=-2, keepdims=True)
    sd = np.where(sd > 0, sd, 1.0)
    scale = math.sqrt(max_features / F)

    def prep(x):
        z = (x - mu) / sd * scale
        pad = np.zeros(x.shape[:-1] + (max_features - F,))
        return np.concatenate([z, pad], axis=-1)

    return prep(x_support), prep(x_query)


class PFNModel(Module):
    kind = "pfn"
    config_type = PFNConfig

    def __init__(self, config: PFNConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        d = config.d_model
        self.x_proj = Linear(config.max_features, d, rng)
        self.label_emb = Parameter(rng.normal(0.0, 1.0, size=(config.n_classes + 1, d)))
        self.encoder = [EncoderLayer(d, config.heads, config.ff_dim, rng, config.dropout)
                        for _ in range(config.layers)]
        self.head = Linear(d, config.n_classes, rng)
        self.curve: list[float] = []

    def forward_tokens(self, xs: np.ndarray, ys: np.ndarray, xq: np.ndarray) -> Tensor:
        """Logits [B, Q, C] for prepared (standardized, padded) batched inputs.

        ``xs`` and ``xq`` may be arrays or Tensors (the latter to differentiate
        with respect to the inputs).
        """
        xs = xs if isinstance(xs, Tensor) else Tensor(xs)
        xq = xq if isinstance(xq, Tensor) else Tensor(xq)
        B, ns, _ = xs.shape
        nq = xq.shape[1]
        if ns > self.config.max_support:
            raise CapacityError(f"support of {ns} exceeds capacity {self.config.max_support}")
        labels = np.concatenate([ys, np.full((B, nq), self.config.n_classes)], axis=1)
        tokens = self.x_proj(concat([xs, xq], axis=1)) + embedding(self.label_emb, labels)
        mask = attention_mask(ns, nq)
        h = tokens
        for layer in self.encoder:
            h = layer(h, mask)
        return self.head(h[:, ns:, :])

    def __call__(self, xs, ys, xq) -> Tensor:
        return self.forward_tokens(xs, ys, xq)


def pfn_predict(model: PFNModel, x_train: np.ndarray, y_train: np.ndarray, x_test: np.ndarray,
                batch_size: int = 256) -> np.ndarray:
    """Posterior-predictive class probabilities for ``x_test`` given a labelled support set."""
    cfg = model.config
    x_train = np.asarray(x_train, dtype=np.float64)
    x_test = np.asarray(x_test, dtype=np.float64)
    if len(x_train) > cfg.max_support:
        raise CapacityError(f"support of {len(x_train)} rows exceeds capacity {cfg.max_support}")
    xs, xq = standardize_task(x_train, x_test, cfg.max_features)
    ys = np.asarray(y_train, dtype=np.int64)
    was = model.training
    model.eval()
    out = []
    with no_grad():
        for s in range(0, len(xq), batch_size):
            logits = model(xs[None], ys[None], xq[None, s:s + batch_size])
            out.append(softmax(logits, axis=-1).data[0])
    model.train(was)
    return np.concatenate(out, axis=0) if out else np.zeros((0, cfg.n_classes))


def _task_batch(prior: TaskPrior, rng: np.random.Generator, n_tasks: int, max_features: int):
    F = int(rng.integers(prior.min_features, prior.max_features + 1))
    ns = int(rng.integers(prior.min_support, prior.max_support + 1))
    xs, ys, xq, yq = [], [], [], []
    for _ in range(n_tasks):
        t = sample_task(prior, rng=rng, n_features=F, n_support=ns)
        a, b = standardize_task(t.x_support, t.x_query, max_features)
        xs.append(a)
        ys.append(t.y_support)
        xq.append(b)
        yq.append(t.y_query)
    return np.stack(xs), np.stack(ys), np.stack(xq), np.stack(yq)


@dataclass
class MetaTrainConfig:
    steps: int = 2000
    tasks_per_step: int = 8
    lr: float = 1e-3
    weight_decay: float = 0.0
    warmup: int = 100
    seed: int = 42
    divergence_factor: float = 10.0
    divergence_patience: int = 100


def meta_train(model: PFNModel, prior: TaskPrior, cfg: MetaTrainConfig | None = None,
               steps: int | None = None, seed: int | None = None) -> PFNModel:
    """Minimise query cross-entropy over tasks sampled from ``prior``.

    Records the per-step loss in ``model.curve``.  Raises TrainingFailure when the
    loss stays above ``divergence_factor`` x its initial value for
    ``divergence_patience`` consecutive steps.
    """
    cfg = cfg or MetaTrainConfig()
    if steps is not None:
        cfg.steps = steps
    if seed is not None:
        cfg.seed = seed
    if cfg.steps < 1:
        raise ValueError("meta-training needs at least one step")
    if prior.max_features > model.config.max_features or prior.max_support > model.config.max_support:
        raise CapacityError("task prior exceeds the model's feature or support capacity")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.named_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    model.train()
    seed_dropout(model, np.random.default_rng(cfg.seed + 1))
    first = None
    bad = 0
    for step in range(cfg.steps):
        xs, ys, xq, yq = _task_batch(prior, rng, cfg.tasks_per_step, model.config.max_features)
        logits = model(xs, ys, xq)
        B, Q, C = logits.shape
        loss = cross_entropy(logits.reshape(B * Q, C), yq.reshape(-1))
        model.zero_grad()
        loss.backward()
        opt.lr = cfg.lr * min(1.0, (step + 1) / max(cfg.warmup, 1))
        opt.step()
        val = loss.item()
        model.curve.append(val)
        first = val if first is None else first
        bad = bad + 1 if val > cfg.divergence_factor * first else 0
        if bad >= cfg.divergence_patience:
            raise TrainingFailure(f"meta-training diverged at step {step} (loss {val:.3g})")
        if step % 200 == 0:
            log.info("pfn step %d loss %.4f", step, val)
    model.eval()
    return model


def evaluate_on_tasks(model: PFNModel, prior: TaskPrior, n_tasks: int, seed: int,
                      teacher: str | None = "linear") -> float:
    """Mean query accuracy over ``n_tasks`` freshly sampled held-out tasks."""
    rng = np.random.default_rng(seed)
    hits = total = 0
    for _ in range(n_tasks):
        t = sample_task(prior, rng=rng, teacher=teacher)
        p = pfn_predict(model, t.x_support, t.y_support, t.x_query)
        hits += int(np.sum(np.argmax(p, axis=1) == t.y_query))
        total += len(t.y_query)
    return hits / total
