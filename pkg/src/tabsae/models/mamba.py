"""MambaAttention classifier.

Each feature column becomes one token.  A block pre-normalises its input,
projects to queries/keys/values, convolves the keys causally with the
per-channel kernel ``A * exp(-B * lag)``, gates the values with that context
and projects back, adding the raw block input as a residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..nn import Dropout, LayerNorm, Linear, Module, Parameter, uniform_init
from ..tensor import (
    NumericError,
    Tensor,
    concat,
    embedding,
    exp_decay_scan,
    matmul,
)
from .base import TabularClassifier


def _inv_softplus(y: float) -> float:
    return math.log(math.expm1(y))


def kernel_eval(amp, decay, t: int) -> np.ndarray:
    """Kernel weights ``amp * exp(-decay * t)`` for a non-negative integer lag."""
    if t < 0:
        raise ValueError("kernel lag must be non-negative")
    return np.asarray(amp, dtype=np.float64) * np.exp(-np.asarray(decay, dtype=np.float64) * t)


@dataclass
class MambaConfig:
    vocab_sizes: list[int] = field(default_factory=list)
    n_num: int = 0
    d_model: int = 256
    token_dim: int = 64
    heads: int = 8
    dropout: float = 0.3
    depth: int = 2
    n_classes: int = 3
    query_gate: bool = False
    zero_head: bool = True
    init_decay: float = 0.5

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide d_model ({self.d_model})")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if len(self.vocab_sizes) + self.n_num == 0:
            raise ValueError("model needs at least one feature column")


class MambaBlock(Module):
    def __init__(self, d_in: int, d: int, rng: np.random.Generator, dropout: float,
                 query_gate: bool = False, init_decay: float = 0.5):
        self.norm = LayerNorm(d_in)
        self.W_q = Parameter(uniform_init(rng, d_in, (d_in, d)))
        self.W_k = Parameter(uniform_init(rng, d_in, (d_in, d)))
        self.W_v = Parameter(uniform_init(rng, d_in, (d_in, d)))
        self.W_0 = Parameter(uniform_init(rng, d, (d, d_in)))
        self.A = Parameter(np.ones(d))
        self.B_raw = Parameter(np.full(d, _inv_softplus(init_decay)))
        self.drop = Dropout(dropout)
        self.query_gate = query_gate

    def decay(self) -> Tensor:
        return self.B_raw.softplus()

    def context(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Return (q, k~, v) for a [B, T, d_in] input."""
        xh = self.norm(x)
        q = matmul(xh, self.W_q)
        k = matmul(xh, self.W_k)
        v = matmul(xh, self.W_v)
        return q, exp_decay_scan(k, self.A, self.decay()), v

    def __call__(self, x: Tensor) -> Tensor:
        q, kt, v = self.context(x)
        h = kt * v
        if self.query_gate:
            h = h * q.sigmoid()
        return matmul(self.drop(h), self.W_0) + x


class MambaAttentionClassifier(TabularClassifier):
    kind = "mamba_attention"
    config_type = MambaConfig

    def __init__(self, config: MambaConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        d_in = config.token_dim
        m_cat = len(config.vocab_sizes)
        self.n_tokens = m_cat + config.n_num
        self._offsets = np.concatenate([[0], np.cumsum(config.vocab_sizes)[:-1]]).astype(np.int64) \
            if m_cat else np.zeros(0, dtype=np.int64)
        self.cat_table = Parameter(rng.normal(0.0, 1.0, size=(max(sum(config.vocab_sizes), 1), d_in)))
        self.num_dir = Parameter(rng.normal(0.0, 1.0, size=(max(config.n_num, 1), d_in)))
        self.num_bias = Parameter(np.zeros((max(config.n_num, 1), d_in)))
        self.pos = Parameter(rng.normal(0.0, 0.1, size=(self.n_tokens, d_in)))
        self.blocks = [
            MambaBlock(d_in, config.d_model, rng, config.dropout, config.query_gate, config.init_decay)
            for _ in range(config.depth)
        ]
        self.head = Linear(d_in, config.n_classes, rng, zero=config.zero_head)

    def tokenize(self, cat: np.ndarray, num: np.ndarray) -> Tensor:
        """[B, m_cat] indices and [B, n_num] reals -> [B, m, token_dim] tokens."""
        cfg = self.config
        parts = []
        if cfg.vocab_sizes:
            if cat.shape[1] != len(cfg.vocab_sizes):
                raise ValueError(f"expected {len(cfg.vocab_sizes)} categorical columns, got {cat.shape[1]}")
            if np.any(cat < 0) or np.any(cat >= np.asarray(cfg.vocab_sizes)):
                raise ValueError("categorical index outside its vocabulary")
            parts.append(embedding(self.cat_table, cat + self._offsets))
        if cfg.n_num:
            if num.shape[1] != cfg.n_num:
                raise ValueError(f"expected {cfg.n_num} numeric columns, got {num.shape[1]}")
            scaled = Tensor(np.repeat(num[:, :, None], cfg.token_dim, axis=2))
            parts.append(scaled * self.num_dir + self.num_bias)
        tokens = parts[0] if len(parts) == 1 else concat(parts, axis=1)
        return tokens + self.pos

    def encode(self, cat: np.ndarray, num: np.ndarray) -> Tensor:
        x = self.tokenize(cat, num)
        for i, block in enumerate(self.blocks):
            x = block(x)
            if not np.all(np.isfinite(x.data)):
                raise NumericError(f"non-finite output in MambaAttention layer {i}")
        return x

    def forward(self, cat: np.ndarray, num: np.ndarray) -> Tensor:
        return self.head(self.encode(cat, num).mean(axis=1))


__all__ = [
    "MambaConfig",
    "MambaBlock",
    "MambaAttentionClassifier",
    "kernel_eval",
]
