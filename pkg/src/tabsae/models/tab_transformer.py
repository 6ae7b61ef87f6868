"""TabTransformer: contextual column embeddings + MLP head over [embeddings, numerics]."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..nn import Dropout, EncoderLayer, Linear, Module, Parameter
from ..tensor import NumericError, Tensor, concat, embedding
from .base import TabularClassifier


@dataclass
class TabTransformerConfig:
    vocab_sizes: list[int] = field(default_factory=list)
    n_num: int = 0
    embed_dim: int = 64
    heads: int = 4
    layers: int = 2
    ff_dim: int = 128
    dropout: float = 0.1
    mlp_hidden: list[int] = field(default_factory=lambda: [128, 64])
    n_classes: int = 3
    activation: str = "gelu"

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide embed_dim ({self.embed_dim})")
        if len(self.vocab_sizes) + self.n_num == 0:
            raise ValueError("model needs at least one feature column")
        if self.activation != "gelu":
            raise ValueError("only the gelu activation is implemented")


class MLPHead(Module):
    def __init__(self, d_in: int, hidden: list[int], n_out: int, rng: np.random.Generator, p: float):
        dims = [d_in] + list(hidden)
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.out = Linear(dims[-1], n_out, rng)
        self.drop = Dropout(p)

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = self.drop(layer(x).gelu())
        return self.out(x)


class TabTransformerClassifier(TabularClassifier):
    kind = "tab_transformer"
    config_type = TabTransformerConfig

    def __init__(self, config: TabTransformerConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        m = len(config.vocab_sizes)
        d = config.embed_dim
        self._offsets = (np.concatenate([[0], np.cumsum(config.vocab_sizes)[:-1]]).astype(np.int64)
                         if m else np.zeros(0, dtype=np.int64))
        self.value_table = Parameter(rng.normal(0.0, 1.0, size=(max(sum(config.vocab_sizes), 1), d)))
        self.column_id = Parameter(rng.normal(0.0, 1.0, size=(max(m, 1), d)))
        self.encoder = [EncoderLayer(d, config.heads, config.ff_dim, rng, config.dropout)
                        for _ in range(config.layers)]
        self.mlp = MLPHead(m * d + config.n_num, config.mlp_hidden, config.n_classes, rng, config.dropout)

    def column_embed(self, cat: np.ndarray) -> Tensor:
        """[B, m_cat] indices -> [B, m_cat, embed_dim]: value embedding + column identifier."""
        cfg = self.config
        if cat.shape[1] != len(cfg.vocab_sizes):
            raise ValueError(f"expected {len(cfg.vocab_sizes)} categorical columns, got {cat.shape[1]}")
        if np.any(cat < 0) or np.any(cat >= np.asarray(cfg.vocab_sizes)):
            raise ValueError("categorical index outside its vocabulary")
        m = len(cfg.vocab_sizes)
        return embedding(self.value_table, cat + self._offsets) + self.column_id[0:m]

    def contextual(self, cat: np.ndarray) -> Tensor:
        x = self.column_embed(cat)
        for i, layer in enumerate(self.encoder):
            x = layer(x)
            if not np.all(np.isfinite(x.data)):
                raise NumericError(f"non-finite output in transformer layer {i}")
        return x

    def attention_weights(self) -> list[np.ndarray]:
        return [layer.attn.attention_weights() for layer in self.encoder]

    def forward(self, cat: np.ndarray, num: np.ndarray) -> Tensor:
        cfg = self.config
        B = cat.shape[0] if len(cfg.vocab_sizes) else num.shape[0]
        parts = []
        if cfg.vocab_sizes:
            parts.append(self.contextual(cat).reshape(B, len(cfg.vocab_sizes) * cfg.embed_dim))
        if cfg.n_num:
            parts.append(Tensor(num))
        x = parts[0] if len(parts) == 1 else concat(parts, axis=1)
        return self.mlp(x)
