"""Small module system on top of :mod:`tabsae.tensor`."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .tensor import (
    Tensor,
    DimensionError,
    dropout,
    embedding,
    layer_norm,
    matmul,
    softmax,
)


def Parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Module:
    """Parameter container; attributes that are Tensors (requires_grad) or Modules are walked."""

    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: expected {p.shape}, got {arr.shape}")
            p.data = arr.copy()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 zero: bool = False):
        w = np.zeros((d_in, d_out)) if zero else uniform_init(rng, d_in, (d_in, d_out))
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator, scale: float = 1.0):
        self.table = Parameter(rng.normal(0.0, scale, size=(n, d)))

    def __call__(self, idx) -> Tensor:
        return embedding(self.table, idx)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class Dropout(Module):
    def __init__(self, p: float):
        self.p = p
        self._rng: np.random.Generator | None = None

    def set_rng(self, rng: np.random.Generator | None) -> None:
        self._rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        return dropout(x, self.p, self._rng, self.training)


def seed_dropout(model: Module, rng: np.random.Generator | None) -> None:
    for m in model.modules():
        if isinstance(m, Dropout):
            m.set_rng(rng)


class MultiHeadAttention(Module):
    """Scaled dot-product self-attention over the token axis of [B, T, d] input."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, p_drop: float = 0.0):
        if d % heads:
            raise DimensionError(f"head count {heads} does not divide width {d}")
        self.heads = heads
        self.d = d
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)
        self.drop = Dropout(p_drop)
        self._last_weights: np.ndarray | None = None

    def _split(self, x: Tensor, B: int, T: int) -> Tensor:
        return x.reshape(B, T, self.heads, self.d // self.heads).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        B, T, _ = x.shape
        dh = self.d // self.heads
        q = self._split(self.q(x), B, T)
        k = self._split(self.k(x), B, T)
        v = self._split(self.v(x), B, T)
        scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
        w = softmax(scores, axis=-1, mask=mask)
        self._last_weights = w.data
        ctx = matmul(self.drop(w), v).transpose(0, 2, 1, 3).reshape(B, T, self.d)
        return self.o(ctx)

    def attention_weights(self) -> np.ndarray | None:
        """Weights [B, heads, T, T] from the most recent forward call."""
        return self._last_weights


class FeedForward(Module):
    def __init__(self, d: int, hidden: int, rng: np.random.Generator, p_drop: float = 0.0):
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d, rng)
        self.drop = Dropout(p_drop)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.drop(self.fc1(x).gelu()))


class EncoderLayer(Module):
    """Post-norm transformer layer: LN(x + MHA(x)), then LN(h + FF(h))."""

    def __init__(self, d: int, heads: int, ff: int, rng: np.random.Generator, p_drop: float):
        self.attn = MultiHeadAttention(d, heads, rng, p_drop)
        self.norm1 = LayerNorm(d)
        self.ff = FeedForward(d, ff, rng, p_drop)
        self.norm2 = LayerNorm(d)
        self.drop = Dropout(p_drop)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        h = self.norm1(x + self.drop(self.attn(x, mask)))
        return self.norm2(h + self.drop(self.ff(h)))
