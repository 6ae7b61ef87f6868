"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation records a node (parents + a closure that
pushes the output gradient to the parents).  ``backward`` linearises the
graph reachable from a scalar loss into a tape in topological order and
replays it in reverse, accumulating into ``grad`` buffers.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "DimensionError",
    "ContractError",
    "NumericError",
    "tensor",
    "zeros",
    "matmul",
    "elementwise",
    "softmax",
    "log_softmax",
    "layer_norm",
    "dropout",
    "cross_entropy",
    "concat",
    "stack",
    "embedding",
    "exp_decay_scan",
    "build_tape",
    "no_grad",
    "grad_enabled",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A call violated an operation's preconditions."""


class NumericError(FloatingPointError):
    """A NaN or infinity appeared in a forward or backward value."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"
        self.name = name

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error()

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.data.shape)
        else:
            self.grad += g

    # ------------------------------------------------------------ operators
    def __add__(self, other):
        return elementwise("add", self, other)

    def __radd__(self, other):
        return elementwise("add", self, other)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __rsub__(self, other):
        return elementwise("sub", _as_tensor(other), self)

    def __mul__(self, other):
        return elementwise("mul", self, other)

    def __rmul__(self, other):
        return elementwise("mul", self, other)

    def __truediv__(self, other):
        return elementwise("div", self, other)

    def __rtruediv__(self, other):
        return elementwise("div", _as_tensor(other), self)

    def __neg__(self):
        return elementwise("neg", self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return _getitem(self, idx)

    def exp(self):
        return elementwise("exp", self)

    def log(self):
        return elementwise("log", self)

    def sigmoid(self):
        return elementwise("sigmoid", self)

    def softplus(self):
        return elementwise("softplus", self)

    def tanh(self):
        return elementwise("tanh", self)

    def gelu(self):
        return elementwise("gelu", self)

    def relu(self):
        return elementwise("relu", self)

    def sqrt(self):
        return elementwise("sqrt", self)

    def sum(self, axis=None, keepdims: bool = False):
        return _sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return _mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return _transpose(self, tuple(axes))

    @property
    def T(self):
        return self.transpose()

    # --------------------------------------------------------------- backward
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable requires_grad tensor."""
        if grad is None:
            if self.data.size != 1:
                raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        tape = build_tape(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(tape):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient flowing into op '{node.op}'")
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _scalar_error():
    raise ContractError("item() needs a one-element tensor")


def build_tape(root: Tensor) -> list[Tensor]:
    """Topologically ordered list of nodes reachable from ``root`` (inputs first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> tuple[int, ...]:
    """One operand must already have the result shape; the other broadcasts into it."""
    if a.shape == b.shape:
        return a.shape
    try:
        out = np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc
    if out != a.shape and out != b.shape:
        raise DimensionError(
            f"{op}: shapes {a.shape} and {b.shape} would broadcast mutually to {out}"
        )
    return out


# ------------------------------------------------------------------- unary ops
def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def _unary(op: str, a: Tensor) -> Tensor:
    x = a.data
    if op == "exp":
        y = np.exp(x)
        back = lambda g: (g * y,)
    elif op == "neg":
        y = -x
        back = lambda g: (-g,)
    elif op == "log":
        y = np.log(x)
        back = lambda g: (g / x,)
    elif op == "sqrt":
        y = np.sqrt(x)
        back = lambda g: (g * 0.5 / y,)
    elif op == "sigmoid":
        y = _sigmoid(x)
        back = lambda g: (g * y * (1.0 - y),)
    elif op == "softplus":
        y = np.logaddexp(0.0, x)
        back = lambda g: (g * _sigmoid(x),)
    elif op == "tanh":
        y = np.tanh(x)
        back = lambda g: (g * (1.0 - y * y),)
    elif op == "relu":
        y = np.maximum(x, 0.0)
        back = lambda g: (g * (x > 0),)
    elif op == "gelu":
        # tanh approximation
        inner = _GELU_C * (x + 0.044715 * x**3)
        t = np.tanh(inner)
        y = 0.5 * x * (1.0 + t)

        def back(g):
            dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
            return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)
    else:
        raise ContractError(f"unknown unary op '{op}'")
    return _make(y, (a,), back, op)


def elementwise(op: str, a, b=None) -> Tensor:
    """Apply a named elementwise op.

    Unary: exp, neg, log, sqrt, sigmoid, softplus, tanh, relu, gelu.
    Binary: add, sub, mul, div.
    """
    a = _as_tensor(a)
    if b is None:
        return _unary(op, a)
    b = _as_tensor(b)
    x, z = a.data, b.data
    _check_broadcast(x, z, op)
    sa, sb = x.shape, z.shape
    if op == "add":
        y = x + z
        back = lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    elif op == "sub":
        y = x - z
        back = lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
    elif op == "mul":
        y = x * z
        back = lambda g: (_unbroadcast(g * z, sa), _unbroadcast(g * x, sb))
    elif op == "div":
        y = x / z
        back = lambda g: (_unbroadcast(g / z, sa), _unbroadcast(-g * x / (z * z), sb))
    else:
        raise ContractError(f"unknown binary op '{op}'")
    return _make(y, (a, b), back, op)


# ------------------------------------------------------------------ reductions
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def _sum(a: Tensor, axis, keepdims: bool) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    y = a.data.sum(axis=axes, keepdims=keepdims)
    shape = a.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(y), (a,), back, "sum")


def _mean(a: Tensor, axis, keepdims: bool) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return _sum(a, axes, keepdims) * (1.0 / n)


# --------------------------------------------------------------- shape ops
def _reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        y = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    return _make(y, (a,), lambda g: (g.reshape(src),), "reshape")


def _transpose(a: Tensor, axes) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def _getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape
    y = a.data[idx]

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(y, copy=True), (a,), back, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of zero tensors")
    ax = axis % tensors[0].ndim
    try:
        y = np.concatenate([t.data for t in tensors], axis=ax)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def back(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return _make(y, tensors, back, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    y = np.stack([t.data for t in tensors], axis=axis)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(y, tensors, back, "stack")


def embedding(table: Tensor, indices) -> Tensor:
    """Row lookup ``table[indices]``; gradients scatter-add back into the table."""
    idx = np.asarray(indices, dtype=np.int64)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ContractError(f"embedding index out of range [0, {n})")
    shape = table.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, shape[-1]))
        return (full,)

    return _make(table.data[idx], (table,), back, "embedding")


# ------------------------------------------------------------------- matmul
def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading batch axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    x, z = a.data, b.data
    try:
        y = np.matmul(x, z)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc

    def back(g):
        ga = np.matmul(g, np.swapaxes(z, -1, -2))
        gb = np.matmul(np.swapaxes(x, -1, -2), g)
        return _unbroadcast(ga, x.shape), _unbroadcast(gb, z.shape)

    return _make(y, (a, b), back, "matmul")


# ------------------------------------------------------------ normalisations
def softmax(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-stabilised softmax.  ``mask`` (bool, True = keep) zeroes excluded entries exactly."""
    a = _as_tensor(a)
    if a.ndim == 0:
        raise DimensionError("softmax of a 0-d tensor")
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        s = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - s),)

    return _make(y, (a,), back, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))
    y = x - lse
    p = np.exp(y)

    def back(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(y, (a,), back, "log_softmax")


def layer_norm(a: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply ``gain`` and ``bias``."""
    a = _as_tensor(a)
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    if a.ndim == 0 or a.shape[-1] == 0:
        raise DimensionError("layer_norm needs a non-empty last axis")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = None if gain is None else gain.data
    y = xhat if gd is None else xhat * gd
    if bias is not None:
        y = y + bias.data

    def back(g):
        gx = g if gd is None else g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        out = [dx]
        if gain is not None:
            out.append(_unbroadcast(g * xhat, gain.shape))
        if bias is not None:
            out.append(_unbroadcast(g, bias.shape))
        return tuple(out)

    parents = [a] + [t for t in (gain, bias) if t is not None]
    return _make(y, parents, back, "layer_norm")


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: scale kept units by 1/(1-p) in training, identity otherwise."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ContractError("dropout in training mode needs a random generator")
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return _make(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Batch-mean negative log-likelihood of integer ``targets`` under softmax(logits)."""
    logits = _as_tensor(logits)
    y = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or y.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy wants [N,C] logits and [N] targets, got "
                             f"{logits.shape} and {y.shape}")
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
    n = x.shape[0]
    rows = np.arange(n)
    loss = np.mean(lse - x[rows, y])

    def back(g):
        p = np.exp(x - lse[:, None])
        p[rows, y] -= 1.0
        return (p * (g / n),)

    return _make(np.asarray(loss), (logits,), back, "cross_entropy")


# ---------------------------------------------------------- decay scan kernel
def exp_decay_scan(k: Tensor, amp: Tensor, decay: Tensor) -> Tensor:
    """Causal convolution of ``k`` with the kernel ``amp * exp(-decay * lag)``.

    ``k`` is [..., T, d]; ``amp`` and ``decay`` are per-channel vectors of length d.
    Evaluated by the linear-time recurrence s_t = exp(-decay) * s_{t-1} + k_t,
    output ``amp * s_t``.  Gradients use the matching reverse recurrences.
    """
    k, amp, decay = _as_tensor(k), _as_tensor(amp), _as_tensor(decay)
    if k.ndim < 2 or amp.shape != (k.shape[-1],) or decay.shape != (k.shape[-1],):
        raise DimensionError(
            f"exp_decay_scan: k {k.shape}, amp {amp.shape}, decay {decay.shape}"
        )
    x = k.data
    T = x.shape[-2]
    r = np.exp(-decay.data)
    s = np.empty_like(x)
    acc = np.zeros(x.shape[:-2] + x.shape[-1:])
    for t in range(T):
        acc = acc * r + x[..., t, :]
        s[..., t, :] = acc
    y = s * amp.data

    def back(g):
        a = amp.data
        batch_axes = tuple(range(g.ndim - 1))
        g_amp = (g * s).sum(axis=batch_axes)
        # dk_tau = amp * sum_{t>=tau} r^(t-tau) g_t
        gk = np.empty_like(g)
        rev = np.zeros(g.shape[:-2] + g.shape[-1:])
        for t in range(T - 1, -1, -1):
            rev = rev * r + g[..., t, :]
            gk[..., t, :] = rev
        gk *= a
        # u_t = sum_tau (t - tau) r^(t-tau) k_tau ;  u_t = r * (u_{t-1} + s_{t-1})
        u = np.zeros(g.shape[:-2] + g.shape[-1:])
        g_decay = np.zeros_like(a)
        for t in range(1, T):
            u = r * (u + s[..., t - 1, :])
            g_decay -= (g[..., t, :] * u).reshape(-1, u.shape[-1]).sum(axis=0)
        g_decay *= a
        return gk, g_amp, g_decay

    return _make(y, (k, amp, decay), back, "exp_decay_scan")


def check_finite(t: Tensor, where: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite values in {where}")
    return t


def parameters_checksum(params: Iterable[Tensor]) -> str:
    import hashlib

    h = hashlib.sha256()
    for p in params:
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()
