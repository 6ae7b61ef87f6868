"""SMOTE oversampling followed by Edited Nearest Neighbours cleaning.

Neighbour search is exhaustive.  Squared distances are accumulated column by
column in a fixed order so that the vectorised search and the pure-Python
reference produce identical floating-point distances, and therefore identical
neighbour sets (ties go to the lower row index).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InsufficientClassError(ValueError):
    pass


@dataclass
class ResampleConfig:
    smote_k: int = 5
    enn_k: int = 3
    target_strategy: str = "equalize_to_majority"
    seed: int = 0

    def __post_init__(self):
        if self.smote_k < 1:
            raise ValueError("smote_k must be >= 1")
        if self.enn_k < 1 or self.enn_k % 2 == 0:
            raise ValueError("enn_k must be a positive odd number")
        if self.target_strategy != "equalize_to_majority":
            raise ValueError(f"unsupported target strategy {self.target_strategy!r}")


@dataclass
class ResampleAudit:
    before: list[int]
    after_smote: list[int]
    after_enn: list[int]
    removed: list[int] = field(default_factory=lambda: [0, 0, 0])
    synthetic_added: list[int] = field(default_factory=lambda: [0, 0, 0])
    synthetic_removed: int = 0
    seed: int = 0
    smote_k: int = 5
    enn_k: int = 3

    def to_dict(self) -> dict:
        return {
            "before": self.before,
            "after_smote": self.after_smote,
            "after_enn": self.after_enn,
            "removed": self.removed,
            "synthetic_added": self.synthetic_added,
            "synthetic_removed": self.synthetic_removed,
            "seed": self.seed,
            "smote_k": self.smote_k,
            "enn_k": self.enn_k,
        }


def _counts(y: np.ndarray, n_classes: int = 3) -> list[int]:
    return np.bincount(y, minlength=n_classes).tolist()


def pairwise_sq_dist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, summed over columns left to right."""
    d = np.zeros((A.shape[0], B.shape[0]))
    tmp = np.empty_like(d)
    BT = np.ascontiguousarray(B.T)
    for j in range(A.shape[1]):
        np.subtract(A[:, j, None], BT[j][None, :], out=tmp)
        np.multiply(tmp, tmp, out=tmp)
        d += tmp
    return d


def knn_indices(X: np.ndarray, k: int, chunk: int = 256) -> np.ndarray:
    """k nearest neighbours of every row of X among the other rows (self excluded)."""
    n = X.shape[0]
    if k >= n:
        raise InsufficientClassError(f"need more than {k} rows for {k} neighbours, got {n}")
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d = pairwise_sq_dist(X[start:stop], X)
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        out[start:stop] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def smote(X, y, cfg: ResampleConfig, rng: np.random.Generator | None = None):
    """Raise every minority class to the majority count with interpolated rows.

    Returns ``(X', y', synthetic_flags, audit)``; original rows come first,
    unchanged, followed by synthetic rows grouped by ascending class.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    counts = _counts(y)
    majority = max(counts)
    for c, cnt in enumerate(counts):
        if 0 < cnt < majority and cnt <= cfg.smote_k:
            raise InsufficientClassError(
                f"class {c} has {cnt} rows; SMOTE with k={cfg.smote_k} needs at least {cfg.smote_k + 1}"
            )
    new_X, new_y = [X], [y]
    added = [0, 0, 0]
    for c, cnt in enumerate(counts):
        if cnt == 0 or cnt == majority:
            continue
        n_new = majority - cnt
        members = np.flatnonzero(y == c)
        Xc = X[members]
        nn = knn_indices(Xc, cfg.smote_k)
        base = rng.integers(0, cnt, size=n_new)
        pick = rng.integers(0, cfg.smote_k, size=n_new)
        lam = rng.random(n_new)
        a = Xc[base]
        b = Xc[nn[base, pick]]
        s = a + lam[:, None] * (b - a)
        s = np.clip(s, np.minimum(a, b), np.maximum(a, b))
        new_X.append(s)
        new_y.append(np.full(n_new, c, dtype=np.int64))
        added[c] = n_new
    Xo = np.concatenate(new_X, axis=0)
    yo = np.concatenate(new_y)
    flags = np.zeros(len(yo), dtype=bool)
    flags[len(y):] = True
    audit = ResampleAudit(before=counts, after_smote=_counts(yo), after_enn=_counts(yo),
                          synthetic_added=added, seed=cfg.seed, smote_k=cfg.smote_k, enn_k=cfg.enn_k)
    return Xo, yo, flags, audit


def enn(X, y, cfg: ResampleConfig):
    """Drop rows whose neighbours' strict-majority label disagrees with their own.

    The removal set is decided on the input matrix and applied in one pass.
    Returns ``(X', y', removed_indices)``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    k = cfg.enn_k
    if len(y) <= k:
        raise InsufficientClassError(f"ENN with k={k} needs more than {k} rows")
    nn = knn_indices(X, k)
    votes = np.zeros((len(y), max(3, int(y.max()) + 1)), dtype=np.int64)
    for j in range(k):
        np.add.at(votes, (np.arange(len(y)), y[nn[:, j]]), 1)
    top = votes.argmax(axis=1)
    strict = votes[np.arange(len(y)), top] * 2 > k
    remove = strict & (top != y)
    removed = np.flatnonzero(remove)
    keep = ~remove
    return X[keep], y[keep], removed


def smoteenn(X, y, cfg: ResampleConfig):
    """SMOTE then ENN; returns ``(X', y', synthetic_flags, audit)``."""
    Xs, ys, flags, audit = smote(X, y, cfg)
    Xe, ye, removed = enn(Xs, ys, cfg)
    keep = np.ones(len(ys), dtype=bool)
    keep[removed] = False
    audit.after_enn = _counts(ye)
    audit.removed = [int(np.sum(ys[removed] == c)) for c in range(3)]
    audit.synthetic_removed = int(flags[removed].sum())
    return Xe, ye, flags[keep], audit
