"""Shared classifier plumbing and the checkpoint container."""

from __future__ import annotations

import dataclasses
import io
import json
from pathlib import Path

import numpy as np

from ..nn import Module
from ..tensor import Tensor, no_grad, softmax

CHECKPOINT_VERSION = 1


class TabularClassifier(Module):
    """Base for models mapping (category indices, numeric block) to 3 logits."""

    kind = "base"

    def forward(self, cat: np.ndarray, num: np.ndarray) -> Tensor:
        raise NotImplementedError

    def __call__(self, cat, num) -> Tensor:
        return self.forward(np.asarray(cat, dtype=np.int64), np.asarray(num, dtype=np.float64))

    def predict_proba(self, cat, num, batch_size: int = 512) -> np.ndarray:
        was_training = self.training
        self.eval()
        cat = np.asarray(cat, dtype=np.int64)
        num = np.asarray(num, dtype=np.float64)
        out = []
        with no_grad():
            for s in range(0, len(cat), batch_size):
                logits = self.forward(cat[s:s + batch_size], num[s:s + batch_size])
                out.append(softmax(logits, axis=-1).data)
        self.train(was_training)
        return np.concatenate(out, axis=0) if out else np.zeros((0, 3))


def unknown_flip_rate(model: TabularClassifier, cat, num, seed: int = 0) -> float | None:
    """Share of rows whose predicted class changes when one random categorical cell becomes Unknown.

    Unknown is the last vocabulary entry of every categorical column.  Returns
    None for models without categorical inputs.
    """
    cat = np.asarray(cat, dtype=np.int64)
    vocab = np.asarray(model.config.vocab_sizes, dtype=np.int64)
    if cat.shape[1] == 0 or len(cat) == 0:
        return None
    rng = np.random.default_rng(seed)
    cols = rng.integers(0, cat.shape[1], size=len(cat))
    masked = cat.copy()
    masked[np.arange(len(cat)), cols] = vocab[cols] - 1
    before = np.argmax(model.predict_proba(cat, num), axis=1)
    after = np.argmax(model.predict_proba(masked, num), axis=1)
    return float(np.mean(before != after))


def save_checkpoint(model: Module, path: str | Path, extra: dict | None = None) -> None:
    """Write config + named parameter arrays to an ``.npz`` file (bit-exact)."""
    meta = {
        "format": "tabsae-checkpoint",
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "config": dataclasses.asdict(model.config),
        "extra": extra or {},
    }
    arrays = {f"param/{k}": v for k, v in model.state_dict().items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path):
    """Rebuild the model recorded in ``path``; returns ``(model, extra)``."""
    from . import MODEL_REGISTRY

    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        state = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
    if meta.get("format") != "tabsae-checkpoint":
        raise ValueError(f"{path}: not a tabsae checkpoint")
    if meta["version"] > CHECKPOINT_VERSION:
        raise ValueError(f"{path}: checkpoint version {meta['version']} is newer than supported")
    cls = MODEL_REGISTRY[meta["kind"]]
    model = cls(cls.config_type(**meta["config"]), seed=0)
    model.load_state_dict(state)
    return model, meta.get("extra", {})
