"""Flat ``key = value`` run configuration and per-stage seed derivation."""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

from .train import ConfigError

MODEL_KINDS = ("mamba_attention", "tab_transformer", "pfn")


@dataclass
class RunConfig:
    # data
    schema: str = ""
    data: str = ""
    synthetic: str = "separable"       # separable | crash  (used when data is empty)
    synthetic_rows: int = 3000
    imbalance: list[float] = field(default_factory=lambda: [10.0, 3.0, 1.0])
    # resampling
    resample: bool = True
    smote_k: int = 5
    enn_k: int = 3
    resample_after_split: bool = False
    # model
    model: str = "mamba_attention"
    d_model: int = 256
    token_dim: int = 64
    heads: int = 8
    dropout: float = 0.3
    depth: int = 2
    query_gate: bool = False
    embed_dim: int = 64
    tt_heads: int = 4
    tt_layers: int = 2
    ff_dim: int = 128
    tt_dropout: float = 0.1
    # training
    lr: float = 1e-3
    weight_decay: float = 5e-4
    step_size: int = 10
    gamma: float = 0.5
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 10
    # in-context model
    pfn_checkpoint: str = ""
    pfn_steps: int = 2000
    pfn_tasks_per_step: int = 8
    pfn_support: int = 256
    pfn_max_features: int = 8
    # reporting
    sankey_stages: list[str] = field(default_factory=list)
    kde_features: list[str] = field(default_factory=list)
    # run
    output: str = "runs"
    run_id: str = ""
    seed: int = 42

    def validate(self) -> "RunConfig":
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.data and not self.schema:
            raise ConfigError("a data file needs a schema file")
        if not self.data and self.synthetic not in ("separable", "crash"):
            raise ConfigError(f"unknown synthetic generator {self.synthetic!r}")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if len(self.imbalance) != 3:
            raise ConfigError("imbalance needs three weights")
        return self

    @property
    def resolved_run_id(self) -> str:
        return self.run_id or f"{self.model}-seed{self.seed}"

    @property
    def run_dir(self) -> Path:
        return Path(self.output) / "report" / self.resolved_run_id

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(raw: str, ftype, key: str):
    t = ftype if isinstance(ftype, str) else getattr(ftype, "__name__", str(ftype))
    raw = raw.strip()
    try:
        if t == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if t == "int":
            return int(raw)
        if t == "float":
            return float(raw)
        if t.startswith("list[float]"):
            return [float(x) for x in raw.split(",") if x.strip()]
        if t.startswith("list[str]"):
            return [x.strip() for x in raw.split(",") if x.strip()]
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot interpret {raw!r} as {t}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines ('#' starts a comment) onto ``base``."""
    cfg = dataclasses.replace(base) if base else RunConfig()
    types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _coerce(value, types[key], key))
    return cfg


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        cfg = parse_config(p.read_text(encoding="utf-8"), cfg)
    env = os.environ.get("TABSAE_SEED")
    if env:
        cfg.seed = int(_coerce(env, "int", "TABSAE_SEED"))
    for k, v in (overrides or {}).items():
        if v is not None:
            setattr(cfg, k, v)
    return cfg.validate()


def write_config(cfg: RunConfig, path: str | Path) -> None:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def derive_seed(seed: int, stage: str) -> int:
    """Stage seed from the global seed: first 4 bytes of sha256('<seed>:<stage>')."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "big")
