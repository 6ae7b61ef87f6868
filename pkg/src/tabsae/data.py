"""Schema, CSV ingestion, feature encoding, stratified splits and synthetic tables."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

UNKNOWN = "Unknown"
CLASS_NAMES = ("Assisted Driving", "Partial Automation", "Advanced Automation")
SAE_LABEL_MAP = {"1": 0, "2": 1, "3": 2, "4": 2, "5": 2, "0": None}
MISSING_TOKENS = {"", "na", "nan", "null", "none"}


class SchemaError(ValueError):
    pass


class DataError(ValueError):
    """Malformed input rows; ``row`` is the 0-based data-row index when known."""

    def __init__(self, msg: str, row: int | None = None):
        super().__init__(msg if row is None else f"row {row}: {msg}")
        self.row = row


class InsufficientDataError(ValueError):
    pass


class ContractError(ValueError):
    pass


# ---------------------------------------------------------------------- schema
@dataclass
class Column:
    name: str
    kind: str  # categorical | continuous | label
    vocab: list[str] = field(default_factory=list)
    label_map: dict[str, int | None] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out: dict = {"name": self.name, "kind": self.kind}
        if self.kind == "categorical":
            out["vocab"] = list(self.vocab)
        if self.kind == "label":
            out["label_map"] = dict(self.label_map)
        return out


@dataclass
class Schema:
    columns: list[Column]

    def __post_init__(self):
        labels = [c for c in self.columns if c.kind == "label"]
        if len(labels) != 1:
            raise SchemaError(f"schema needs exactly one label column, found {len(labels)}")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        for c in self.columns:
            if c.kind not in ("categorical", "continuous", "label"):
                raise SchemaError(f"column {c.name}: unknown kind {c.kind!r}")
            if c.kind == "categorical":
                if len(set(c.vocab)) != len(c.vocab):
                    raise SchemaError(f"column {c.name}: duplicate vocabulary entries")
                if UNKNOWN not in c.vocab:
                    c.vocab = list(c.vocab) + [UNKNOWN]
        lab = labels[0]
        if not lab.label_map:
            raise SchemaError(f"label column {lab.name} has an empty label_map")
        for raw, cls in lab.label_map.items():
            if cls is not None and cls not in (0, 1, 2):
                raise SchemaError(f"label_map[{raw!r}] = {cls} is not a class in {{0,1,2}}")

    @property
    def label(self) -> Column:
        return next(c for c in self.columns if c.kind == "label")

    @property
    def categorical(self) -> list[Column]:
        return [c for c in self.columns if c.kind == "categorical"]

    @property
    def continuous(self) -> list[Column]:
        return [c for c in self.columns if c.kind == "continuous"]

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"no column named {name!r}")

    def to_dict(self) -> dict:
        return {"columns": [c.to_dict() for c in self.columns]}

    @classmethod
    def from_dict(cls, doc: dict) -> "Schema":
        try:
            cols = [
                Column(
                    name=str(c["name"]),
                    kind=str(c["kind"]),
                    vocab=[str(v) for v in c.get("vocab", [])],
                    label_map={str(k): (None if v is None else int(v))
                               for k, v in c.get("label_map", {}).items()},
                )
                for c in doc["columns"]
            ]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema document: {exc}") from exc
        return cls(cols)

    @classmethod
    def load(cls, path: str | Path) -> "Schema":
        path = Path(path)
        if not path.exists():
            raise SchemaError(f"schema file not found: {path}")
        text = path.read_text(encoding="utf-8")
        if path.suffix in (".yaml", ".yml"):
            import yaml

            doc = yaml.safe_load(text)
        else:
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}: {exc}") from exc
        return cls.from_dict(doc)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


# --------------------------------------------------------------------- dataset
@dataclass
class TabularDataset:
    schema: Schema
    cat: np.ndarray          # [n, m_cat] vocabulary indices
    cont: np.ndarray         # [n, m_cont] reals, 0.0 where missing
    cont_missing: np.ndarray  # [n, m_cont] bool
    y: np.ndarray            # [n] class indices
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.y)
        self.cat = np.asarray(self.cat, dtype=np.int64).reshape(n, len(self.schema.categorical))
        self.cont = np.asarray(self.cont, dtype=np.float64).reshape(n, len(self.schema.continuous))
        self.cont_missing = np.asarray(self.cont_missing, dtype=bool).reshape(self.cont.shape)
        self.y = np.asarray(self.y, dtype=np.int64)
        for j, col in enumerate(self.schema.categorical):
            if n and (self.cat[:, j].min() < 0 or self.cat[:, j].max() >= len(col.vocab)):
                raise ContractError(f"column {col.name}: index outside vocabulary")

    @property
    def n(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "TabularDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return TabularDataset(self.schema, self.cat[idx], self.cont[idx],
                              self.cont_missing[idx], self.y[idx], dict(self.meta))

    def class_counts(self) -> list[int]:
        return np.bincount(self.y, minlength=3).tolist()

    def column_values(self, name: str) -> list[str]:
        """Decoded string values of one categorical (or the label) column."""
        if name == self.schema.label.name:
            return [str(c) for c in self.y]
        for j, col in enumerate(self.schema.categorical):
            if col.name == name:
                return [col.vocab[i] for i in self.cat[:, j]]
        raise ContractError(f"{name!r} is not a categorical column")


def ingest_csv(path: str | Path, schema: Schema) -> TabularDataset:
    """Read a CSV with a header row into a dataset, preserving row order."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    cats, conts = schema.categorical, schema.continuous
    lookup = [{v: i for i, v in enumerate(c.vocab)} for c in cats]
    label = schema.label
    cat_rows, cont_rows, miss_rows, ys = [], [], [], []
    rejected: dict[str, int] = {}
    unknown_hits = 0
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        pos = {name.strip(): i for i, name in enumerate(header)}
        for c in schema.columns:
            if c.name not in pos:
                raise SchemaError(f"{path}: missing column {c.name!r}")
        for r, rec in enumerate(reader):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(rec)}", r)
            raw_label = rec[pos[label.name]].strip()
            if raw_label not in label.label_map:
                raise DataError(f"label {raw_label!r} not in label_map", r)
            cls = label.label_map[raw_label]
            if cls is None:
                rejected[raw_label] = rejected.get(raw_label, 0) + 1
                continue
            crow = []
            for col, table in zip(cats, lookup):
                v = rec[pos[col.name]].strip()
                idx = table.get(v)
                if idx is None:
                    idx = table[UNKNOWN]
                    unknown_hits += 1
                crow.append(idx)
            vals, miss = [], []
            for col in conts:
                v = rec[pos[col.name]].strip()
                if v.lower() in MISSING_TOKENS:
                    vals.append(0.0)
                    miss.append(True)
                    continue
                try:
                    x = float(v)
                except ValueError:
                    raise DataError(f"column {col.name}: cannot parse {v!r} as a number", r) from None
                if not math.isfinite(x):
                    raise DataError(f"column {col.name}: non-finite value {v!r}", r)
                vals.append(x)
                miss.append(False)
            cat_rows.append(crow)
            cont_rows.append(vals)
            miss_rows.append(miss)
            ys.append(cls)
    for raw, count in rejected.items():
        log.warning("rejected %d rows with label %r (excluded level)", count, raw)
    n = len(ys)
    return TabularDataset(
        schema,
        np.array(cat_rows, dtype=np.int64).reshape(n, len(cats)),
        np.array(cont_rows, dtype=np.float64).reshape(n, len(conts)),
        np.array(miss_rows, dtype=bool).reshape(n, len(conts)),
        np.array(ys, dtype=np.int64),
        meta={"source": str(path), "rejected": rejected, "unknown_mapped": unknown_hits},
    )


def write_csv(ds: TabularDataset, path: str | Path) -> None:
    """Write a dataset back to CSV; the label column uses the first raw value of each class."""
    inverse: dict[int, str] = {}
    for raw, cls in ds.schema.label.label_map.items():
        if cls is not None and cls not in inverse:
            inverse[cls] = raw
    cats = ds.schema.categorical
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([c.name for c in ds.schema.columns])
        for i in range(ds.n):
            row = []
            ci = ki = 0
            for c in ds.schema.columns:
                if c.kind == "categorical":
                    row.append(cats[ci].vocab[ds.cat[i, ci]])
                    ci += 1
                elif c.kind == "continuous":
                    row.append("" if ds.cont_missing[i, ki] else repr(float(ds.cont[i, ki])))
                    ki += 1
                else:
                    row.append(inverse[int(ds.y[i])])
            w.writerow(row)


# -------------------------------------------------------------------- encoding
@dataclass
class TrainStats:
    mean: list[float]
    std: list[float]
    median: list[float]
    indicator: list[bool]      # continuous columns that get a missing-indicator column
    vocab_sizes: list[int]
    cat_names: list[str]
    cont_names: list[str]

    def to_dict(self) -> dict:
        return dict(vars(self))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainStats":
        return cls(**d)


@dataclass
class EncodedMatrix:
    """Encoded features in both forms.

    ``onehot`` is the resampler's view: one-hot blocks for each categorical column
    followed by the numeric block.  ``cat`` holds vocabulary indices for the
    embedding models and ``num`` the numeric block (z-scores then indicators).
    """

    onehot: np.ndarray
    cat: np.ndarray
    num: np.ndarray
    y: np.ndarray
    vocab_sizes: list[int]
    num_names: list[str]
    synthetic: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "EncodedMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        syn = None if self.synthetic is None else self.synthetic[idx]
        return EncodedMatrix(self.onehot[idx], self.cat[idx], self.num[idx], self.y[idx],
                             list(self.vocab_sizes), list(self.num_names), syn)

    def column_names(self, cat_names: Sequence[str], vocabs: Sequence[Sequence[str]]) -> list[str]:
        names = [f"{c}={v}" for c, vocab in zip(cat_names, vocabs) for v in vocab]
        return names + list(self.num_names)


def fit_stats(ds: TabularDataset) -> TrainStats:
    m = len(ds.schema.continuous)
    mean, std, median, ind = [], [], [], []
    for j in range(m):
        seen = ~ds.cont_missing[:, j]
        vals = ds.cont[seen, j]
        if vals.size:
            mean.append(float(vals.mean()))
            std.append(float(vals.std()))
            median.append(float(np.median(vals)))
        else:
            mean.append(0.0)
            std.append(0.0)
            median.append(0.0)
        ind.append(bool(ds.cont_missing[:, j].any()))
    return TrainStats(mean, std, median, ind,
                      [len(c.vocab) for c in ds.schema.categorical],
                      [c.name for c in ds.schema.categorical],
                      [c.name for c in ds.schema.continuous])


def encode(ds: TabularDataset, stats: TrainStats | None = None) -> tuple[EncodedMatrix, TrainStats]:
    """Z-score continuous columns and one-hot categoricals.

    Without ``stats`` the dataset is treated as the training split and the
    statistics (population std) are fitted on it.
    """
    if stats is None:
        stats = fit_stats(ds)
    if (stats.cat_names != [c.name for c in ds.schema.categorical]
            or stats.cont_names != [c.name for c in ds.schema.continuous]
            or stats.vocab_sizes != [len(c.vocab) for c in ds.schema.categorical]):
        raise ContractError("train statistics do not match the dataset schema")
    n = ds.n
    blocks = []
    for j, size in enumerate(stats.vocab_sizes):
        oh = np.zeros((n, size))
        oh[np.arange(n), ds.cat[:, j]] = 1.0
        blocks.append(oh)
    num_cols, names = [], []
    for j, name in enumerate(stats.cont_names):
        col = np.where(ds.cont_missing[:, j], stats.median[j], ds.cont[:, j])
        if stats.std[j] > 0:
            num_cols.append((col - stats.mean[j]) / stats.std[j])
        else:
            num_cols.append(np.zeros(n))
        names.append(name)
    for j, name in enumerate(stats.cont_names):
        if stats.indicator[j]:
            num_cols.append(ds.cont_missing[:, j].astype(np.float64))
            names.append(f"{name}__missing")
    num = np.stack(num_cols, axis=1) if num_cols else np.zeros((n, 0))
    onehot = np.concatenate(blocks + [num], axis=1) if blocks else num.copy()
    return EncodedMatrix(onehot, ds.cat.copy(), num, ds.y.copy(), list(stats.vocab_sizes),
                         names, np.zeros(n, dtype=bool)), stats


def decode_onehot(X: np.ndarray, vocab_sizes: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Split a resampler-space matrix into (category indices, numeric block).

    Each categorical block decodes to its argmax (ties to the lower index), which
    is the identity on exact one-hot rows.
    """
    X = np.asarray(X, dtype=np.float64)
    cats = []
    off = 0
    for size in vocab_sizes:
        cats.append(np.argmax(X[:, off:off + size], axis=1))
        off += size
    cat = np.stack(cats, axis=1) if cats else np.zeros((len(X), 0), dtype=np.int64)
    return cat.astype(np.int64), X[:, off:].copy()


def from_onehot(X: np.ndarray, y: np.ndarray, vocab_sizes: Sequence[int], num_names: Sequence[str],
                synthetic: np.ndarray | None = None) -> EncodedMatrix:
    cat, num = decode_onehot(X, vocab_sizes)
    return EncodedMatrix(np.asarray(X, dtype=np.float64), cat, num, np.asarray(y, dtype=np.int64),
                         list(vocab_sizes), list(num_names), synthetic)


def write_encoded_csv(enc: EncodedMatrix, path: str | Path, columns: Sequence[str]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(columns) + ["label", "synthetic"])
        syn = enc.synthetic if enc.synthetic is not None else np.zeros(enc.n, dtype=bool)
        for row, label, s in zip(enc.onehot, enc.y, syn):
            w.writerow([repr(float(v)) for v in row] + [int(label), int(bool(s))])


def read_encoded_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str]]:
    """Return (X, y, synthetic flags, feature column names)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"encoded file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if "label" not in header:
            raise SchemaError(f"{path}: encoded CSV needs a 'label' column")
        li = header.index("label")
        si = header.index("synthetic") if "synthetic" in header else None
        feat = [i for i, h in enumerate(header) if i not in (li, si)]
        X, y, syn = [], [], []
        for r, rec in enumerate(reader):
            try:
                X.append([float(rec[i]) for i in feat])
                y.append(int(rec[li]))
                syn.append(bool(int(rec[si])) if si is not None else False)
            except (ValueError, IndexError) as exc:
                raise DataError(str(exc), r) from None
    d = len(feat)
    return (np.array(X, dtype=np.float64).reshape(-1, d), np.array(y, dtype=np.int64),
            np.array(syn, dtype=bool), [header[i] for i in feat])


# ----------------------------------------------------------------------- split
@dataclass
class SplitIndices:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int

    def to_dict(self) -> dict:
        return {"train": self.train.tolist(), "val": self.val.tolist(),
                "test": self.test.tolist(), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitIndices":
        return cls(np.array(d["train"], dtype=np.int64), np.array(d["val"], dtype=np.int64),
                   np.array(d["test"], dtype=np.int64), int(d["seed"]))


def _apportion(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder split of n items; each part within 1 of n*ratio."""
    exact = [n * r for r in ratios]
    base = [int(math.floor(e)) for e in exact]
    rest = n - sum(base)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:rest]:
        base[i] += 1
    return base


def stratified_split(y, ratios: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0,
                     min_per_class: int = 5) -> SplitIndices:
    y = np.asarray(y, dtype=np.int64)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ContractError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[], [], []]
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if len(idx) < min_per_class:
            raise InsufficientDataError(f"class {c} has {len(idx)} rows; need >= {min_per_class}")
        idx = idx[rng.permutation(len(idx))]
        sizes = _apportion(len(idx), ratios)
        start = 0
        for p, s in enumerate(sizes):
            parts[p].extend(idx[start:start + s].tolist())
            start += s
    out = [np.array(sorted(p), dtype=np.int64) for p in parts]
    return SplitIndices(out[0], out[1], out[2], seed)


# ------------------------------------------------------------------- synthetic
@dataclass
class SyntheticSpec:
    """Class-conditional generator for stand-in crash tables.

    ``cat_probs[c][j]`` is the distribution over column j's vocabulary for class c;
    ``cont_params[c][j]`` is (mean, std) of continuous column j for class c.
    """

    schema: Schema
    priors: Sequence[float]
    cat_probs: list[list[Sequence[float]]]
    cont_params: list[list[tuple[float, float]]]
    n_rows: int = 1000
    missing_rate: float = 0.0

    def validate(self) -> None:
        p = np.asarray(self.priors, dtype=np.float64)
        if p.shape != (3,) or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
            raise ContractError(f"class priors must be 3 non-negative values summing to 1: {self.priors}")
        if self.n_rows < 1:
            raise ContractError("n_rows must be positive")
        cats, conts = self.schema.categorical, self.schema.continuous
        for c in range(3):
            if len(self.cat_probs[c]) != len(cats) or len(self.cont_params[c]) != len(conts):
                raise ContractError(f"class {c}: per-column parameters do not match schema")
            for col, probs in zip(cats, self.cat_probs[c]):
                q = np.asarray(probs, dtype=np.float64)
                if q.shape != (len(col.vocab),) or np.any(q < 0) or not np.isclose(q.sum(), 1.0):
                    raise ContractError(f"class {c}, column {col.name}: invalid category distribution")
            for col, (_, sd) in zip(conts, self.cont_params[c]):
                if sd < 0:
                    raise ContractError(f"class {c}, column {col.name}: negative std")


def synthesize(spec: SyntheticSpec, seed: int) -> TabularDataset:
    spec.validate()
    rng = np.random.default_rng(seed)
    n = spec.n_rows
    y = rng.choice(3, size=n, p=np.asarray(spec.priors, dtype=np.float64))
    cats, conts = spec.schema.categorical, spec.schema.continuous
    cat = np.zeros((n, len(cats)), dtype=np.int64)
    cont = np.zeros((n, len(conts)))
    for c in range(3):
        rows = np.flatnonzero(y == c)
        if rows.size == 0:
            continue
        for j, probs in enumerate(spec.cat_probs[c]):
            cat[rows, j] = rng.choice(len(probs), size=rows.size, p=np.asarray(probs, dtype=np.float64))
        for j, (mu, sd) in enumerate(spec.cont_params[c]):
            cont[rows, j] = rng.normal(mu, sd, size=rows.size)
    missing = np.zeros_like(cont, dtype=bool)
    if spec.missing_rate > 0 and conts:
        missing = rng.random(cont.shape) < spec.missing_rate
        cont = np.where(missing, 0.0, cont)
    return TabularDataset(spec.schema, cat, cont, missing, y, meta={"source": "synthetic", "seed": seed})


def separable_spec(n_rows: int = 3000, n_cat: int = 14, n_cont: int = 6,
                   imbalance: Sequence[float] = (10, 3, 1), vocab: int = 5,
                   strength: float = 0.3, shift: float = 1.0, seed: int = 0) -> SyntheticSpec:
    """Mixed-column spec whose classes are well separated.

    Every categorical column puts ``strength`` extra mass on a class-specific
    value; continuous means differ by ``shift`` standard deviations per class.
    """
    rng = np.random.default_rng(seed)
    cols = [Column(f"cat_{j}", "categorical", [f"v{i}" for i in range(vocab)]) for j in range(n_cat)]
    cols += [Column(f"num_{j}", "continuous") for j in range(n_cont)]
    cols.append(Column("SAE_Level", "label", label_map=dict(SAE_LABEL_MAP)))
    schema = Schema(cols)
    w = np.asarray(imbalance, dtype=np.float64)
    priors = (w / w.sum()).tolist()
    cat_probs, cont_params = [], []
    favoured = [rng.permutation(vocab)[:3] for _ in range(n_cat)]
    signs = rng.choice([-1.0, 1.0], size=n_cont)
    for c in range(3):
        per_col = []
        for j in range(n_cat):
            p = np.full(vocab + 1, (1.0 - strength) / vocab)
            p[-1] = 0.0  # "Unknown" never generated
            p[favoured[j][c]] += strength
            per_col.append(p.tolist())
        cat_probs.append(per_col)
        cont_params.append([(float(signs[j] * shift * (c - 1) + 0.3 * j), 1.0 + 0.1 * j)
                            for j in range(n_cont)])
    return SyntheticSpec(schema, priors, cat_probs, cont_params, n_rows=n_rows)


# A subset of the crash-record roster with per-level shares (percent) for
# (Assisted Driving, Partial Automation, Advanced Automation).
_CRASH_ROSTER: dict[str, dict[str, tuple[float, float, float]]] = {
    "Wthr_Cond_ID": {"Clear": (75.4, 87.3, 82.1), "Cloudy": (15.9, 7.58, 10.3),
                     "Rain": (7.83, 4.53, 6.41), "Fog": (0.57, 0.44, 1.28), "Others": (0.30, 0.15, 0.0)},
    "Surf_Cond_ID": {"Dry": (88.0, 92.0, 91.7), "Wet": (11.0, 7.67, 7.69),
                     "Standing Water": (0.63, 0.09, 0.64), "Other": (0.37, 0.24, 0.0)},
    "Light_Cond_ID": {"Daylight": (75.2, 73.7, 69.9), "Dark, Lighted": (12.8, 18.2, 16.0),
                      "Dark, Not Lighted": (7.92, 5.57, 11.5), "Dawn/Dusk": (3.43, 2.07, 2.56),
                      "Other": (0.65, 0.46, 0.0)},
    "Road_Cls_ID": {"City Street": (36.5, 33.7, 32.1), "US & State Hwys": (26.3, 18.1, 19.2),
                    "Interstate": (14.3, 21.2, 21.8), "Farm To Market": (10.5, 12.4, 8.33),
                    "Non Trafficway": (5.11, 11.3, 5.77), "County Road": (4.93, 2.35, 9.62),
                    "Tollway": (2.39, 0.96, 3.2)},
    "Road_Type_ID": {"2 Lane, 2 Way": (35.7, 31.9, 30.1), "4 Or More Lanes, Divided": (21.6, 28.9, 17.9),
                     "4 Or More Lanes, Undivided": (23.3, 12.7, 31.4), "Not Applicable": (19.4, 26.5, 20.6)},
    "FHE_Collsn_ID": {"Same Direction": (48.9, 47.0, 40.4), "Angle": (24.1, 24.9, 23.7),
                      "One Motor Vehicle": (16.1, 17.2, 27.6), "Opposite Direction": (9.72, 8.45, 8.33),
                      "Others": (1.18, 2.45, 0.0)},
    "Prsn_Injry_Sev_ID": {"Not Injured": (83.3, 86.1, 87.8), "Possible Injury": (8.94, 8.71, 7.69),
                          "Non-Incapacitating Injury": (6.73, 4.44, 4.51),
                          "Incapacitating Injury": (0.78, 0.52, 0.0), "Killed": (0.25, 0.23, 0.0)},
    "Veh_Body_Styl_ID": {"Passenger Car": (46.0, 43.6, 63.5), "Sport Utility Vehicle": (36.5, 34.9, 25.0),
                         "Pickup": (13.4, 17.2, 10.3), "Van": (1.85, 2.44, 0.64), "Others": (2.25, 1.86, 0.56)},
    "Pop_Group_ID": {"Rural": (22.7, 13.8, 31.4), "250,000 Pop And Over": (18.2, 11.0, 28.8),
                     "100,000 - 249,999 Pop": (24.3, 10.3, 7.05), "25,000 - 49,999 Pop": (9.0, 51.7, 6.41),
                     "Others": (25.8, 13.2, 26.34)},
    "Crash_Speed_Limit": {"25 MPH or less": (5.86, 9.93, 7.05), "30-45 MPH": (59.4, 65.5, 51.9),
                          "50-65 MPH": (24.7, 17.5, 30.1), "70 MPH and Over": (10.04, 7.07, 10.95)},
    "Prsn_Ethnicity_ID": {"White": (43.9, 27.2, 32.7), "Hispanic": (29.5, 54.8, 23.1),
                          "Black": (13.3, 6.10, 11.5), "Asian": (8.04, 3.92, 8.97),
                          "Other": (5.26, 7.98, 23.73)},
    "Prsn_Gndr_ID": {"Female": (51.0, 46.1, 39.1), "Male": (45.8, 47.0, 40.4), "Unknown": (3.2, 6.9, 20.5)},
    "Intrsect_Relat_ID": {"Non Intersection": (46.1, 42.6, 56.4), "Intersection": (24.2, 22.5, 21.8),
                          "Intersection Related": (18.6, 23.9, 12.2), "Driveway Access": (11.1, 11.0, 9.6)},
}
CRASH_CLASS_COUNTS = (3345, 1148, 156)


def crash_schema() -> Schema:
    """Categorical schema for the crash-record roster, label = SAE level."""
    cols = [Column(name, "categorical", list(vals)) for name, vals in _CRASH_ROSTER.items()]
    cols.append(Column("SAE_Level", "label", label_map=dict(SAE_LABEL_MAP)))
    return Schema(cols)


def crash_like_spec(n_rows: int = 4649) -> SyntheticSpec:
    """Generator reproducing the roster's per-level marginal shares and class mix."""
    schema = crash_schema()
    counts = np.asarray(CRASH_CLASS_COUNTS, dtype=np.float64)
    cat_probs = []
    for c in range(3):
        per_col = []
        for col in schema.categorical:
            shares = _CRASH_ROSTER[col.name]
            p = np.array([shares[v][c] if v in shares else 0.0 for v in col.vocab])
            per_col.append((p / p.sum()).tolist())
        cat_probs.append(per_col)
    return SyntheticSpec(schema, (counts / counts.sum()).tolist(), cat_probs,
                         [[], [], []], n_rows=n_rows)
