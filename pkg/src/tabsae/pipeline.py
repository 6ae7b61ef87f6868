"""Pipeline stages composed through files under ``<output>/report/<run-id>/``.

Each stage reads the artifacts of its predecessors and writes its own, so the
stages can run one at a time from the command line or together through
:func:`run_pipeline` with identical results.  Intermediate files live in the
``artifacts/`` subdirectory; figure and metric files sit at the top level.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from . import data as D
from .config import RunConfig, derive_seed, write_config
from .metrics import EvaluationReport, evaluate as evaluate_probs
from .models import (MambaAttentionClassifier, MambaConfig, TabTransformerClassifier,
                     TabTransformerConfig)
from .models.base import load_checkpoint, save_checkpoint, unknown_flip_rate
from .models.pfn import MetaTrainConfig, PFNConfig, PFNModel, TaskPrior, meta_train, pfn_predict
from .reporting import (kde, render_comparison, render_confusion, render_curves, render_kde,
                        render_meta_curve, render_roc, render_sankey, sankey_flows)
from .resampling import ResampleConfig, smoteenn
from .train import TrainConfig, TrainingLog, train as train_model

log = logging.getLogger(__name__)

STAGES = ("prepare", "resample", "train", "evaluate", "report")


class StageError(RuntimeError):
    """A stage failed; ``cause`` keeps the original exception for exit-code mapping."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load(path: Path):
    if not path.exists():
        raise D.DataError(f"missing artifact {path}; run the earlier stage first")
    return json.loads(path.read_text(encoding="utf-8"))


class Run:
    """Paths and seeds of one configured run."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dir = cfg.run_dir
        self.art = self.dir / "artifacts"

    def seed(self, stage: str) -> int:
        return derive_seed(self.cfg.seed, stage)

    def path(self, name: str) -> Path:
        return self.art / name

    def ensure(self) -> None:
        self.art.mkdir(parents=True, exist_ok=True)

    def encoded(self, name: str) -> D.EncodedMatrix:
        X, y, syn, _ = D.read_encoded_csv(self.path(name))
        enc = _load(self.path("encoding.json"))
        return D.from_onehot(X, y, enc["stats"]["vocab_sizes"], enc["num_names"], syn)


# -------------------------------------------------------------------- stages
def load_dataset(cfg: RunConfig, seed: int) -> D.TabularDataset:
    if cfg.data:
        schema_path = Path(cfg.schema)
        if not schema_path.exists():
            raise D.SchemaError(f"schema file not found: {schema_path}")
        return D.ingest_csv(cfg.data, D.Schema.load(schema_path))
    if cfg.synthetic == "crash":
        spec = D.crash_like_spec(cfg.synthetic_rows)
    else:
        spec = D.separable_spec(n_rows=cfg.synthetic_rows, imbalance=tuple(cfg.imbalance))
    return D.synthesize(spec, seed)


def prepare(cfg: RunConfig) -> Path:
    """Ingest or synthesize, then encode.  Writes dataset, schema, encoding and encoded CSV."""
    run = Run(cfg)
    run.ensure()
    write_config(cfg, run.path("run.cfg"))
    ds = load_dataset(cfg, run.seed("synthesize"))
    if ds.n == 0:
        raise D.InsufficientDataError("the dataset has no usable rows")
    ds.schema.save(run.path("schema.json"))
    D.write_csv(ds, run.path("dataset.csv"))
    if cfg.resample_after_split:
        split = D.stratified_split(ds.y, seed=run.seed("split"))
        _, stats = D.encode(ds.subset(split.train))
        enc, _ = D.encode(ds, stats)
        _dump(split.to_dict(), run.path("raw_split.json"))
    else:
        enc, stats = D.encode(ds)
    names = enc.column_names(stats.cat_names, [c.vocab for c in ds.schema.categorical])
    _dump({"stats": stats.to_dict(), "num_names": enc.num_names, "columns": names},
          run.path("encoding.json"))
    D.write_encoded_csv(enc, run.path("encoded.csv"), names)
    log.info("prepared %d rows, class counts %s", ds.n, ds.class_counts())
    return run.path("encoded.csv")


def resample(cfg: RunConfig) -> Path:
    """SMOTEENN over the encoded matrix (or only its training rows) plus an audit file."""
    run = Run(cfg)
    enc = run.encoded("encoded.csv")
    columns = _load(run.path("encoding.json"))["columns"]
    rcfg = ResampleConfig(cfg.smote_k, cfg.enn_k, seed=run.seed("resample"))
    pool = np.arange(enc.n)
    rest = None
    if cfg.resample_after_split:
        raw = D.SplitIndices.from_dict(_load(run.path("raw_split.json")))
        pool, rest = raw.train, raw
    counts = np.bincount(enc.y[pool], minlength=3).tolist()
    if cfg.resample:
        X, y, syn, audit = smoteenn(enc.onehot[pool], enc.y[pool], rcfg)
        audit_doc = {"enabled": True, **audit.to_dict()}
    else:
        X, y, syn = enc.onehot[pool], enc.y[pool], np.zeros(len(pool), dtype=bool)
        audit_doc = {"enabled": False, "before": counts, "after_smote": counts, "after_enn": counts,
                     "seed": rcfg.seed, "smote_k": cfg.smote_k, "enn_k": cfg.enn_k}
    if rest is not None:
        held = np.concatenate([rest.val, rest.test])
        n_tr = len(y)
        X = np.concatenate([X, enc.onehot[held]])
        y = np.concatenate([y, enc.y[held]])
        syn = np.concatenate([syn, np.zeros(len(held), dtype=bool)])
        split = D.SplitIndices(np.arange(n_tr), np.arange(n_tr, n_tr + len(rest.val)),
                               np.arange(n_tr + len(rest.val), len(y)), rest.seed)
        _dump(split.to_dict(), run.path("split.json"))
    out = D.from_onehot(X, y, enc.vocab_sizes, enc.num_names, syn)
    D.write_encoded_csv(out, run.path("resampled.csv"), columns)
    _dump(audit_doc, run.path("audit.json"))
    log.info("resampled: %s", audit_doc)
    return run.path("resampled.csv")


def _split(run: Run, y: np.ndarray) -> D.SplitIndices:
    if run.cfg.resample_after_split:
        return D.SplitIndices.from_dict(_load(run.path("split.json")))
    split = D.stratified_split(y, seed=run.seed("split"))
    _dump(split.to_dict(), run.path("split.json"))
    return split


def build_model(cfg: RunConfig, vocab_sizes, n_num: int, seed: int):
    if cfg.model == "mamba_attention":
        mc = MambaConfig(vocab_sizes=list(vocab_sizes), n_num=n_num, d_model=cfg.d_model,
                         token_dim=cfg.token_dim, heads=cfg.heads, dropout=cfg.dropout,
                         depth=cfg.depth, query_gate=cfg.query_gate)
        return MambaAttentionClassifier(mc, seed=seed)
    tc = TabTransformerConfig(vocab_sizes=list(vocab_sizes), n_num=n_num, embed_dim=cfg.embed_dim,
                              heads=cfg.tt_heads, layers=cfg.tt_layers, ff_dim=cfg.ff_dim,
                              dropout=cfg.tt_dropout)
    return TabTransformerClassifier(tc, seed=seed)


def train_config(cfg: RunConfig, seed: int) -> TrainConfig:
    return TrainConfig(lr=cfg.lr, weight_decay=cfg.weight_decay, step_size=cfg.step_size,
                       gamma=cfg.gamma, batch_size=cfg.batch_size, max_epochs=cfg.max_epochs,
                       patience=cfg.patience, seed=seed)


def pfn_model(cfg: RunConfig, seed: int) -> PFNModel:
    """Load the configured in-context checkpoint, or meta-train one from scratch."""
    if cfg.pfn_checkpoint:
        model, _ = load_checkpoint(cfg.pfn_checkpoint)
        if not isinstance(model, PFNModel):
            raise D.ContractError(f"{cfg.pfn_checkpoint} is not an in-context model checkpoint")
        return model
    model = PFNModel(PFNConfig(max_features=cfg.pfn_max_features, max_support=max(cfg.pfn_support, 64)),
                     seed=seed)
    mcfg = MetaTrainConfig(steps=cfg.pfn_steps, tasks_per_step=cfg.pfn_tasks_per_step, seed=seed)
    prior = TaskPrior(max_features=min(TaskPrior().max_features, cfg.pfn_max_features))
    return meta_train(model, prior, mcfg)


def train(cfg: RunConfig) -> Path:
    """Split the resampled matrix, fit the configured model and save its checkpoint."""
    run = Run(cfg)
    data = run.encoded("resampled.csv")
    split = _split(run, data.y)
    if cfg.model == "pfn":
        model = pfn_model(cfg, run.seed("pfn"))
        with run.path("meta_training.csv").open("w", encoding="utf-8") as fh:
            fh.write("step,loss\n")
            fh.writelines(f"{i},{v!r}\n" for i, v in enumerate(model.curve))
        save_checkpoint(model, run.path("model.npz"), {"steps": len(model.curve)})
        return run.path("model.npz")
    model = build_model(cfg, data.vocab_sizes, data.num.shape[1], run.seed("init"))
    model, tlog = train_model(model, data.subset(split.train), data.subset(split.val),
                              train_config(cfg, run.seed("train")))
    tlog.write_csv(run.dir / "training_log.csv")
    save_checkpoint(model, run.path("model.npz"),
                    {"best_epoch": tlog.best_epoch, "stopped_early": tlog.stopped_early})
    return run.path("model.npz")


def pca_projection(X: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """(mean, components[k', d]) of the top principal directions, signs fixed deterministically."""
    mu = X.mean(axis=0)
    _, _, vt = np.linalg.svd(X - mu, full_matrices=False)
    comps = vt[:min(k, vt.shape[0])]
    flip = np.sign(comps[np.arange(len(comps)), np.argmax(np.abs(comps), axis=1)])
    return mu, comps * flip[:, None]


def pfn_features(support: np.ndarray, query: np.ndarray, max_features: int):
    """Project both sets onto the support's principal components when too wide."""
    if support.shape[1] <= max_features:
        return support, query
    mu, comps = pca_projection(support, max_features)
    return (support - mu) @ comps.T, (query - mu) @ comps.T


def support_subsample(y: np.ndarray, size: int, seed: int) -> np.ndarray:
    """Stratified subsample of at most ``size`` indices, class shares preserved."""
    if len(y) <= size:
        return np.arange(len(y))
    rng = np.random.default_rng(seed)
    counts = np.bincount(y, minlength=3)
    quota = np.floor(counts * size / len(y)).astype(int)
    for c in np.argsort(-(counts * size / len(y) - quota), kind="stable")[:size - quota.sum()]:
        quota[c] += 1
    picks = [rng.permutation(np.flatnonzero(y == c))[:quota[c]] for c in range(3)]
    return np.sort(np.concatenate(picks))


def evaluate(cfg: RunConfig) -> Path:
    """Score the held-out test split and write metrics.json."""
    run = Run(cfg)
    data = run.encoded("resampled.csv")
    split = D.SplitIndices.from_dict(_load(run.path("split.json")))
    model, _ = load_checkpoint(run.path("model.npz"))
    test = data.subset(split.test)
    if isinstance(model, PFNModel):
        tr = data.subset(split.train)
        pick = support_subsample(tr.y, min(cfg.pfn_support, model.config.max_support),
                                 run.seed("support"))
        xs, xq = pfn_features(tr.onehot[pick], test.onehot, model.config.max_features)
        probs = pfn_predict(model, xs, tr.y[pick], xq)
        flip = None
    else:
        probs = model.predict_proba(test.cat, test.num)
        flip = unknown_flip_rate(model, test.cat, test.num, run.seed("robustness"))
    report = evaluate_probs(probs, test.y, config=cfg.to_dict(), seed=cfg.seed)
    doc = report.to_dict()
    doc["robustness"] = {"unknown_flip_rate": flip, "reference_ceiling": 0.30}
    _dump(doc, run.dir / "metrics.json")
    log.info("test accuracy %.4f macro-AUC %s", report.overall_accuracy, report.macro_auc)
    return run.dir / "metrics.json"


def _kde_figures(run: Run) -> None:
    cfg = run.cfg
    before = run.encoded("encoded.csv")
    after = run.encoded("resampled.csv")
    names = list(before.num_names)
    features = cfg.kde_features or [n for n in names if not n.endswith("__missing")][:3]
    for feat in features:
        if feat not in names:
            raise D.ContractError(f"KDE feature {feat!r} is not a numeric column")
        j = names.index(feat)
        curves = []
        for c in range(3):
            for tag, m in (("original", before), ("resampled", after)):
                vals = m.num[m.y == c, j]
                if vals.size:
                    curves.append(kde(vals, feature=feat, source=f"{tag} class {c}"))
        render_kde(curves, run.dir / f"kde_{feat}.svg")


def report(cfg: RunConfig) -> Path:
    """Figures: curves, confusion, ROC, KDE overlays and the Sankey flow."""
    run = Run(cfg)
    metrics = EvaluationReport.from_dict(_load(run.dir / "metrics.json"))
    if (run.dir / "training_log.csv").exists():
        render_curves(TrainingLog.read_csv(run.dir / "training_log.csv").records, run.dir / "curves.svg")
    elif run.path("meta_training.csv").exists():
        losses = np.loadtxt(run.path("meta_training.csv"), delimiter=",", skiprows=1, ndmin=2)[:, 1]
        render_meta_curve(losses.tolist(), run.dir / "curves.svg")
    render_confusion(metrics.confusion, run.dir / "confusion.svg")
    render_roc(metrics.roc, run.dir / "roc.svg")
    _kde_figures(run)
    schema = D.Schema.load(run.path("schema.json"))
    ds = D.ingest_csv(run.path("dataset.csv"), schema)
    stages = cfg.sankey_stages or [c.name for c in schema.categorical[:3]] + [schema.label.name]
    if len(stages) >= 2:
        render_sankey(sankey_flows(ds, stages), run.dir / "sankey.svg")
    return run.dir


STAGE_FUNCS = {"prepare": prepare, "resample": resample, "train": train,
               "evaluate": evaluate, "report": report}


def run_stage(name: str, cfg: RunConfig):
    try:
        return STAGE_FUNCS[name](cfg)
    except StageError:
        raise
    except Exception as exc:  # surfaced with the stage name; artifacts so far are kept
        raise StageError(name, exc) from exc


def run_pipeline(cfg: RunConfig, stages=STAGES) -> Path:
    for name in stages:
        run_stage(name, cfg)
    return cfg.run_dir


def missing_upstream(cfg: RunConfig, stage: str) -> list[str]:
    """Earlier stages whose output artifacts are absent."""
    run = Run(cfg)
    produced = {"prepare": run.path("encoded.csv"), "resample": run.path("resampled.csv"),
                "train": run.path("model.npz"), "evaluate": run.dir / "metrics.json"}
    todo = []
    for name in STAGES[:STAGES.index(stage)]:
        if todo or not produced[name].exists():
            todo.append(name)
    return todo


# ----------------------------------------------------------------- comparison
def compare(paths, out: str | Path) -> Path:
    """Per-class F1/accuracy and macro-AUC side by side, with deltas against the first report."""
    if len(paths) < 2:
        raise D.ContractError("compare needs at least two reports")
    docs = [_load(Path(p)) for p in paths]
    classes = docs[0].get("class_names")
    for p, d in zip(paths, docs):
        if d.get("class_names") != classes or len(d["per_class"]) != len(docs[0]["per_class"]):
            raise D.ContractError(f"{p}: class labels differ from {paths[0]}")
    names, table = [], []
    for p, d in zip(paths, docs):
        name = f"{d.get('config', {}).get('model', 'model')}:{Path(p).parent.name}"
        names.append(name)
        row = {"model": name}
        for pc in d["per_class"]:
            row[f"f1_{pc['class']}"] = pc["f1"]
        for pc in d["per_class"]:
            row[f"acc_{pc['class']}"] = pc["accuracy"]
        row["overall_accuracy"] = d["overall_accuracy"]
        row["macro_auc"] = d["macro_auc"]
        table.append(row)
    ref = table[0]
    for row in table:
        row["delta_overall_accuracy"] = row["overall_accuracy"] - ref["overall_accuracy"]
        both = row["macro_auc"] is not None and ref["macro_auc"] is not None
        row["delta_macro_auc"] = row["macro_auc"] - ref["macro_auc"] if both else None
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    return render_comparison(names, table, out)

