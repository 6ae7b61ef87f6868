"""The ten acceptance criteria, one test each.

Every test appends a ``CRITERION n: PASS|FAIL ...`` line that the terminal
summary prints in order.  Run directly with ``python tests/test_acceptance.py``.
"""

import json
import shutil
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from acceptance_log import RESULTS  # noqa: E402
from oracles import (  # noqa: E402
    brute_force_smoteenn,
    direct_decay_sum,
    hand_metrics,
    mann_whitney_auc,
    normal_pdf,
    numeric_grad,
    rel_error,
)
from tabsae import data as D  # noqa: E402
from tabsae import pipeline as P  # noqa: E402
from tabsae.cli import main as cli  # noqa: E402
from tabsae.config import RunConfig  # noqa: E402
from tabsae.metrics import evaluate, per_class_metrics, confusion_matrix, roc_curve, trapezoid_auc  # noqa: E402
from tabsae.models import (  # noqa: E402
    MambaAttentionClassifier,
    MambaConfig,
    TabTransformerClassifier,
    TabTransformerConfig,
)
from tabsae.models.mamba import MambaBlock, kernel_eval  # noqa: E402
from tabsae.models.pfn import (  # noqa: E402
    PFNConfig,
    PFNModel,
    TaskPrior,
    pfn_predict,
    sample_task,
    standardize_task,
)
from tabsae.reporting import kde, sankey_flows  # noqa: E402
from tabsae.resampling import ResampleConfig, smoteenn  # noqa: E402
from tabsae.tensor import (  # noqa: E402
    Tensor,
    cross_entropy,
    exp_decay_scan,
    layer_norm,
    matmul,
    no_grad,
    parameters_checksum,
    softmax,
)
from tabsae.train import Adam, TrainConfig, train  # noqa: E402


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS.append(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def max_model_grad_error(model, loss_fn) -> float:
    model.zero_grad()
    loss_fn().backward()

    def value():
        with no_grad():
            return loss_fn().item()

    worst = 0.0
    for _, p in model.named_parameters():
        num = numeric_grad(value, p.data)
        analytic = np.zeros_like(num) if p.grad is None else p.grad
        worst = max(worst, rel_error(analytic, num))
    return worst


def max_primitive_grad_error(seed: int) -> float:
    rng = np.random.default_rng(seed)
    cases = [
        (lambda a, b: (matmul(a, b).tanh() * 1.5).sum(), [(3, 4), (4, 2)]),
        (lambda a: (softmax(a, axis=1) * Tensor(np.arange(15.0).reshape(3, 5))).sum(), [(3, 5)]),
        (lambda a, g, b: (layer_norm(a, g, b) * layer_norm(a, g, b)).sum(), [(3, 6), (6,), (6,)]),
        (lambda a: (a.exp() * a.sigmoid() + a.gelu() * a.softplus()).sum(), [(4, 3)]),
        (lambda k, amp, dec: exp_decay_scan(k, amp, dec.softplus()).tanh().sum(), [(2, 5, 3), (3,), (3,)]),
    ]
    worst = 0.0
    for fn, shapes in cases:
        arrays = [rng.uniform(-1.5, 1.5, s) for s in shapes]
        ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        fn(*ts).backward()
        for i, t in enumerate(ts):
            def value():
                with no_grad():
                    return fn(*[Tensor(a) for a in arrays]).item()
            worst = max(worst, rel_error(t.grad, numeric_grad(value, arrays[i])))
    return worst


# ------------------------------------------------------------------ 1
def test_criterion_1_gradient_fidelity():
    t0 = time.perf_counter()
    model_err, prim_err = 0.0, 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        cat = np.stack([rng.integers(0, v, 4) for v in (3, 4)], axis=1)
        num, y = rng.normal(size=(4, 2)), rng.integers(0, 3, 4)
        mamba = MambaAttentionClassifier(MambaConfig(vocab_sizes=[3, 4], n_num=2, d_model=8, token_dim=4, heads=2,
                                                     dropout=0.0, depth=2, zero_head=False), seed=seed)
        for blk in mamba.blocks:
            blk.A.data[:] = rng.normal(size=blk.A.shape)
        tt = TabTransformerClassifier(TabTransformerConfig(vocab_sizes=[3, 4], n_num=2, embed_dim=8, heads=2,
                                                           layers=2, ff_dim=16, dropout=0.0, mlp_hidden=[8]),
                                      seed=seed)
        pfn = PFNModel(PFNConfig(max_features=3, max_support=16, d_model=8, heads=2, layers=2, ff_dim=16),
                       seed=seed)
        xs, xq = rng.normal(size=(1, 6, 3)), rng.normal(size=(1, 3, 3))
        ys, yq = rng.integers(0, 3, (1, 6)), rng.integers(0, 3, 3)
        model_err = max(model_err,
                        max_model_grad_error(mamba, lambda: cross_entropy(mamba(cat, num), y)),
                        max_model_grad_error(tt, lambda: cross_entropy(tt(cat, num), y)),
                        max_model_grad_error(pfn, lambda: cross_entropy(pfn(xs, ys, xq).reshape(3, 3), yq)))
        prim_err = max(prim_err, max_primitive_grad_error(seed))
    secs = time.perf_counter() - t0
    ok = model_err <= 1e-3 and prim_err <= 1e-4 and secs < 60
    record(1, ok, f"model rel err {model_err:.2e} (<=1e-3), primitive rel err {prim_err:.2e} (<=1e-4), "
                  f"5 seeds x 3 families, {secs:.1f}s (<60s)")


# ------------------------------------------------------------------ 2
def test_criterion_2_kernel_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for T in range(1, 65):
        k = rng.normal(size=(2, T, 6))
        amp, dec = rng.normal(size=6), rng.uniform(1e-3, 3, 6)
        fast = exp_decay_scan(Tensor(k), Tensor(amp), Tensor(dec)).data
        worst = max(worst, float(np.max(np.abs(fast - direct_decay_sum(k, amp, dec)))))
    A, B = rng.uniform(0.1, 3, 32), rng.uniform(1e-3, 3, 32)
    kappa = np.stack([kernel_eval(A, B, t) for t in range(64)])
    monotone = bool(np.all(np.diff(kappa, axis=0) < 0))
    block = MambaBlock(4, 8, rng, 0.0)
    block.A.data[:] = 0.0
    x = rng.normal(size=(3, 10, 4))
    passthrough = bool(np.array_equal(block(Tensor(x)).data, x))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-10 and monotone and passthrough and secs < 5
    record(2, ok, f"max |scan - direct| {worst:.1e} over T=1..64 (<=1e-10), kappa decreasing={monotone}, "
                  f"A=0 passthrough exact={passthrough}, {secs:.2f}s (<5s)")


# ------------------------------------------------------------------ 3
def test_criterion_3_causality():
    rng = np.random.default_rng(1)
    model = MambaAttentionClassifier(MambaConfig(vocab_sizes=[3], n_num=5, d_model=16, token_dim=8, heads=2,
                                                 dropout=0.0, depth=2, zero_head=False), seed=1)
    for blk in model.blocks:
        blk.A.data[:] = rng.normal(size=blk.A.shape)
    violations = 0
    for _ in range(100):
        T = int(rng.integers(2, 12))
        x = rng.normal(size=(1, T, 8))
        tp = int(rng.integers(1, T))
        x2 = x.copy()
        x2[0, tp] += rng.normal(size=8)
        a, b = Tensor(x), Tensor(x2)
        with no_grad():
            for blk in model.blocks:
                a, b = blk(a), blk(b)
        violations += int(not np.array_equal(a.data[0, :tp], b.data[0, :tp]))
    record(3, violations == 0, f"{violations} of 100 random perturbations changed an earlier output (exact)")


# ------------------------------------------------------------------ 4
def test_criterion_4_smoteenn_oracle():
    t0 = time.perf_counter()
    mismatches, bound_violations, fixtures, synth = 0, 0, 0, 0
    for seed, n, w in [(0, 200, (0.6, 0.3, 0.1)), (1, 350, (0.7, 0.2, 0.1)), (2, 500, (0.5, 0.35, 0.15))]:
        rng = np.random.default_rng(seed)
        y = rng.choice(3, size=n, p=w)
        X = rng.normal(size=(n, 5)) + y[:, None] * 0.7
        Xo, yo, flags, _ = smoteenn(X, y, ResampleConfig(seed=seed))
        Xb, yb, fb, parents = brute_force_smoteenn(X, y, seed=seed)
        fixtures += 1
        same = Xo.shape == Xb.shape and np.array_equal(Xo, Xb) and np.array_equal(yo, yb) and np.array_equal(flags, fb)
        mismatches += int(not same)
        for row, (a, b) in zip(Xo[flags], parents):
            lo, hi = np.minimum(a, b), np.maximum(a, b)
            bound_violations += int(np.any(row < lo) or np.any(row > hi))
            synth += 1
    secs = time.perf_counter() - t0
    ok = mismatches == 0 and bound_violations == 0 and secs < 30
    record(4, ok, f"{fixtures - mismatches}/{fixtures} fixtures identical row-for-row, {bound_violations} of "
                  f"{synth} synthetic rows outside parent bounds, {secs:.1f}s (<30s)")


# ------------------------------------------------------------------ 5
def test_criterion_5_metrics_oracle():
    rng = np.random.default_rng(5)
    fixtures = [([0, 0, 1, 1, 2, 2], [0, 0, 1, 1, 2, 2])]
    for _ in range(11):
        n = int(rng.integers(3, 60))
        fixtures.append((rng.integers(0, 3, n).tolist(), rng.integers(0, 3, n).tolist()))
    bad = 0
    for yt, yp in fixtures:
        cm = confusion_matrix(yt, yp)
        cm_o, rows = hand_metrics(yt, yp)
        got = [(r["precision"], r["recall"], r["f1"]) for r in per_class_metrics(cm)]
        bad += int(cm.tolist() != cm_o or not np.allclose(got, rows, atol=1e-15, rtol=0))
    two = per_class_metrics(np.array([[2, 1], [0, 1]]))
    bad += int(not np.allclose([two[0]["f1"], two[1]["f1"]], [0.8, 2 / 3], atol=1e-15))
    auc_err = 0.0
    for _ in range(20):
        n = int(rng.integers(2, 301))
        s = np.round(rng.random(n), 2)
        pos = rng.random(n) < 0.5
        pos[0], pos[-1] = True, False
        fpr, tpr, _ = roc_curve(s, pos)
        auc_err = max(auc_err, abs(trapezoid_auc(fpr, tpr) - mann_whitney_auc(s, pos)))
    probs = rng.dirichlet(np.ones(3), size=200)
    rep = evaluate(probs, rng.integers(0, 3, 200))
    macro_err = abs(rep.macro_auc - np.mean([r["auc"] for r in rep.roc]))
    ok = bad == 0 and auc_err <= 1e-12 and macro_err <= 1e-12
    record(5, ok, f"{len(fixtures) + 1 - bad}/{len(fixtures) + 1} matrices match hand oracle, "
                  f"max |trapezoid - Mann-Whitney| {auc_err:.1e} (<=1e-12), macro err {macro_err:.1e}")


# ------------------------------------------------------------------ 6
def test_criterion_6_scheduler_and_optimizer():
    ds = D.synthesize(D.separable_spec(n_rows=120, n_cat=2, n_cont=1), 0)
    enc, _ = D.encode(ds)
    split = D.stratified_split(enc.y, seed=0)
    model = MambaAttentionClassifier(MambaConfig(vocab_sizes=enc.vocab_sizes, n_num=enc.num.shape[1], d_model=8,
                                                 token_dim=4, heads=2, dropout=0.0), seed=0)
    _, log = train(model, enc.subset(split.train), enc.subset(split.val), TrainConfig(max_epochs=50, patience=50))
    lrs = log.column("lr")
    lr_ok = len(lrs) == 50 and lrs == [1e-3 * 0.5 ** (e // 10) for e in range(50)]
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([("w", p)])
    mags = []
    for _ in range(100):
        p.grad = 2 * p.data
        opt.step()
        mags.append(abs(p.data[0]))
    mono = all(b < a for a, b in zip(mags[5:], mags[6:]))
    record(6, lr_ok and mono, f"logged lr equals 1e-3*0.5^floor(e/10) for {len(lrs)} epochs={lr_ok}, "
                              f"|w| strictly decreasing after step 5={mono}")


# ------------------------------------------------------------------ 7
def test_criterion_7_end_to_end_gates(tmp_path):
    lines, ok = [], True
    for model, floor in (("mamba_attention", 0.90), ("tab_transformer", 0.85)):
        cfg = RunConfig(model=model, output=str(tmp_path), seed=42).validate()
        t0 = time.perf_counter()
        P.run_pipeline(cfg)
        secs = time.perf_counter() - t0
        doc = json.loads((cfg.run_dir / "metrics.json").read_text())
        epochs = len((cfg.run_dir / "training_log.csv").read_text().splitlines()) - 1
        acc, auc = doc["overall_accuracy"], doc["macro_auc"]
        this = acc >= floor and secs < 300 and epochs <= 50
        if model == "mamba_attention":
            this = this and auc >= 0.95
            lines.append(f"{model} acc {acc:.4f} (>={floor}) macro-AUC {auc:.4f} (>=0.95) {epochs} epochs {secs:.0f}s")
        else:
            lines.append(f"{model} acc {acc:.4f} (>={floor}) {epochs} epochs {secs:.0f}s")
        ok = ok and this
    record(7, ok, "; ".join(lines) + " (each <300s, <=50 epochs)")


# ------------------------------------------------------------------ 8
def test_criterion_8_in_context_learning(trained_pfn):
    model, _, meta_secs = trained_pfn
    prior = TaskPrior()
    rng = np.random.default_rng(2024)
    hits = majority_hits = total = 0
    for _ in range(300):
        t = sample_task(prior, rng=rng, teacher="linear")
        p = pfn_predict(model, t.x_support, t.y_support, t.x_query)
        hits += int(np.sum(np.argmax(p, axis=1) == t.y_query))
        majority = np.argmax(np.bincount(t.y_support, minlength=3))
        majority_hits += int(np.sum(t.y_query == majority))
        total += len(t.y_query)
    acc, majority_rate = hits / total, majority_hits / total
    chance = max(1 / 3, majority_rate)
    tasks = len(model.curve) * 8
    before = parameters_checksum(model.parameters())
    t = sample_task(prior, seed=1)
    pfn_predict(model, t.x_support, t.y_support, t.x_query)
    checksum_ok = parameters_checksum(model.parameters()) == before
    xs, xq = standardize_task(t.x_support, t.x_query, model.config.max_features)
    xq_t = Tensor(xq[None], requires_grad=True)
    model(xs[None], t.y_support[None], xq_t)[0, 0].sum().backward()
    leak = int(np.count_nonzero(xq_t.grad[0, 1:]))
    model.zero_grad()
    ok = acc >= chance + 0.20 and tasks <= 20_000 and checksum_ok and leak == 0
    record(8, ok, f"held-out linear-task accuracy {acc:.4f} vs chance {chance:.4f} (+{acc - chance:.3f}, need +0.20) "
                  f"after {tasks} tasks ({meta_secs:.0f}s), checksum unchanged={checksum_ok}, "
                  f"leaking gradient entries={leak}")


# ------------------------------------------------------------------ 9
TINY = "synthetic_rows = 500\nd_model = 16\ntoken_dim = 8\nheads = 2\nmax_epochs = 2\npfn_steps = 10\npfn_tasks_per_step = 2\n"


def _outputs(root: Path) -> dict:
    keep = (".svg", ".npz", ".csv", ".json")
    # training_log.csv carries a wall-clock column and is the one exempt file
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.suffix in keep and p.name != "training_log.csv"}


def test_criterion_9_determinism(tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY, encoding="utf-8")
    out = tmp_path / "o"
    base = ["--config", str(cfg), "--output", str(out)]
    commands = [["prepare", *base], ["resample", *base], ["train", *base], ["evaluate", *base], ["report", *base],
                ["run", *base, "--model", "tab_transformer"], ["run", *base, "--model", "pfn"],
                ["compare", str(out / "report/mamba_attention-seed42/metrics.json"),
                 str(out / "report/tab_transformer-seed42/metrics.json"), "--out", str(out / "cmp.svg")],
                ["pfn-meta-train", "--out", str(out / "pfn.npz"), "--steps", "5", "--tasks-per-step", "2"],
                ["pfn-predict", "--checkpoint", str(out / "pfn.npz"),
                 "--support", str(out / "report/pfn-seed42/artifacts/resampled.csv"),
                 "--query", str(out / "report/pfn-seed42/artifacts/encoded.csv"), "--out", str(out / "pred.csv")]]

    def execute():
        if out.exists():
            shutil.rmtree(out)
        snaps = []
        for argv in commands:
            code = cli(argv)
            snaps.append((argv[0], code, _outputs(out)))
        return snaps

    first, second = execute(), execute()
    differing = [a[0] for a, b in zip(first, second) if a != b]
    failed = [a[0] for a in first if a[1] != 0]
    n_files = len(first[-1][2])
    ok = not differing and not failed
    record(9, ok, f"{len(commands)} subcommands run twice, {n_files} metrics/SVG/CSV/checkpoint files compared, "
                  f"differing after: {differing or 'none'}, non-zero exits: {failed or 'none'}")


# ------------------------------------------------------------------ 10
def test_criterion_10_kde_and_sankey():
    x = np.random.default_rng(10).normal(size=10_000)
    grid = np.linspace(-3, 3, 1201)
    sup = float(np.max(np.abs(kde(x, grid=grid).density - normal_pdf(grid))))
    integrals = [kde(x).integral(), kde(x[:50]).integral(), kde([1.5] * 30).integral()]
    int_ok = all(abs(v - 1) <= 0.02 for v in integrals)
    fixtures = [D.synthesize(D.crash_like_spec(600), s) for s in range(3)]
    fixtures += [D.synthesize(D.separable_spec(n_rows=300, n_cat=4, n_cont=1), s) for s in range(3)]
    conserved = 0
    for ds in fixtures:
        cols = [c.name for c in ds.schema.categorical[:3]] + [ds.schema.label.name]
        f = sankey_flows(ds, cols)
        conserved += int(f.conserved() and all(sum(c for _, c in nodes) == ds.n for nodes in f.nodes))
    ok = sup <= 0.05 and int_ok and conserved == len(fixtures)
    record(10, ok, f"KDE sup-norm error on [-3,3] {sup:.4f} (<=0.05), integrals "
                   f"{', '.join(f'{v:.4f}' for v in integrals)} (within 2%), Sankey conserved on "
                   f"{conserved}/{len(fixtures)} fixtures")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
