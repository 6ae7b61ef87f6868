"""Figure artifacts as deterministic SVG with CSV twins.

Every renderer writes ``<name>.svg`` and ``<name>.csv``; the CSV carries the
exact numbers the SVG was drawn from.  Output bytes depend only on the input
values (fixed float formatting, stable ordering, no timestamps).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .data import CLASS_NAMES, ContractError, TabularDataset

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2")


# ------------------------------------------------------------------------ KDE
@dataclass
class KdeCurve:
    feature: str
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    source: str = "original"
    n: int = 0

    def integral(self) -> float:
        return float(np.sum(np.diff(self.grid) * (self.density[1:] + self.density[:-1]) / 2.0))


def silverman_bandwidth(values: np.ndarray) -> float:
    """1.06 * sample std * n^(-1/5); 0.0 for a constant sample."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return 0.0
    return 1.06 * float(np.std(values, ddof=1)) * values.size ** (-0.2)


def spike_bandwidth(value: float) -> float:
    """Width used for a zero-variance sample: a narrow Gaussian at the repeated value."""
    return 1e-3 * max(1.0, abs(value))


def kde(values, grid=None, bandwidth: float | None = None, feature: str = "",
        source: str = "original", n_grid: int = 512) -> KdeCurve:
    """Gaussian kernel density estimate on ``grid`` (default: data range +/- 4 bandwidths)."""
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise ContractError("kde needs at least one sample")
    h = bandwidth if bandwidth is not None else silverman_bandwidth(x)
    if not h > 0:
        h = spike_bandwidth(float(x[0]))
    if grid is None:
        grid = np.linspace(x.min() - 4 * h, x.max() + 4 * h, n_grid)
    grid = np.asarray(grid, dtype=np.float64)
    dens = np.zeros_like(grid)
    norm = 1.0 / (x.size * h * math.sqrt(2 * math.pi))
    for s in range(0, x.size, 2048):
        z = (grid[:, None] - x[None, s:s + 2048]) / h
        dens += np.exp(-0.5 * z * z).sum(axis=1)
    return KdeCurve(feature, grid, dens * norm, float(h), source, int(x.size))


# --------------------------------------------------------------------- Sankey
@dataclass
class SankeyFlows:
    stages: list[str]
    nodes: list[list[tuple[str, int]]]          # per stage: (value, count), sorted by value
    edges: list[tuple[int, str, str, int]] = field(default_factory=list)  # (stage, src, dst, count)

    def conserved(self) -> bool:
        """Inflow equals outflow for every node of an interior stage."""
        for s in range(1, len(self.stages) - 1):
            inflow: dict[str, int] = {}
            outflow: dict[str, int] = {}
            for st, a, b, c in self.edges:
                if st == s - 1:
                    inflow[b] = inflow.get(b, 0) + c
                elif st == s:
                    outflow[a] = outflow.get(a, 0) + c
            if inflow != outflow:
                return False
        return True


def sankey_flows(ds: TabularDataset, stage_columns: Sequence[str]) -> SankeyFlows:
    if len(stage_columns) < 2:
        raise ContractError("a flow needs at least two stages")
    cats = {c.name for c in ds.schema.categorical} | {ds.schema.label.name}
    for name in stage_columns:
        if name not in cats:
            raise ContractError(f"stage column {name!r} is missing or not categorical")
    values = [ds.column_values(name) for name in stage_columns]
    nodes = []
    for vals in values:
        uniq, counts = np.unique(np.array(vals, dtype=object), return_counts=True)
        nodes.append([(str(u), int(c)) for u, c in zip(uniq, counts)])
    edges = []
    for s in range(len(stage_columns) - 1):
        tally: dict[tuple[str, str], int] = {}
        for a, b in zip(values[s], values[s + 1]):
            tally[(a, b)] = tally.get((a, b), 0) + 1
        edges.extend((s, a, b, c) for (a, b), c in sorted(tally.items()))
    return SankeyFlows(list(stage_columns), nodes, edges)


# ------------------------------------------------------------------ SVG core
def _f(x: float) -> str:
    return f"{x:.2f}"


class Svg:
    def __init__(self, width: int, height: int, title: str = ""):
        self.width = width
        self.height = height
        self.parts: list[str] = []
        if title:
            self.text(width / 2, 18, title, size=14, anchor="middle")

    def line(self, x1, y1, x2, y2, stroke="#000", width=1.0, dash: str | None = None):
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
                          f'stroke="{stroke}" stroke-width="{width}"{extra}/>')

    def rect(self, x, y, w, h, fill, stroke="none", opacity: float = 1.0):
        self.parts.append(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" '
                          f'fill="{fill}" stroke="{stroke}" fill-opacity="{opacity}"/>')

    def text(self, x, y, s, size=11, anchor="start", cls: str | None = None):
        c = f' class="{cls}"' if cls else ""
        self.parts.append(f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" '
                          f'text-anchor="{anchor}" font-family="sans-serif"{c}>{escape(str(s))}</text>')

    def polyline(self, pts, stroke, width=1.5, cls: str | None = None):
        c = f' class="{cls}"' if cls else ""
        coords = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
        self.parts.append(f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
                          f'stroke-width="{width}"{c}/>')

    def path(self, d: str, fill: str, opacity: float = 0.5):
        self.parts.append(f'<path d="{d}" fill="{fill}" fill-opacity="{opacity}" stroke="none"/>')

    def render(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
                f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">')
        return "\n".join([head, '<rect width="100%" height="100%" fill="#fff"/>'] + self.parts
                         + ["</svg>"]) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.render(), encoding="utf-8")


class Axes:
    """Linear data->pixel mapping for a plot panel."""

    def __init__(self, svg: Svg, x0, y0, w, h, xlim, ylim, xlabel="", ylabel=""):
        self.svg, self.x0, self.y0, self.w, self.h = svg, x0, y0, w, h
        self.xlim = xlim if xlim[1] > xlim[0] else (xlim[0] - 0.5, xlim[0] + 0.5)
        self.ylim = ylim if ylim[1] > ylim[0] else (ylim[0] - 0.5, ylim[0] + 0.5)
        svg.line(x0, y0 + h, x0 + w, y0 + h)
        svg.line(x0, y0, x0, y0 + h)
        for i in range(5):
            fx = self.xlim[0] + (self.xlim[1] - self.xlim[0]) * i / 4
            fy = self.ylim[0] + (self.ylim[1] - self.ylim[0]) * i / 4
            svg.text(self.px(fx), y0 + h + 14, f"{fx:.3g}", size=9, anchor="middle")
            svg.text(x0 - 4, self.py(fy) + 3, f"{fy:.3g}", size=9, anchor="end")
        if xlabel:
            svg.text(x0 + w / 2, y0 + h + 30, xlabel, anchor="middle")
        if ylabel:
            svg.text(x0 - 36, y0 - 8, ylabel)

    def px(self, x):
        return self.x0 + (x - self.xlim[0]) / (self.xlim[1] - self.xlim[0]) * self.w

    def py(self, y):
        return self.y0 + self.h - (y - self.ylim[0]) / (self.ylim[1] - self.ylim[0]) * self.h

    def series(self, xs, ys, color, cls=None):
        self.svg.polyline([(self.px(x), self.py(y)) for x, y in zip(xs, ys)], color, cls=cls)


def _legend(svg: Svg, x, y, labels: Sequence[str], colors: Sequence[str]):
    for i, (lab, col) in enumerate(zip(labels, colors)):
        svg.rect(x, y + 14 * i - 8, 10, 10, col)
        svg.text(x + 14, y + 14 * i + 1, lab, size=10)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def _stem(path: str | Path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix == ".svg" else p


# ------------------------------------------------------------------ renderers
def render_curves(records: list[dict], path: str | Path) -> Path:
    """Loss and accuracy per epoch (train vs validation), two panels."""
    stem = _stem(path)
    ep = [r["epoch"] for r in records]
    svg = Svg(760, 320, "Training curves")
    panels = [("loss", "train_loss", "val_loss"), ("accuracy", "train_acc", "val_acc")]
    for i, (label, a, b) in enumerate(panels):
        ya = [r[a] for r in records]
        yb = [r[b] for r in records]
        lo, hi = min(ya + yb), max(ya + yb)
        ax = Axes(svg, 60 + i * 370, 40, 300, 220, (min(ep), max(ep)), (lo, hi), "epoch", label)
        ax.series(ep, ya, PALETTE[0], cls="train")
        ax.series(ep, yb, PALETTE[1], cls="val")
    _legend(svg, 620, 50, ["train", "validation"], PALETTE[:2])
    svg.save(stem.with_suffix(".svg"))
    _write_csv(stem.with_suffix(".csv"), ["epoch", "train_loss", "val_loss", "train_acc", "val_acc"],
               [[r["epoch"], float(r["train_loss"]), float(r["val_loss"]), float(r["train_acc"]),
                 float(r["val_acc"])] for r in records])
    return stem.with_suffix(".svg")


def render_meta_curve(losses: Sequence[float], path: str | Path, window: int = 50) -> Path:
    """Meta-training loss per step with a trailing moving average."""
    stem = _stem(path)
    x = np.asarray(losses, dtype=np.float64)
    w = max(1, min(window, x.size))
    smooth = np.convolve(x, np.ones(w) / w, mode="valid")
    steps = np.arange(x.size)
    svg = Svg(560, 320, "Meta-training loss")
    ax = Axes(svg, 60, 40, 380, 220, (0, max(x.size - 1, 1)), (float(x.min()), float(x.max())),
              "step", "query cross-entropy")
    ax.series(steps, x, PALETTE[0], cls="loss")
    ax.series(steps[w - 1:], smooth, PALETTE[1], cls="smoothed")
    _legend(svg, 450, 50, ["per step", f"mean of {w}"], PALETTE[:2])
    svg.save(stem.with_suffix(".svg"))
    _write_csv(stem.with_suffix(".csv"), ["step", "loss"], [[i, float(v)] for i, v in enumerate(x)])
    return stem.with_suffix(".svg")


def render_confusion(cm, path: str | Path, labels: Sequence[str] = CLASS_NAMES) -> Path:
    stem = _stem(path)
    cm = np.asarray(cm, dtype=np.int64)
    n = cm.shape[0]
    cell = 90
    svg = Svg(160 + n * cell, 120 + n * cell, "Confusion matrix (rows = true)")
    top = max(int(cm.max()), 1)
    for i in range(n):
        svg.text(150, 80 + i * cell + cell / 2, labels[i], size=10, anchor="end")
        svg.text(160 + i * cell + cell / 2, 60, labels[i], size=10, anchor="middle")
        for j in range(n):
            shade = 255 - int(200 * cm[i, j] / top)
            svg.rect(160 + j * cell, 70 + i * cell, cell, cell, f"rgb({shade},{shade},255)", "#444")
            svg.text(160 + j * cell + cell / 2, 70 + i * cell + cell / 2 + 4, int(cm[i, j]),
                     size=14, anchor="middle", cls="cell")
    svg.save(stem.with_suffix(".svg"))
    _write_csv(stem.with_suffix(".csv"), ["true", "predicted", "count"],
               [[i, j, int(cm[i, j])] for i in range(n) for j in range(n)])
    return stem.with_suffix(".svg")


def render_roc(roc: list[dict], path: str | Path, labels: Sequence[str] = CLASS_NAMES) -> Path:
    stem = _stem(path)
    svg = Svg(520, 420, "One-vs-rest ROC")
    ax = Axes(svg, 60, 40, 320, 320, (0.0, 1.0), (0.0, 1.0), "false positive rate", "true positive rate")
    svg.line(ax.px(0), ax.py(0), ax.px(1), ax.py(1), "#999", dash="4,3")
    legend, colors, rows = [], [], []
    for entry in roc:
        c = entry["class"]
        if entry["auc"] is None:
            continue
        ax.series(entry["fpr"], entry["tpr"], PALETTE[c % len(PALETTE)], cls=f"roc-{c}")
        legend.append(f"{labels[c]} (AUC {entry['auc']:.4f})")
        colors.append(PALETTE[c % len(PALETTE)])
        rows.extend([c, float(f), float(t)] for f, t in zip(entry["fpr"], entry["tpr"]))
    _legend(svg, 390, 60, legend, colors)
    svg.save(stem.with_suffix(".svg"))
    _write_csv(stem.with_suffix(".csv"), ["class", "fpr", "tpr"], rows)
    return stem.with_suffix(".svg")


def render_kde(curves: list[KdeCurve], path: str | Path, title: str = "") -> Path:
    """Overlay of density curves; legend shows each curve's source tag and sample count."""
    stem = _stem(path)
    svg = Svg(620, 360, title or f"KDE: {curves[0].feature}")
    lo = min(float(c.grid.min()) for c in curves)
    hi = max(float(c.grid.max()) for c in curves)
    top = max(float(c.density.max()) for c in curves)
    ax = Axes(svg, 60, 40, 360, 260, (lo, hi), (0.0, top), curves[0].feature, "density")
    rows = []
    for i, c in enumerate(curves):
        ax.series(c.grid, c.density, PALETTE[i % len(PALETTE)], cls="kde")
        rows.extend([c.source, c.n, c.bandwidth, float(g), float(d)] for g, d in zip(c.grid, c.density))
    _legend(svg, 430, 60, [f"{c.source} (n={c.n})" for c in curves],
            [PALETTE[i % len(PALETTE)] for i in range(len(curves))])
    svg.save(stem.with_suffix(".svg"))
    _write_csv(stem.with_suffix(".csv"), ["source", "n", "bandwidth", "x", "density"], rows)
    return stem.with_suffix(".svg")


def render_sankey(flows: SankeyFlows, path: str | Path) -> Path:
    """Stacked node bars per stage joined by ribbons whose width is proportional to count."""
    stem = _stem(path)
    n_stages = len(flows.stages)
    height = 520
    svg = Svg(200 * n_stages + 40, height + 80, "Flow across stages")
    total = sum(c for _, c in flows.nodes[0]) or 1
    gap = 4.0
    pos: list[dict[str, list[float]]] = []
    for s, nodes in enumerate(flows.nodes):
        usable = height - gap * (len(nodes) - 1)
        y = 50.0
        x = 40 + 200 * s
        here = {}
        for value, count in nodes:
            h = usable * count / total
            svg.rect(x, y, 14, h, PALETTE[s % len(PALETTE)])
            svg.text(x + 18, y + h / 2 + 3, f"{value} ({count})", size=9)
            here[value] = [y, y, h]  # outgoing cursor, incoming cursor, height
            y += h + gap
        pos.append(here)
        svg.text(x, 44, flows.stages[s], size=10)
    for s, a, b, count in flows.edges:
        usable_a = height - gap * (len(flows.nodes[s]) - 1)
        w = usable_a * count / total
        src = pos[s][a]
        dst = pos[s + 1][b]
        x1, x2 = 54 + 200 * s, 40 + 200 * (s + 1)
        y1, y2 = src[0], dst[1]
        mid = (x1 + x2) / 2
        d = (f"M{_f(x1)},{_f(y1)} C{_f(mid)},{_f(y1)} {_f(mid)},{_f(y2)} {_f(x2)},{_f(y2)} "
             f"L{_f(x2)},{_f(y2 + w)} C{_f(mid)},{_f(y2 + w)} {_f(mid)},{_f(y1 + w)} "
             f"{_f(x1)},{_f(y1 + w)} Z")
        svg.path(d, PALETTE[s % len(PALETTE)], 0.35)
        src[0] += w
        dst[1] += w
    svg.save(stem.with_suffix(".svg"))
    _write_csv(stem.with_suffix(".csv"), ["stage", "source_column", "target_column", "source", "target", "count"],
               [[s, flows.stages[s], flows.stages[s + 1], a, b, c] for s, a, b, c in flows.edges])
    return stem.with_suffix(".svg")


def render_comparison(names: Sequence[str], table: list[dict], path: str | Path) -> Path:
    """Grouped bars of per-class F1 per model, plus the comparison CSV."""
    stem = _stem(path)
    svg = Svg(640, 380, "Model comparison: per-class F1")
    ax = Axes(svg, 60, 40, 420, 260, (0.0, 3.0), (0.0, 1.0), "class", "F1")
    nm = max(len(table), 1)
    bw = 0.8 / nm
    for m, row in enumerate(table):
        for c in range(3):
            v = row[f"f1_{c}"]
            x = ax.px(c + 0.1 + m * bw)
            svg.rect(x, ax.py(v), ax.px(bw) - ax.px(0), ax.py(0) - ax.py(v), PALETTE[m % len(PALETTE)])
    _legend(svg, 500, 60, list(names), [PALETTE[i % len(PALETTE)] for i in range(len(names))])
    svg.save(stem.with_suffix(".svg"))
    keys = list(table[0].keys()) if table else ["model"]
    _write_csv(stem.with_suffix(".csv"), keys, [[row[k] for k in keys] for row in table])
    return stem.with_suffix(".svg")
