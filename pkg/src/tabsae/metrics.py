"""Confusion matrices, per-class rates and one-vs-rest ROC analysis."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import CLASS_NAMES

log = logging.getLogger(__name__)


class UndefinedAUCError(ValueError):
    pass


def confusion_matrix(y_true, y_pred, n_classes: int = 3) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def per_class_metrics(cm: np.ndarray) -> list[dict]:
    """Precision, recall, F1 and one-vs-rest accuracy (= recall) per class.

    Zero denominators yield 0 with ``*_defined`` set to False.
    """
    cm = np.asarray(cm)
    out = []
    for c in range(cm.shape[0]):
        tp = int(cm[c, c])
        fp = int(cm[:, c].sum()) - tp
        fn = int(cm[c, :].sum()) - tp
        p_def = tp + fp > 0
        r_def = tp + fn > 0
        precision = tp / (tp + fp) if p_def else 0.0
        recall = tp / (tp + fn) if r_def else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        out.append({
            "class": c,
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "accuracy": recall,
            "support": tp + fn,
            "precision_defined": p_def,
            "recall_defined": r_def,
        })
    return out


def roc_curve(scores, positive) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """ROC points swept over every distinct score, highest first.

    Returns ``(fpr, tpr, thresholds)``; the curve starts at (0, 0) (threshold +inf)
    and ends at (1, 1).
    """
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positive, dtype=bool)
    P = int(pos.sum())
    N = len(pos) - P
    if P == 0 or N == 0:
        raise UndefinedAUCError("ROC needs both positive and negative samples")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    p_sorted = pos[order]
    tp = np.cumsum(p_sorted)
    fp = np.cumsum(~p_sorted)
    last = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), len(s) - 1]
    tpr = np.r_[0.0, tp[last] / P]
    fpr = np.r_[0.0, fp[last] / N]
    thr = np.r_[np.inf, s_sorted[last]]
    return fpr, tpr, thr


def trapezoid_auc(fpr, tpr) -> float:
    fpr = np.asarray(fpr)
    tpr = np.asarray(tpr)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def roc_auc(probs, labels, c: int):
    """One-vs-rest ROC for class ``c`` from per-sample probability vectors."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    fpr, tpr, thr = roc_curve(probs[:, c], labels == c)
    return (fpr, tpr, thr), trapezoid_auc(fpr, tpr)


@dataclass
class EvaluationReport:
    confusion: np.ndarray
    per_class: list[dict]
    overall_accuracy: float
    roc: list[dict]
    macro_auc: float | None
    config: dict = field(default_factory=dict)
    seed: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "per_class": self.per_class,
            "overall_accuracy": self.overall_accuracy,
            "roc": self.roc,
            "macro_auc": self.macro_auc,
            "config": self.config,
            "seed": self.seed,
            "warnings": self.warnings,
            "class_names": list(CLASS_NAMES),
            "notes": {
                "accuracy": "per-class accuracy is one-vs-rest recall",
                "zero_denominator": "precision/recall reported as 0 when undefined; see *_defined",
                "ties": "argmax ties resolve to the lowest class index",
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        return cls(np.asarray(d["confusion"], dtype=np.int64), d["per_class"], d["overall_accuracy"],
                   d["roc"], d["macro_auc"], d.get("config", {}), d.get("seed", 0), d.get("warnings", []))


def evaluate(probs, y_true, config: dict | None = None, seed: int = 0,
             n_classes: int = 3) -> EvaluationReport:
    """Full metric suite from class-probability vectors and true labels."""
    probs = np.asarray(probs, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.int64)
    if len(y_true) == 0:
        raise ValueError("evaluation set is empty")
    pred = np.argmax(probs, axis=1)
    cm = confusion_matrix(y_true, pred, n_classes)
    roc, aucs, warnings = [], [], []
    for c in range(n_classes):
        try:
            (fpr, tpr, _), auc = roc_auc(probs, y_true, c)
        except UndefinedAUCError:
            msg = f"class {c}: AUC undefined (single-class one-vs-rest view); excluded from macro-AUC"
            log.warning(msg)
            warnings.append(msg)
            roc.append({"class": c, "fpr": [], "tpr": [], "auc": None})
            continue
        roc.append({"class": c, "fpr": fpr.tolist(), "tpr": tpr.tolist(), "auc": auc})
        aucs.append(auc)
    macro = float(np.mean(aucs)) if aucs else None
    return EvaluationReport(cm, per_class_metrics(cm), float(np.trace(cm) / cm.sum()), roc, macro,
                            config or {}, seed, warnings)
