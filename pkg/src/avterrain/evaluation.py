"""Clustering and labeling quality metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment


def contingency_table(pred, truth) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Counts (n_pred, n_true) plus the sorted distinct pred and true label values."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if len(pred) != len(truth):
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(truth)} truths")
    if len(pred) == 0:
        raise ValueError("empty labelings")
    p_vals, p_idx = np.unique(pred, return_inverse=True)
    t_vals, t_idx = np.unique(truth, return_inverse=True)
    table = np.zeros((len(p_vals), len(t_vals)), dtype=int)
    np.add.at(table, (p_idx, t_idx), 1)
    return table, p_vals, t_vals


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def nmi(pred, truth, average: str = "geometric") -> float:
    """Normalized mutual information in nats.

    ``average`` selects the normalizer: ``geometric`` (sqrt(H_p * H_t)) or
    ``arithmetic`` ((H_p + H_t) / 2). Two constant labelings score 1.
    """
    table, _, _ = contingency_table(pred, truth)
    n = table.sum()
    h_p = _entropy(table.sum(axis=1))
    h_t = _entropy(table.sum(axis=0))
    if h_p == 0.0 or h_t == 0.0:
        return 1.0 if h_p == h_t else 0.0
    pxy = table / n
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = pxy > 0
    mi = float(np.sum(pxy[nz] * np.log(pxy[nz] / (px @ py)[nz])))
    if average == "geometric":
        denom = np.sqrt(h_p * h_t)
    elif average == "arithmetic":
        denom = 0.5 * (h_p + h_t)
    else:
        raise ValueError(f"unknown average {average!r}")
    return float(min(1.0, max(0.0, mi / denom)))


def map_clusters_to_classes(table) -> dict[int, int]:
    """Injective row->column assignment maximizing the matched count.

    Rows left over when there are more clusters than classes stay unmapped.
    """
    table = np.asarray(table)
    if table.size == 0:
        raise ValueError("empty contingency table")
    rows, cols = linear_sum_assignment(-table)
    return {int(r): int(c) for r, c in zip(rows, cols)}


def apply_mapping(pred, truth) -> np.ndarray:
    """Relabel cluster ids as true class values via the optimal assignment; unmapped -> -1."""
    table, p_vals, t_vals = contingency_table(pred, truth)
    mapping = map_clusters_to_classes(table)
    lut = {p_vals[r]: t_vals[c] for r, c in mapping.items()}
    return np.array([lut.get(p, -1) for p in np.asarray(pred)])


@dataclass
class ClassMetrics:
    name: str
    precision: float
    recall: float
    f1: float
    support: int
    flagged: bool   # some ratio had a zero denominator and was reported as 0


@dataclass
class ClassificationReport:
    classes: list
    accuracy: float
    weighted_recall: float
    n_frames: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "weighted_recall": self.weighted_recall,
            "n_frames": self.n_frames,
            "classes": [vars(c) for c in self.classes],
        }

    def to_text(self) -> str:
        width = max([len("class")] + [len(c.name) for c in self.classes])
        lines = [f"{'class':<{width}}  precision  recall     f1  support"]
        for c in self.classes:
            mark = " *" if c.flagged else ""
            lines.append(
                f"{c.name:<{width}}  {c.precision:9.4f}  {c.recall:6.4f}  {c.f1:5.4f}  {c.support:7d}{mark}"
            )
        lines.append(f"{'accuracy':<{width}}  {self.accuracy:9.4f}  ({self.n_frames} frames)")
        if any(c.flagged for c in self.classes):
            lines.append("* zero denominator, reported as 0")
        return "\n".join(lines) + "\n"


def classification_report(pred, truth, class_names: Optional[Sequence[str]] = None) -> ClassificationReport:
    """Per-class precision/recall/F1 and accuracy for predictions already in class space.

    Class k is ``truth == k``; ``class_names[k]`` names it. Without names,
    the distinct truth values are used.
    """
    pred, truth = np.asarray(pred), np.asarray(truth)
    if len(pred) != len(truth):
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(truth)} truths")
    if len(pred) == 0:
        raise ValueError("empty labelings")
    if class_names is None:
        values = list(np.unique(truth))
        names = [str(v) for v in values]
    else:
        values = list(range(len(class_names)))
        names = list(class_names)
    classes = []
    for v, name in zip(values, names):
        tp = int(np.sum((pred == v) & (truth == v)))
        fp = int(np.sum((pred == v) & (truth != v)))
        fn = int(np.sum((pred != v) & (truth == v)))
        flagged = False
        if tp + fp:
            precision = tp / (tp + fp)
        else:
            precision, flagged = 0.0, True
        if tp + fn:
            recall = tp / (tp + fn)
        else:
            recall, flagged = 0.0, True
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        classes.append(ClassMetrics(name, precision, recall, f1, tp + fn, flagged))
    accuracy = float(np.mean(pred == truth))
    support = np.array([c.support for c in classes], dtype=float)
    weighted = float(np.sum(support * [c.recall for c in classes]) / support.sum()) if support.sum() else 0.0
    return ClassificationReport(classes, accuracy, weighted, len(pred))
