"""Confusion-matrix accumulation, OA/AA/kappa, and full-image evaluation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .tensor import Tape


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [C, C] int64, rows = true class, cols = predicted

    @property
    def C(self) -> int:
        return self.counts.shape[0]

    @property
    def n(self) -> int:
        return int(self.counts.sum())


@dataclass
class MetricsReport:
    oa: float
    aa: float
    kappa: float
    per_class_recall: list


def accumulate(pred: np.ndarray, truth: np.ndarray, rows, cols, C: int) -> ConfusionMatrix:
    """Count (truth, pred) pairs over the masked pixels."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    t = np.asarray(truth)[rows, cols].astype(np.int64)
    p = np.asarray(pred)[rows, cols].astype(np.int64)
    if rows.size and np.any(t == 0):
        raise ValueError("masked pixel has truth label 0 (unlabeled)")
    if rows.size and np.any(p == 0):
        raise ValueError("masked pixel has prediction 0; predictions must be 1..C")
    counts = np.zeros((C, C), dtype=np.int64)
    np.add.at(counts, (t - 1, p - 1), 1)
    return ConfusionMatrix(counts)


def oa(cm: ConfusionMatrix) -> float:
    if cm.n == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.n


def aa(cm: ConfusionMatrix, strict: bool = False) -> float:
    if cm.n == 0:
        raise ValueError("empty confusion matrix")
    row_sums = cm.counts.sum(axis=1)
    present = row_sums > 0
    if not np.all(present):
        missing = np.nonzero(~present)[0] + 1
        if strict:
            raise ValueError(f"classes {missing.tolist()} have no true pixels")
        warnings.warn(f"classes {missing.tolist()} absent from truth; "
                      "excluded from AA", stacklevel=2)
    recalls = np.diag(cm.counts)[present] / row_sums[present]
    return float(recalls.mean())


def kappa(cm: ConfusionMatrix) -> float:
    if cm.n == 0:
        raise ValueError("empty confusion matrix")
    n = float(cm.n)
    po = float(np.trace(cm.counts)) / n
    pe = float((cm.counts.sum(axis=1) * cm.counts.sum(axis=0)).sum()) / (n * n)
    if pe == 1.0:
        raise ValueError("kappa undefined: expected agreement is 1")
    return (po - pe) / (1.0 - pe)


def per_class_recall(cm: ConfusionMatrix) -> list:
    row_sums = cm.counts.sum(axis=1)
    out = []
    for i in range(cm.C):
        out.append(float(np.diag(cm.counts)[i] / row_sums[i]) if row_sums[i] else float("nan"))
    return out


def report(cm: ConfusionMatrix) -> MetricsReport:
    return MetricsReport(oa=oa(cm), aa=aa(cm), kappa=kappa(cm),
                         per_class_recall=per_class_recall(cm))


def report_text(rep: MetricsReport) -> str:
    lines = [
        f"oa = {rep.oa!r}",
        f"aa = {rep.aa!r}",
        f"kappa = {rep.kappa!r}",
        "per_class_recall = " + ",".join(repr(r) for r in rep.per_class_recall),
    ]
    return "\n".join(lines) + "\n"


def predict(model, cube_values: np.ndarray, domain_index=None) -> np.ndarray:
    """Eval-mode full-image forward; per-pixel argmax (ties -> lowest class)."""
    tape = Tape()
    if domain_index is None:
        logits = model.forward(tape, cube_values, mode="eval")
    else:
        logits = model.forward_domain(tape, domain_index, cube_values, mode="eval")
    return logits.data.argmax(axis=0).astype(np.int64) + 1


def evaluate(model, cube_values: np.ndarray, truth: np.ndarray, rows, cols,
             domain_index=None) -> MetricsReport:
    """Metrics of a model over the given pixel set of one image."""
    pred = predict(model, cube_values, domain_index=domain_index)
    C = model.classes if hasattr(model, "classes") else model.domains[domain_index][1]
    cm = accumulate(pred, truth, rows, cols, C)
    return report(cm)
