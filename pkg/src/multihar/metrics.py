"""Count-based evaluation suite for multi-user predictions.

Predictions and labels are standardized to per-activity count vectors;
TP/FP/FN are elementwise min/max of those counts, macro-averaged over
activities with the zero-denominator-means-zero rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matching import NO_PERSON


def standardize(class_ids, n_act: int) -> np.ndarray:
    """Histogram a predicted id set into activity counts, dropping empties."""
    counts = np.zeros(n_act, dtype=np.int64)
    for c in class_ids:
        if c == NO_PERSON:
            continue
        if not 1 <= c <= n_act:
            raise ValueError(f"class id {c} outside 1..{n_act}")
        counts[c - 1] += 1
    return counts


def count_confusion(y: np.ndarray, y_hat: np.ndarray):
    """Per-activity (TP, FP, FN) count vectors for one sample."""
    y = np.asarray(y)
    y_hat = np.asarray(y_hat)
    tp = np.minimum(y, y_hat)
    fp = np.maximum(0, y_hat - y)
    fn = np.maximum(0, y - y_hat)
    return tp, fp, fn


@dataclass
class MetricReport:
    precision_per_activity: np.ndarray
    recall_per_activity: np.ndarray
    f1_per_activity: np.ndarray
    precision: float
    recall: float
    f1: float
    pps: float
    oce: float
    n_samples: int
    stderr: dict = field(default_factory=dict)

    def lines(self) -> list[str]:
        """Line-delimited structured record: name value [stderr]."""
        out = []
        for name in ("precision", "recall", "f1", "pps", "oce"):
            val = getattr(self, name)
            se = self.stderr.get(name)
            out.append(
                f"{name} {val:.6f}" + (f" {se:.6f}" if se is not None else "")
            )
        return out

    def table(self) -> str:
        rows = [f"{'metric':<12}{'value':>10}"]
        for name in ("precision", "recall", "f1", "pps", "oce"):
            rows.append(f"{name:<12}{getattr(self, name):>10.4f}")
        rows.append(f"{'samples':<12}{self.n_samples:>10d}")
        return "\n".join(rows)


def evaluate_counts(
    y_true: list[np.ndarray],
    y_pred: list[np.ndarray],
    skip_empty_classes: bool = False,
) -> MetricReport:
    """Full metric suite over paired count vectors."""
    if len(y_true) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    if len(y_true) != len(y_pred):
        raise ValueError(f"{len(y_true)} labels vs {len(y_pred)} predictions")
    n_act = len(y_true[0])
    tps = np.zeros(n_act)
    fps = np.zeros(n_act)
    fns = np.zeros(n_act)
    exact = 0
    occ_err = 0.0
    for y, yh in zip(y_true, y_pred):
        tp, fp, fn = count_confusion(y, yh)
        tps += tp
        fps += fp
        fns += fn
        if np.array_equal(y, yh):
            exact += 1
        occ_err += abs(int(y.sum()) - int(yh.sum()))
    n = len(y_true)
    tps /= n
    fps /= n
    fns /= n

    def safe(num, den):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)

    prec = safe(tps, tps + fps)
    rec = safe(tps, tps + fns)
    f1 = safe(2 * prec * rec, prec + rec)
    if skip_empty_classes:
        active = (tps + fps + fns) > 0
        if not active.any():
            active = np.ones(n_act, dtype=bool)
        macro = lambda x: float(x[active].mean())
    else:
        macro = lambda x: float(x.mean())
    return MetricReport(
        precision_per_activity=prec,
        recall_per_activity=rec,
        f1_per_activity=f1,
        precision=macro(prec),
        recall=macro(rec),
        f1=macro(f1),
        pps=exact / n,
        oce=occ_err / n,
        n_samples=n,
    )


def aggregate_reports(reports: list[MetricReport]) -> MetricReport:
    """Mean and standard error across per-seed reports."""
    if not reports:
        raise ValueError("no reports to aggregate")
    names = ("precision", "recall", "f1", "pps", "oce")
    vals = {n: np.array([getattr(r, n) for r in reports]) for n in names}
    k = len(reports)
    stderr = {
        n: float(v.std(ddof=1) / np.sqrt(k)) if k > 1 else 0.0
        for n, v in vals.items()
    }
    base = reports[0]
    return MetricReport(
        precision_per_activity=np.mean(
            [r.precision_per_activity for r in reports], axis=0
        ),
        recall_per_activity=np.mean([r.recall_per_activity for r in reports], axis=0),
        f1_per_activity=np.mean([r.f1_per_activity for r in reports], axis=0),
        precision=float(vals["precision"].mean()),
        recall=float(vals["recall"].mean()),
        f1=float(vals["f1"].mean()),
        pps=float(vals["pps"].mean()),
        oce=float(vals["oce"].mean()),
        n_samples=base.n_samples,
        stderr=stderr,
    )
