"""Metrics and cross-validation summaries."""
import math
from dataclasses import dataclass

import numpy as np

from .imaging import CLASS_NAMES, MEDIUM, MILD, N_CLASSES, SEVERE

DAMAGE_CLASSES = (MILD, MEDIUM, SEVERE)
UNDEFINED = None
UNDEFINED_TEXT = "\u2014"  # em dash, the report marker for undefined cells


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray   # rows ground truth, columns prediction
    classes: tuple

    @property
    def total(self):
        return int(self.counts.sum())

    def normalized(self):
        """Row percentages; rows with no ground truth stay undefined (NaN)."""
        rows = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, 100.0 * self.counts / rows, np.nan)

    def to_json(self):
        return {"classes": [CLASS_NAMES[c] for c in self.classes], "counts": self.counts.tolist()}


def confusion_matrix(gt, pred, classes=tuple(range(N_CLASSES))):
    gt = np.asarray(gt, dtype=np.int64).ravel()
    pred = np.asarray(pred, dtype=np.int64).ravel()
    if gt.shape != pred.shape:
        raise ValueError(f"length mismatch: {gt.size} ground truth vs {pred.size} predictions")
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for g, p in zip(gt.tolist(), pred.tolist()):
        if g in index and p in index:
            counts[index[g], index[p]] += 1
    return ConfusionMatrix(counts, tuple(classes))


def precision_recall(cm):
    """Per-class ``(precision, recall)``; ``None`` where a denominator is zero."""
    out = []
    cols = cm.counts.sum(axis=0)
    rows = cm.counts.sum(axis=1)
    for i in range(len(cm.classes)):
        tp = cm.counts[i, i]
        p = float(tp / cols[i]) if cols[i] else UNDEFINED
        r = float(tp / rows[i]) if rows[i] else UNDEFINED
        out.append((p, r))
    return out


def _stack_pairs(gts, preds):
    if len(gts) != len(preds):
        raise ValueError("need one prediction per ground-truth map")
    for g, p in zip(gts, preds):
        if np.shape(g) != np.shape(p):
            raise ValueError(f"label map shape mismatch {np.shape(g)} vs {np.shape(p)}")
    if not gts:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return (
        np.concatenate([np.asarray(g).ravel() for g in gts]).astype(np.int64),
        np.concatenate([np.asarray(p).ravel() for p in preds]).astype(np.int64),
    )


def per_class_recall(gts, preds, classes=DAMAGE_CLASSES):
    g, p = _stack_pairs(gts, preds)
    out = {}
    for c in classes:
        sel = g == c
        out[c] = float(np.mean(p[sel] == c)) if sel.any() else UNDEFINED
    return out


def mean_pixel_accuracy(gts, preds, classes=DAMAGE_CLASSES):
    """Mean over damage classes of per-class pixel recall, in percent.

    Classes absent from the ground truth are left out of the mean.
    """
    rec = [r for r in per_class_recall(gts, preds, classes).values() if r is not UNDEFINED]
    return 100.0 * float(np.mean(rec)) if rec else UNDEFINED


def global_pixel_accuracy(gts, preds):
    g, p = _stack_pairs(gts, preds)
    return 100.0 * float(np.mean(g == p)) if g.size else UNDEFINED


def hypothesis_product(x, y):
    """Accuracy expected from chaining two stages, ``x * y / 100`` (percent)."""
    if not (0 <= x <= 100 and 0 <= y <= 100):
        raise ValueError("percentages must lie in [0, 100]")
    return x * y / 100.0


@dataclass(frozen=True)
class CvReport:
    values: tuple
    mean: float
    stderr: float

    @property
    def k(self):
        return len(self.values)

    def to_json(self):
        return {"folds": list(self.values), "mean": self.mean, "stderr": self.stderr}

    def __str__(self):
        return f"{self.mean:.2f}±{self.stderr:.2f}"


def cv_aggregate(per_fold):
    """Mean and standard error (sample std / sqrt(k)) of defined fold values."""
    vals = [float(v) for v in per_fold if v is not UNDEFINED and not math.isnan(v)]
    if len(vals) < 2:
        raise ValueError(f"need at least two folds, got {len(vals)}")
    arr = np.array(vals)
    return CvReport(tuple(vals), float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(len(arr))))


# --------------------------------------------------------------------------
# text rendering

def _fmt(v, spec=".2f"):
    return UNDEFINED_TEXT if v is UNDEFINED or (isinstance(v, float) and math.isnan(v)) else format(v, spec)


def render_confusion(cm, title="GT vs. Pred"):
    """Row-normalised percentages, e.g. ``Mild  84  13  3``."""
    names = [CLASS_NAMES[c].capitalize() for c in cm.classes]
    pct = cm.normalized()
    width = max(len(title), *(len(n) for n in names)) + 2
    lines = [title.ljust(width) + "".join(n.rjust(9) for n in names)]
    for name, row in zip(names, pct):
        lines.append(name.ljust(width) + "".join(_fmt(v, ".0f").rjust(9) for v in row))
    return "\n".join(lines)


def render_precision_recall(cm, pr=None):
    pr = precision_recall(cm) if pr is None else pr
    lines = [f"{'Class':<12}{'Precision':>11}{'Recall':>9}"]
    for c, (p, r) in zip(cm.classes, pr):
        lines.append(
            f"{CLASS_NAMES[c].capitalize():<12}"
            f"{_fmt(None if p is None else 100 * p):>11}{_fmt(None if r is None else 100 * r):>9}"
        )
    return "\n".join(lines)


def render_table(header, rows):
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) for i, h in enumerate(header)]
    out = ["  ".join(str(h).ljust(w) for h, w in zip(header, widths))]
    out += ["  ".join(str(c).ljust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(out)
