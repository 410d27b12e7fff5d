"""Training losses and evaluation metrics.

Losses are differentiable tensor expressions; metrics are plain-numpy
functions over binary masks.  The 95th-percentile boundary distance uses
exact integer squared distances so its output is bitwise reproducible by
an exhaustive pairwise recomputation.
"""
import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import tensor as T
from .errors import ContractError, DimensionError

_PROB_CLIP = 1e-7


def _check_same_shape(pred, target, op):
    if pred.shape != target.shape:
        raise DimensionError(f"{op}: shape mismatch {pred.shape} vs {target.shape}")


def bce_loss(pred, target):
    """Mean binary cross-entropy; probabilities are clamped away from 0/1."""
    _check_same_shape(pred, target, "bce_loss")
    p = T.clip(pred, _PROB_CLIP, 1.0 - _PROB_CLIP)
    ll = target * T.log(p) + (1.0 - target) * T.log(1.0 - p)
    return -ll.mean()


def dice_loss(pred, target, eps=1e-5):
    """One minus the smoothed overlap ratio over all elements."""
    _check_same_shape(pred, target, "dice_loss")
    inter = (pred * target).sum()
    denom = (pred * pred).sum() + (target * target).sum()
    return 1.0 - T.div(2.0 * inter + eps, denom + eps)


def combined_loss(pred, target):
    """Half the cross-entropy plus the full overlap loss."""
    return 0.5 * bce_loss(pred, target) + dice_loss(pred, target)


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def _as_binary(mask, op):
    arr = np.asarray(mask)
    if not np.isin(arr, (0, 1)).all():
        raise ContractError(f"{op}: mask values must be 0 or 1")
    return arr.astype(bool)


def confusion_counts(pred_mask, gt_mask):
    pred = _as_binary(pred_mask, "confusion_counts")
    gt = _as_binary(gt_mask, "confusion_counts")
    _check_same_shape(pred, gt, "confusion_counts")
    return ConfusionCounts(tp=int((pred & gt).sum()),
                           fp=int((pred & ~gt).sum()),
                           fn=int((~pred & gt).sum()),
                           tn=int((~pred & ~gt).sum()))


def _ratio(num, den, complementary_errors):
    """Zero denominators score 1.0 only when the errors the denominator
    cannot see are also absent, else 0.0."""
    if den == 0:
        return 1.0 if complementary_errors == 0 else 0.0
    return num / den


def confusion_metrics(pred_mask, gt_mask):
    c = confusion_counts(pred_mask, gt_mask)
    metrics = {
        "dice": _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, 0),
        "jaccard": _ratio(c.tp, c.tp + c.fp + c.fn, 0),
        "precision": _ratio(c.tp, c.tp + c.fp, c.fn),
        "recall": _ratio(c.tp, c.tp + c.fn, c.fp),
        "specificity": _ratio(c.tn, c.tn + c.fp, c.fn),
    }
    return c, metrics


def boundary_points(mask):
    """Mask pixels with a four-neighbor outside the mask or on the border,
    as integer (row, col) pairs in row-major order."""
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise DimensionError(f"boundary_points expects a 2-d mask, got {m.ndim} axes")
    padded = np.pad(m, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return np.argwhere(m & ~interior)


def _percentile_linear(sorted_vals):
    pos = 0.95 * (len(sorted_vals) - 1)
    lo = int(math.floor(pos))
    frac = pos - lo
    if lo + 1 < len(sorted_vals):
        return sorted_vals[lo] + frac * (sorted_vals[lo + 1] - sorted_vals[lo])
    return sorted_vals[lo]


def _directed_d95(src, dst):
    _, idx = cKDTree(dst).query(src)
    delta = src - dst[idx]
    sq = delta[:, 0] * delta[:, 0] + delta[:, 1] * delta[:, 1]
    return _percentile_linear(np.sort(np.sqrt(sq.astype(np.float64))))


def hd95(pred_mask, gt_mask, spacing=(1.0, 1.0)):
    """Symmetric 95th-percentile boundary distance in pixel units.

    Both masks empty scores 0; exactly one empty scores the image
    diagonal (the largest possible pixel-center distance) as a sentinel.
    """
    pred = _as_binary(pred_mask, "hd95")
    gt = _as_binary(gt_mask, "hd95")
    _check_same_shape(pred, gt, "hd95")
    sy, sx = float(spacing[0]), float(spacing[1])
    a = boundary_points(pred)
    b = boundary_points(gt)
    if len(a) == 0 and len(b) == 0:
        return 0.0
    if len(a) == 0 or len(b) == 0:
        h, w = pred.shape
        return math.hypot((h - 1) * sy, (w - 1) * sx)
    if (sy, sx) != (1.0, 1.0):
        a = a.astype(np.float64) * (sy, sx)
        b = b.astype(np.float64) * (sy, sx)
        da, _ = cKDTree(b).query(a)
        db, _ = cKDTree(a).query(b)
        return max(_percentile_linear(np.sort(da)), _percentile_linear(np.sort(db)))
    return max(_directed_d95(a, b), _directed_d95(b, a))


METRIC_COLUMNS = ("dice", "jaccard", "precision", "recall", "specificity", "hd95")


@dataclass
class SegReport:
    """Per-image metric rows plus a Table-style mean +/- std aggregate."""
    rows: list = field(default_factory=list)

    def add(self, image_id, metrics, note=""):
        missing = set(METRIC_COLUMNS) - set(metrics)
        if missing:
            raise ContractError(f"report row missing metrics: {sorted(missing)}")
        self.rows.append((str(image_id), {k: float(metrics[k]) for k in METRIC_COLUMNS},
                          note))

    def aggregate(self):
        if not self.rows:
            raise ContractError("cannot aggregate an empty report")
        agg = {}
        for name in METRIC_COLUMNS:
            vals = np.array([metrics[name] for _, metrics, _ in self.rows])
            std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            agg[name] = (float(vals.mean()), std)
        return agg

    def to_csv_text(self):
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(("image",) + METRIC_COLUMNS + ("note",))
        for image_id, metrics, note in self.rows:
            writer.writerow([image_id] + [f"{metrics[k]:.6f}" for k in METRIC_COLUMNS]
                            + [note])
        agg = self.aggregate()
        writer.writerow(["mean±std"]
                        + [f"{agg[k][0]:.4f}±{agg[k][1]:.4f}" for k in METRIC_COLUMNS]
                        + [""])
        return out.getvalue()

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv_text())
