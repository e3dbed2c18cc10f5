"""Segmentation metrics on binary masks.

Overlap metrics (Dice, IoU), pixel-rate metrics (accuracy, precision,
sensitivity, specificity) computed from confusion counts, and the 95th
percentile symmetric boundary distance (HD95).

Degenerate-case conventions:
  * both masks empty -> overlap metrics are 1.0, HD95 is 0.0
  * zero denominator in a rate -> 1.0, flagged as undefined
  * exactly one mask empty -> HD95 falls back to the image diagonal
    (in spacing units) and the slice is flagged
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class ConfusionCounts:
    """Pixel tallies of a binary prediction against ground truth."""

    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class BoundarySet:
    """Boundary pixel coordinates of a binary mask with pixel spacing."""

    points: np.ndarray  # (n, 2) int array of (row, col)
    spacing: tuple[float, float]  # (mm per row step, mm per col step)

    def __len__(self) -> int:
        return len(self.points)

    def scaled(self) -> np.ndarray:
        """Points in physical units."""
        return self.points.astype(np.float64) * np.asarray(self.spacing)


METRIC_NAMES = ("dice", "iou", "hd95", "accuracy", "precision", "sensitivity", "specificity")


@dataclass
class SliceMetrics:
    dice: float
    iou: float
    hd95: float
    accuracy: float
    precision: float
    sensitivity: float
    specificity: float
    hd95_fallback: bool = False
    undefined_rates: list[str] = field(default_factory=list)

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


@dataclass
class MetricsReport:
    """Per-slice rows plus unweighted aggregate means."""

    rows: list[SliceMetrics]
    means: dict[str, float]
    n_slices: int
    n_hd95_fallback: int
    n_undefined_rates: int

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["slice"] + list(METRIC_NAMES) + ["hd95_fallback"])
            for i, row in enumerate(self.rows):
                writer.writerow([i] + [f"{getattr(row, m):.6f}" for m in METRIC_NAMES]
                                + [int(row.hd95_fallback)])
            writer.writerow(["mean"] + [f"{self.means[m]:.6f}" for m in METRIC_NAMES] + [""])


def _check_binary_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    return pred.astype(bool), gt.astype(bool)


def confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    """Exact TP/FP/FN/TN pixel tallies for a binary mask pair."""
    p, g = _check_binary_pair(pred, gt)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(np.count_nonzero(~p & ~g))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def dice(c: ConfusionCounts) -> float:
    """2*TP / (2*TP + FP + FN); both-empty pairs score 1.0."""
    denom = 2 * c.tp + c.fp + c.fn
    if denom == 0:
        return 1.0
    return 2.0 * c.tp / denom


def iou(c: ConfusionCounts) -> float:
    """TP / (TP + FP + FN); both-empty pairs score 1.0."""
    denom = c.tp + c.fp + c.fn
    if denom == 0:
        return 1.0
    return c.tp / denom


def _rate(num: int, denom: int, name: str, undefined: list[str] | None) -> float:
    if denom == 0:
        if undefined is not None:
            undefined.append(name)
        return 1.0
    return num / denom


def accuracy(c: ConfusionCounts, undefined: list[str] | None = None) -> float:
    return _rate(c.tp + c.tn, c.total, "accuracy", undefined)


def precision(c: ConfusionCounts, undefined: list[str] | None = None) -> float:
    return _rate(c.tp, c.tp + c.fp, "precision", undefined)


def sensitivity(c: ConfusionCounts, undefined: list[str] | None = None) -> float:
    return _rate(c.tp, c.tp + c.fn, "sensitivity", undefined)


def specificity(c: ConfusionCounts, undefined: list[str] | None = None) -> float:
    return _rate(c.tn, c.tn + c.fp, "specificity", undefined)


def extract_boundary(mask: np.ndarray, spacing: tuple[float, float] = (1.0, 1.0)) -> BoundarySet:
    """Boundary pixels: foreground with a background 4-neighbor or on the border."""
    m = np.asarray(mask).astype(bool)
    if m.ndim != 2:
        raise ValueError(f"expected 2D mask, got {m.ndim}D")
    padded = np.pad(m, 1, mode="constant", constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    boundary = m & ~interior
    points = np.argwhere(boundary)
    return BoundarySet(points=points, spacing=tuple(spacing))


def _percentile_linear(values: np.ndarray, q: float) -> float:
    # linear interpolation between closest ranks (numpy default)
    return float(np.percentile(values, q))


def hd95(pred: np.ndarray, gt: np.ndarray,
         spacing: tuple[float, float] = (1.0, 1.0)) -> tuple[float, bool]:
    """95th percentile of pooled symmetric boundary distances.

    Returns (value, fallback_flag). Both masks empty -> (0.0, False);
    exactly one empty -> (image diagonal in spacing units, True).
    """
    p, g = _check_binary_pair(pred, gt)
    bp = extract_boundary(p, spacing)
    bg = extract_boundary(g, spacing)
    if len(bp) == 0 and len(bg) == 0:
        return 0.0, False
    if len(bp) == 0 or len(bg) == 0:
        h, w = p.shape
        diag = math.hypot((h - 1) * spacing[0], (w - 1) * spacing[1])
        return diag, True
    pp = bp.scaled()
    gg = bg.scaled()
    d_pg, _ = cKDTree(gg).query(pp)
    d_gp, _ = cKDTree(pp).query(gg)
    pooled = np.concatenate([d_pg, d_gp])
    return _percentile_linear(pooled, 95.0), False


def slice_metrics(pred: np.ndarray, gt: np.ndarray,
                  spacing: tuple[float, float] = (1.0, 1.0)) -> SliceMetrics:
    """All metrics for one prediction/ground-truth mask pair."""
    c = confusion(pred, gt)
    undefined: list[str] = []
    hd_value, fallback = hd95(pred, gt, spacing)
    return SliceMetrics(
        dice=dice(c),
        iou=iou(c),
        hd95=hd_value,
        accuracy=accuracy(c, undefined),
        precision=precision(c, undefined),
        sensitivity=sensitivity(c, undefined),
        specificity=specificity(c, undefined),
        hd95_fallback=fallback,
        undefined_rates=undefined,
    )


def evaluate_split(predictions, ground_truths,
                   spacing: tuple[float, float] = (1.0, 1.0)) -> MetricsReport:
    """Per-slice metrics then unweighted means over slices."""
    predictions = list(predictions)
    ground_truths = list(ground_truths)
    if len(predictions) != len(ground_truths):
        raise ValueError(
            f"misaligned lists: {len(predictions)} predictions vs {len(ground_truths)} ground truths")
    if not predictions:
        raise ValueError("empty evaluation set")
    rows = [slice_metrics(p, g, spacing) for p, g in zip(predictions, ground_truths)]
    means = {m: float(np.mean([getattr(r, m) for r in rows])) for m in METRIC_NAMES}
    return MetricsReport(
        rows=rows,
        means=means,
        n_slices=len(rows),
        n_hd95_fallback=sum(r.hd95_fallback for r in rows),
        n_undefined_rates=sum(bool(r.undefined_rates) for r in rows),
    )
