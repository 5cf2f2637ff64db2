"""Segmentation metrics and label statistics.

Ground-truth id 0 is ignored everywhere.  Confusion matrices are indexed
``[gt, pred]`` over ids ``0..C`` so that a prediction of 0 on a labeled point
still counts as a miss for its ground-truth class.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .binning import DEFAULT_ANNULI
from .crb import FramePseudoLabels, frame_annuli
from .core import PointCloud
from .errors import EmptyPseudoSet, LengthMismatch, NoEvaluableClass, ZeroBaseline


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (C + 1, C + 1) int64, row 0 always zero

    @classmethod
    def zeros(cls, C: int) -> "ConfusionMatrix":
        return cls(np.zeros((C + 1, C + 1), dtype=np.int64))

    @property
    def C(self) -> int:
        return self.counts.shape[0] - 1

    @property
    def matrix(self) -> np.ndarray:
        """``C x C`` block over semantic classes."""
        return self.counts[1:, 1:]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)


def confusion(gt, pred, C: int) -> ConfusionMatrix:
    """Tally ``(gt, pred)`` pairs over points with ``gt != 0``.

    ``pred`` is a label array or an ``(N, C)`` soft prediction (argmax is taken).
    """
    gt = np.asarray(gt).reshape(-1)
    pred = np.asarray(pred)
    if pred.ndim == 2:
        pred = pred.argmax(axis=1) + 1
    pred = pred.reshape(-1)
    if gt.shape != pred.shape:
        raise LengthMismatch(f"{gt.size} ground-truth labels but {pred.size} predictions")
    keep = gt != 0
    flat = gt[keep].astype(np.int64) * (C + 1) + pred[keep].astype(np.int64)
    return ConfusionMatrix(np.bincount(flat, minlength=(C + 1) ** 2).reshape(C + 1, C + 1))


def iou_per_class(m: ConfusionMatrix) -> np.ndarray:
    """IoU of classes ``1..C``; NaN where the class has empty union."""
    tp = np.diag(m.counts)[1:].astype(np.float64)
    gt_total = m.counts[1:, :].sum(axis=1)
    pred_total = m.counts[1:, 1:].sum(axis=0)
    union = gt_total + pred_total - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, tp / np.where(union > 0, union, 1), np.nan)


def miou(m: ConfusionMatrix) -> tuple[np.ndarray, float]:
    """Per-class IoU (NaN for absent classes) and their mean over present classes.

    Raises:
        NoEvaluableClass: every class has an empty union.
    """
    iou = iou_per_class(m)
    present = ~np.isnan(iou)
    if not present.any():
        raise NoEvaluableClass("no class occurs in ground truth or prediction")
    return iou, float(iou[present].mean())


def relative_performance(ss_miou: float, fs_miou: float) -> float:
    """Scribble-supervised score as a percentage of the fully supervised one."""
    if fs_miou <= 0:
        raise ZeroBaseline("fully supervised baseline must be positive")
    return 100.0 * ss_miou / fs_miou


def pseudo_label_accuracy(pseudo: FramePseudoLabels | Sequence[FramePseudoLabels], dense_gt) -> float:
    """Fraction of pseudo-labels agreeing with dense ground truth (gt 0 ignored).

    Accepts one frame, or a sequence of frames with a matching sequence of
    ground-truth arrays.
    """
    if isinstance(pseudo, FramePseudoLabels):
        pseudo, dense_gt = [pseudo], [dense_gt]
    correct = total = 0
    for p, gt in zip(pseudo, dense_gt):
        g = np.asarray(gt)[p.indices]
        valid = g != 0
        correct += int((g[valid] == p.classes[valid]).sum())
        total += int(valid.sum())
    if total == 0:
        raise EmptyPseudoSet("no pseudo-label falls on a ground-truth labeled point")
    return correct / total


@dataclass
class DistributionStats:
    class_counts: np.ndarray  # (C,) labeled points per class
    total_points: int
    labeled_points: int
    class_range_counts: np.ndarray | None = None  # (C, R)

    @property
    def labeled_fraction(self) -> float:
        return self.labeled_points / self.total_points if self.total_points else 0.0


def distribution(labels: Sequence[np.ndarray], C: int, clouds: Sequence[PointCloud] | None = None,
                 R: int = DEFAULT_ANNULI, global_range: bool = False) -> DistributionStats:
    """Per-class labeled counts, labeled fraction and optional per-annulus split."""
    counts = np.zeros(C, dtype=np.int64)
    total = labeled = 0
    for lab in labels:
        lab = np.asarray(lab)
        total += lab.size
        nz = lab[lab != 0].astype(np.int64)
        labeled += nz.size
        counts += np.bincount(nz - 1, minlength=C)[:C]
    per_range = None
    if clouds is not None:
        per_range = np.zeros((C, R), dtype=np.int64)
        for lab, ann in zip(labels, frame_annuli(clouds, R, global_range)):
            lab = np.asarray(lab)
            keep = lab != 0
            flat = (lab[keep].astype(np.int64) - 1) * R + ann[keep]
            per_range += np.bincount(flat, minlength=C * R).reshape(C, R)
    return DistributionStats(counts, total, labeled, per_range)


# -- reports ------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if np.isnan(v) else f"{float(v):.6f}"
    return str(v)


def format_report(values: Mapping[str, object]) -> str:
    """``key = value`` lines in sorted key order."""
    return "".join(f"{k} = {_fmt(values[k])}\n" for k in sorted(values))


def parse_report(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def segmentation_report(m: ConfusionMatrix, class_names: Sequence[str], prefix: str = "") -> dict[str, object]:
    iou, mean = miou(m)
    out: dict[str, object] = {f"{prefix}miou": mean, f"{prefix}points": m.total}
    for name, v in zip(class_names, iou):
        out[f"{prefix}iou.{name}"] = v
    return out


def distribution_report(stats: DistributionStats, class_names: Sequence[str]) -> dict[str, object]:
    out: dict[str, object] = {
        "points.total": stats.total_points,
        "points.labeled": stats.labeled_points,
        "labeled_fraction": stats.labeled_fraction,
    }
    for i, name in enumerate(class_names):
        out[f"count.{name}"] = stats.class_counts[i]
        if stats.class_range_counts is not None:
            for r, v in enumerate(stats.class_range_counts[i]):
                out[f"count_range.{name}.{r:02d}"] = v
    return out


def write_report(path: str | Path, values: Mapping[str, object]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(format_report(values))
