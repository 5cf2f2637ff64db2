"""Pseudo-label selection: class-range-balanced (CRB) thresholds and baselines.

Teacher confidences of unlabeled points are pooled over the whole dataset per
(argmax class, range annulus).  Each pool is sorted in descending order and the
value at index ``floor(beta * len)`` becomes that cell's confidence threshold,
stored as the negative log-confidence ``k``.  A point is pseudo-labeled with its
argmax class when its confidence strictly exceeds ``exp(-k)`` of its cell.

Baselines share the same machinery: ``naive`` takes every argmax, ``threshold``
uses a single global confidence, ``class_balanced`` is CRB with one annulus.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .binning import DEFAULT_ANNULI, AnnulusSpec, annulus_index, annulus_width
from .core import LABEL_DTYPE, PointCloud
from .errors import EmptyFrame

STRATEGIES = ("naive", "threshold", "class_balanced", "crb")


@dataclass(frozen=True)
class FramePseudoLabels:
    """Sparse pseudo-labels of one frame: sorted point indices and their classes."""

    indices: np.ndarray
    classes: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        cls = np.asarray(self.classes, dtype=LABEL_DTYPE).reshape(-1)
        if idx.shape != cls.shape:
            raise ValueError("indices and classes differ in length")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "classes", cls)

    def __len__(self) -> int:
        return self.indices.size

    @classmethod
    def from_dense(cls, labels) -> "FramePseudoLabels":
        labels = np.asarray(labels)
        idx = np.flatnonzero(labels)
        return cls(idx, labels[idx])

    def dense(self, n: int) -> np.ndarray:
        out = np.zeros(n, dtype=LABEL_DTYPE)
        out[self.indices] = self.classes
        return out


PseudoLabelSet = list  # one FramePseudoLabels per frame


def merge_labels(scribbles, pseudo: FramePseudoLabels | None) -> np.ndarray:
    """Scribbles where present, else pseudo-labels, else 0."""
    out = np.array(scribbles, dtype=LABEL_DTYPE, copy=True).reshape(-1)
    if pseudo is None or len(pseudo) == 0:
        return out
    free = out[pseudo.indices] == 0
    out[pseudo.indices[free]] = pseudo.classes[free]
    return out


# -- annuli -----------------------------------------------------------------------


def frame_annuli(clouds: Sequence[PointCloud], R: int = DEFAULT_ANNULI,
                 global_range: bool = False) -> list[np.ndarray]:
    """Annulus id of every point, with width recomputed per frame (or shared)."""
    if global_range:
        far = max((float(c.planar_range().max()) for c in clouds if len(c)), default=0.0)
        spec = annulus_width(np.array([[far, 0.0]]), R)
        return [annulus_index(c.points, spec) if len(c) else np.zeros(0, np.int64) for c in clouds]
    out = []
    for c in clouds:
        if len(c) == 0:
            out.append(np.zeros(0, np.int64))
            continue
        out.append(annulus_index(c.points, annulus_width(c, R)))
    return out


# -- confidence pooling -------------------------------------------------------------


@dataclass
class ConfidenceStore:
    """Pooled teacher confidences keyed by (class, annulus).

    Stored flat in collection order; ``values(c, r)`` returns one cell's pool.
    """

    C: int
    R: int
    classes: np.ndarray
    annuli: np.ndarray
    confidences: np.ndarray

    @classmethod
    def empty(cls, C: int, R: int) -> "ConfidenceStore":
        return cls(C, R, np.zeros(0, LABEL_DTYPE), np.zeros(0, np.int64), np.zeros(0))

    def values(self, c: int, r: int) -> np.ndarray:
        return self.confidences[(self.classes == c) & (self.annuli == r)]

    def counts(self) -> np.ndarray:
        """``(C, R)`` pool sizes."""
        flat = np.bincount((self.classes.astype(np.int64) - 1) * self.R + self.annuli, minlength=self.C * self.R)
        return flat.reshape(self.C, self.R)

    def __len__(self) -> int:
        return self.confidences.size

    @staticmethod
    def concat(stores: Sequence["ConfidenceStore"]) -> "ConfidenceStore":
        first = stores[0]
        return ConfidenceStore(
            first.C, first.R,
            np.concatenate([s.classes for s in stores]),
            np.concatenate([s.annuli for s in stores]),
            np.concatenate([s.confidences for s in stores]),
        )


def _map_frames(fn: Callable, n: int, workers: int) -> list:
    if workers <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


def collect_confidences(preds: Sequence[np.ndarray], clouds: Sequence[PointCloud], masks_u: Sequence[np.ndarray],
                        R: int = DEFAULT_ANNULI, global_range: bool = False, workers: int = 1) -> ConfidenceStore:
    """Pool the max probability of every unlabeled point under its (argmax, annulus) cell."""
    if not preds:
        raise EmptyFrame("no frames to collect confidences from")
    C = np.asarray(preds[0]).shape[1]
    annuli = frame_annuli(clouds, R, global_range)

    def one(i: int) -> ConfidenceStore:
        p = np.asarray(preds[i], dtype=np.float64)
        m = np.asarray(masks_u[i], dtype=bool)
        cls = p.argmax(axis=1).astype(LABEL_DTYPE) + 1
        conf = p.max(axis=1)
        return ConfidenceStore(C, R, cls[m], annuli[i][m], conf[m])

    # Per-frame stores concatenated in frame order: identical for any worker count.
    return ConfidenceStore.concat([ConfidenceStore.empty(C, R)] + _map_frames(one, len(preds), workers))


# -- thresholds -------------------------------------------------------------------


def _selection_rank(beta: float, n: int) -> int:
    # floor(beta * n) on the decimal value of beta, immune to binary rounding of e.g. 0.3 * 10.
    return math.floor(Fraction(beta).limit_denominator(10**9) * n)


@dataclass(frozen=True)
class ThresholdTable:
    """``(C, R)`` negative log-confidence thresholds; ``inf`` marks an empty cell.

    ``confidence`` holds the threshold confidences themselves (``exp(-k)``) so
    selection compares against the exact pooled value.
    """

    k: np.ndarray
    confidence: np.ndarray
    beta: float
    R: int
    counts: np.ndarray | None = None

    @property
    def C(self) -> int:
        return self.k.shape[0]

    @classmethod
    def from_k(cls, k, beta: float, R: int) -> "ThresholdTable":
        k = np.asarray(k, dtype=np.float64)
        return cls(k, np.exp(-k), beta, R)


def determine_thresholds(store: ConfidenceStore, beta: float = 0.5) -> ThresholdTable:
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    C, R = store.C, store.R
    k = np.full((C, R), np.inf)
    thr = np.zeros((C, R))
    cell = (store.classes.astype(np.int64) - 1) * R + store.annuli
    # Group by cell, confidences descending within each group.
    order = np.lexsort((-store.confidences, cell))
    sorted_cell = cell[order]
    sorted_conf = store.confidences[order]
    starts = np.searchsorted(sorted_cell, np.arange(C * R), side="left")
    ends = np.searchsorted(sorted_cell, np.arange(C * R), side="right")
    counts = (ends - starts).reshape(C, R)
    for flat in np.flatnonzero(ends > starts):
        n = ends[flat] - starts[flat]
        i_star = min(_selection_rank(beta, n), n - 1)
        value = sorted_conf[starts[flat] + i_star]
        c, r = divmod(int(flat), R)
        thr[c, r] = value
        k[c, r] = -math.log(value) if value > 0 else np.inf
    return ThresholdTable(k, thr, beta, R, counts)


def solve_pseudo_labels(preds: Sequence[np.ndarray], table: ThresholdTable, clouds: Sequence[PointCloud],
                        masks_u: Sequence[np.ndarray], global_range: bool = False,
                        workers: int = 1) -> PseudoLabelSet:
    """Label an unlabeled point with its argmax class iff its confidence beats its cell threshold."""
    annuli = frame_annuli(clouds, table.R, global_range)
    finite = np.isfinite(table.k)

    def one(i: int) -> FramePseudoLabels:
        p = np.asarray(preds[i], dtype=np.float64)
        m = np.asarray(masks_u[i], dtype=bool)
        c0 = p.argmax(axis=1)
        conf = p.max(axis=1)
        r = annuli[i]
        keep = m & finite[c0, r] & (conf > table.confidence[c0, r])
        idx = np.flatnonzero(keep)
        return FramePseudoLabels(idx, c0[idx] + 1)

    return _map_frames(one, len(preds), workers)


def generate(strategy: str, preds: Sequence[np.ndarray], clouds: Sequence[PointCloud],
             masks_u: Sequence[np.ndarray], beta: float = 0.5, R: int = DEFAULT_ANNULI, tau: float = 0.9,
             global_range: bool = False, workers: int = 1) -> tuple[PseudoLabelSet, ThresholdTable | None]:
    """Pseudo-labels under one of :data:`STRATEGIES`; returns the threshold table when one is used."""
    if strategy == "naive":
        out = []
        for p, m in zip(preds, masks_u):
            idx = np.flatnonzero(np.asarray(m, dtype=bool))
            out.append(FramePseudoLabels(idx, np.asarray(p)[idx].argmax(axis=1) + 1))
        return out, None
    if strategy == "threshold":
        if not 0.0 < tau < 1.0:
            raise ValueError(f"threshold tau must lie in (0, 1), got {tau}")
        out = []
        for p, m in zip(preds, masks_u):
            p = np.asarray(p)
            idx = np.flatnonzero(np.asarray(m, dtype=bool) & (p.max(axis=1) > tau))
            out.append(FramePseudoLabels(idx, p[idx].argmax(axis=1) + 1))
        return out, None
    if strategy == "class_balanced":
        R = 1
    elif strategy != "crb":
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    store = collect_confidences(preds, clouds, masks_u, R, global_range, workers)
    table = determine_thresholds(store, beta)
    return solve_pseudo_labels(preds, table, clouds, masks_u, global_range, workers), table


# -- manifest ---------------------------------------------------------------------


def manifest_dict(table: ThresholdTable | None, strategy: str, class_names=None, **extra) -> dict:
    doc = {"strategy": strategy}
    if table is not None:
        doc.update({
            "beta": table.beta,
            "R": table.R,
            "k": [[None if not math.isfinite(v) else v for v in row] for row in table.k.tolist()],
            "threshold_confidence": table.confidence.tolist(),
        })
        if table.counts is not None:
            doc["pool_sizes"] = table.counts.tolist()
    if class_names is not None:
        doc["classes"] = list(class_names)
    doc.update(extra)
    return doc


def write_manifest(path: str | Path, table: ThresholdTable | None, strategy: str, class_names=None, **extra) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(manifest_dict(table, strategy, class_names, **extra), indent=1) + "\n")


def read_manifest_table(path: str | Path) -> ThresholdTable:
    doc = json.loads(Path(path).read_text())
    k = np.array([[np.inf if v is None else v for v in row] for row in doc["k"]], dtype=np.float64)
    thr = np.asarray(doc["threshold_confidence"], dtype=np.float64)
    return ThresholdTable(k, thr, doc["beta"], doc["R"])
