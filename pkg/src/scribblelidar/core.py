"""Frame-level data model: point clouds, label arrays, soft predictions, class maps.

Labels are plain integer numpy arrays where ``0`` means *unlabeled* and
``1..C`` are semantic (train) classes.  Soft predictions are ``(N, C)`` float
arrays whose column ``c - 1`` holds the probability of class ``c``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    LengthMismatch,
    NonFiniteValue,
    UnknownRawId,
    UnnormalizedDistribution,
)

LABEL_DTYPE = np.int32
PROB_ATOL = 1e-5


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """One LiDAR frame stored column-friendly as an ``(N, 4)`` float32 array.

    Columns are ``x, y, z`` in meters and reflectance ``intensity``.
    """

    points: np.ndarray
    frame_id: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32)
        if pts.ndim == 1 and pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise LengthMismatch(f"points must have shape (N, 4), got {pts.shape}")
        if self.frame_id < 0:
            raise ValueError("frame_id must be non-negative")
        object.__setattr__(self, "points", _frozen(pts))

    @classmethod
    def from_xyzi(cls, xyz, intensity=None, frame_id: int = 0) -> "PointCloud":
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        if intensity is None:
            intensity = np.zeros(len(xyz))
        return cls(np.column_stack([xyz, np.asarray(intensity, dtype=np.float64)]), frame_id)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def planar_range(self) -> np.ndarray:
        """Distance of every point from the sensor axis in the transverse plane."""
        xy = self.points[:, :2].astype(np.float64)
        return np.hypot(xy[:, 0], xy[:, 1])

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return self.frame_id == other.frame_id and np.array_equal(self.points, other.points)


@dataclass(frozen=True)
class ClassMap:
    """Names of the ``C`` train classes plus raw-id harmonization tables.

    ``names[c - 1]`` is the name of train class ``c``.  ``raw_to_train`` maps
    dataset ids to ``0..C``; ``train_to_raw`` is the inverse used when writing
    label files.
    """

    names: tuple[str, ...]
    raw_to_train: Mapping[int, int]
    train_to_raw: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        r2t = {int(k): int(v) for k, v in self.raw_to_train.items()}
        t2r = {int(k): int(v) for k, v in self.train_to_raw.items()}
        for raw, train in r2t.items():
            if not 0 <= train <= len(self.names):
                raise ConfigError(f"raw id {raw} maps to {train}, outside 0..{len(self.names)}")
        object.__setattr__(self, "raw_to_train", r2t)
        object.__setattr__(self, "train_to_raw", t2r)

    @property
    def C(self) -> int:
        return len(self.names)

    def lookup_table(self) -> np.ndarray:
        """Dense raw->train array; unknown raw ids hold ``-1``."""
        size = max(self.raw_to_train, default=0) + 1
        lut = np.full(size, -1, dtype=LABEL_DTYPE)
        for raw, train in self.raw_to_train.items():
            lut[raw] = train
        return lut

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "raw_to_train": {str(k): v for k, v in sorted(self.raw_to_train.items())},
            "train_to_raw": {str(k): v for k, v in sorted(self.train_to_raw.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClassMap":
        try:
            return cls(
                names=d["names"],
                raw_to_train={int(k): int(v) for k, v in d["raw_to_train"].items()},
                train_to_raw={int(k): int(v) for k, v in d.get("train_to_raw", {}).items()},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed class map: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "ClassMap":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


# SemanticKITTI learning map (19 classes, moving objects folded into static ones).
SEMANTIC_KITTI = ClassMap(
    names=(
        "car", "bicycle", "motorcycle", "truck", "other-vehicle", "person",
        "bicyclist", "motorcyclist", "road", "parking", "sidewalk", "other-ground",
        "building", "fence", "vegetation", "trunk", "terrain", "pole", "traffic-sign",
    ),
    raw_to_train={
        0: 0, 1: 0, 10: 1, 11: 2, 13: 5, 15: 3, 16: 5, 18: 4, 20: 5, 30: 6, 31: 7,
        32: 8, 40: 9, 44: 10, 48: 11, 49: 12, 50: 13, 51: 14, 52: 0, 60: 9, 70: 15,
        71: 16, 72: 17, 80: 18, 81: 19, 99: 0, 252: 1, 253: 7, 254: 6, 255: 8,
        256: 5, 257: 5, 258: 4, 259: 5,
    },
    train_to_raw={
        0: 0, 1: 10, 2: 11, 3: 15, 4: 18, 5: 20, 6: 30, 7: 31, 8: 32, 9: 40, 10: 44,
        11: 48, 12: 49, 13: 50, 14: 51, 15: 70, 16: 71, 17: 72, 18: 80, 19: 81,
    },
)


def split_supervision(labels) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(mask_S, mask_U)``: scribble-labeled and unlabeled point masks."""
    labels = np.asarray(labels)
    mask_s = labels != 0
    return mask_s, ~mask_s


def remap_labels(raw: Sequence[int] | np.ndarray, class_map: ClassMap) -> np.ndarray:
    """Map raw dataset ids to train ids; raises :class:`UnknownRawId` on a miss."""
    raw = np.asarray(raw, dtype=np.int64).reshape(-1)
    lut = class_map.lookup_table()
    out_of_table = (raw < 0) | (raw >= len(lut))
    mapped = np.full(raw.shape, -1, dtype=LABEL_DTYPE)
    inside = ~out_of_table
    mapped[inside] = lut[raw[inside]]
    bad = np.flatnonzero(mapped < 0)
    if bad.size:
        i = int(bad[0])
        raise UnknownRawId(int(raw[i]), i)
    return mapped


def check_distribution(probs: np.ndarray, atol: float = PROB_ATOL) -> None:
    probs = np.asarray(probs)
    if probs.ndim != 2:
        raise LengthMismatch(f"predictions must be (N, C), got shape {probs.shape}")
    if not np.all(np.isfinite(probs)):
        raise NonFiniteValue("prediction contains non-finite values")
    if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
        raise UnnormalizedDistribution("probabilities outside [0, 1]")
    sums = probs.sum(axis=1)
    off = np.flatnonzero(np.abs(sums - 1.0) > atol)
    if off.size:
        i = int(off[0])
        raise UnnormalizedDistribution(f"row {i} sums to {sums[i]:.6g}")


def validate_frame(cloud: PointCloud, labels, preds=None, num_classes: int | None = None) -> None:
    """Check length, finiteness and normalization invariants of one frame.

    Raises:
        LengthMismatch: a companion array does not match the point count.
        NonFiniteValue: a coordinate, intensity or probability is NaN/inf.
        UnnormalizedDistribution: a probability row leaves [0, 1] or does not sum to 1.
    """
    n = len(cloud)
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != n:
        raise LengthMismatch(f"{n} points but {labels.shape[0] if labels.ndim else 0} labels")
    if not np.all(np.isfinite(cloud.points)):
        raise NonFiniteValue("point cloud contains non-finite values")
    if labels.size and (labels.min() < 0 or (num_classes is not None and labels.max() > num_classes)):
        raise DataError("label ids outside 0..C")
    if preds is not None:
        preds = np.asarray(preds)
        if preds.ndim != 2 or preds.shape[0] != n:
            raise LengthMismatch(f"{n} points but predictions of shape {preds.shape}")
        if num_classes is not None and preds.shape[1] != num_classes:
            raise LengthMismatch(f"predictions have {preds.shape[1]} classes, expected {num_classes}")
        check_distribution(preds)
