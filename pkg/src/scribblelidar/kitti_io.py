"""Readers and writers for KITTI ``.bin`` point files and SemanticKITTI ``.label`` files.

Layout on disk follows SemanticKITTI::

    <root>/sequences/<seq>/velodyne/<frame>.bin
    <root>/sequences/<seq>/<label_dir>/<frame>.label

``label_dir`` is ``labels`` for dense ground truth and ``scribbles`` for
scribble annotations.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import ClassMap, PointCloud, remap_labels
from .errors import MissingDirectory, MissingInverse, TruncatedFile, UnpairedFrame

POINT_DTYPE = np.dtype("<f4")
LABEL_WORD = np.dtype("<u4")
POINT_RECORD_BYTES = 16
SEMANTIC_MASK = 0xFFFF


def read_point_bin(data: bytes | bytearray | memoryview, frame_id: int = 0) -> PointCloud:
    """Decode packed little-endian ``(x, y, z, intensity)`` float32 records."""
    if len(data) % POINT_RECORD_BYTES:
        raise TruncatedFile(f"point data of {len(data)} bytes is not a multiple of {POINT_RECORD_BYTES}")
    pts = np.frombuffer(data, dtype=POINT_DTYPE).reshape(-1, 4)
    return PointCloud(pts.astype(np.float32), frame_id)


def write_point_bin(cloud: PointCloud) -> bytes:
    return np.ascontiguousarray(cloud.points, dtype=POINT_DTYPE).tobytes()


def read_raw_label(data: bytes | bytearray | memoryview) -> np.ndarray:
    """Semantic raw ids (low 16 bits) of a ``.label`` payload; instance bits dropped."""
    if len(data) % LABEL_WORD.itemsize:
        raise TruncatedFile(f"label data of {len(data)} bytes is not a multiple of 4")
    words = np.frombuffer(data, dtype=LABEL_WORD)
    return (words & SEMANTIC_MASK).astype(np.int64)


def read_label(data: bytes | bytearray | memoryview, class_map: ClassMap) -> np.ndarray:
    return remap_labels(read_raw_label(data), class_map)


def write_label(labels, inverse_map: Mapping[int, int] | ClassMap) -> bytes:
    """Encode train ids as raw semantic ids with zero instance bits.

    ``inverse_map`` is a train->raw mapping or a :class:`ClassMap` (its
    ``train_to_raw`` table is used).
    """
    if isinstance(inverse_map, ClassMap):
        inverse_map = inverse_map.train_to_raw
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        return b""
    present = np.unique(labels)
    lut = np.zeros(int(present.max()) + 1, dtype=np.int64)
    for t in present:
        if int(t) not in inverse_map:
            raise MissingInverse(int(t))
        lut[t] = inverse_map[int(t)]
    raw = lut[labels]
    return (raw & SEMANTIC_MASK).astype(LABEL_WORD).tobytes()


def load_points(path: str | os.PathLike, frame_id: int = 0) -> PointCloud:
    # Whole-file read; the decoded result is identical to chunked or mapped reads.
    return read_point_bin(Path(path).read_bytes(), frame_id)


def load_labels(path: str | os.PathLike, class_map: ClassMap) -> np.ndarray:
    return read_label(Path(path).read_bytes(), class_map)


def save_points(path: str | os.PathLike, cloud: PointCloud) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(write_point_bin(cloud))


def save_labels(path: str | os.PathLike, labels, class_map: ClassMap | Mapping[int, int]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(write_label(labels, class_map))


@dataclass(frozen=True)
class SequenceLayout:
    root: Path
    sequence: str
    point_files: tuple[Path, ...]
    label_files: tuple[Path, ...] | None

    def __len__(self) -> int:
        return len(self.point_files)

    @property
    def stems(self) -> list[str]:
        return [p.stem for p in self.point_files]

    def frame_ids(self) -> list[int]:
        return [int(s) if s.isdigit() else i for i, s in enumerate(self.stems)]


def sequence_dir(root: str | os.PathLike, seq: str) -> Path:
    return Path(root) / "sequences" / str(seq)


def scan_sequence(
    root: str | os.PathLike,
    seq: str,
    label_dir: str = "labels",
    require_labels: bool = True,
) -> SequenceLayout:
    """List and pair the frames of one sequence.

    Raises:
        MissingDirectory: the sequence directory does not exist.
        UnpairedFrame: a point file has no label file of the same stem.
    """
    seq_dir = sequence_dir(root, seq)
    if not seq_dir.is_dir():
        raise MissingDirectory(f"no sequence directory at {seq_dir}")
    vel = seq_dir / "velodyne"
    points = tuple(sorted(vel.glob("*.bin"))) if vel.is_dir() else ()
    lab = seq_dir / label_dir
    if not lab.is_dir():
        if require_labels and points:
            raise UnpairedFrame(f"{points[0].name} has no label file: directory {lab} is missing")
        return SequenceLayout(Path(root), str(seq), points, None if not require_labels else ())
    labels = []
    for p in points:
        candidate = lab / (p.stem + ".label")
        if not candidate.is_file():
            if require_labels:
                raise UnpairedFrame(f"{p} has no matching label file {candidate}")
            return SequenceLayout(Path(root), str(seq), points, None)
        labels.append(candidate)
    return SequenceLayout(Path(root), str(seq), points, tuple(labels))
