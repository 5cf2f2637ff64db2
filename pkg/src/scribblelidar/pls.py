"""Pyramid local semantic-context (PLS) descriptors.

For every level of a :class:`~scribblelidar.binning.CylGridSpec` the scribble
labels inside each cylindrical sector are tallied into a class histogram.  A
point's descriptor is its sector's histogram divided by the histogram maximum,
concatenated over levels, giving ``levels * C`` values in ``[0, 1]``.  Sectors
without any scribble produce an all-zero block.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binning import CylGridSpec, cyl_flat_index
from .core import PointCloud
from .errors import LengthMismatch, TruncatedFile


@dataclass(frozen=True)
class PlsConfig:
    grid: CylGridSpec = field(default_factory=CylGridSpec)
    C: int = 19

    @property
    def dim(self) -> int:
        return self.grid.levels * self.C


@dataclass(frozen=True)
class HistogramPyramid:
    """Per-level ``(cells, C)`` integer histograms of scribble labels."""

    counts: tuple[np.ndarray, ...]


def build_histograms(cloud: PointCloud, labels, cfg: PlsConfig) -> HistogramPyramid:
    labels = np.asarray(labels)
    if labels.shape != (len(cloud),):
        raise LengthMismatch(f"{len(cloud)} points but {labels.shape[0]} labels")
    if labels.size and labels.max() > cfg.C:
        raise LengthMismatch(f"label {labels.max()} exceeds class count {cfg.C}")
    labeled = labels != 0
    pts = cloud.points[labeled]
    cls = labels[labeled].astype(np.int64) - 1
    counts = []
    for level in range(cfg.grid.levels):
        n_cells = cfg.grid.cells(level)
        cell = cyl_flat_index(pts, cfg.grid, level)
        # Integer bincount: order-independent, so any partitioned build agrees.
        flat = np.bincount(cell * cfg.C + cls, minlength=n_cells * cfg.C)
        counts.append(flat.reshape(n_cells, cfg.C))
    return HistogramPyramid(tuple(counts))


def merge_pyramids(parts) -> HistogramPyramid:
    """Sum partial pyramids built over disjoint point subsets of one frame."""
    parts = list(parts)
    return HistogramPyramid(tuple(sum(p.counts[i] for p in parts) for i in range(len(parts[0].counts))))


def normalized_histograms(pyr: HistogramPyramid) -> list[np.ndarray]:
    """Each cell's histogram divided by its own maximum (zero rows stay zero)."""
    out = []
    for h in pyr.counts:
        peak = h.max(axis=1, keepdims=True).astype(np.float64)
        out.append(np.divide(h, peak, out=np.zeros(h.shape), where=peak > 0))
    return out


def compute_pls(cloud: PointCloud, pyr: HistogramPyramid, cfg: PlsConfig) -> np.ndarray:
    """``(N, levels * C)`` descriptor matrix for every point of ``cloud``."""
    norm = normalized_histograms(pyr)
    blocks = [norm[level][cyl_flat_index(cloud.points, cfg.grid, level)] for level in range(cfg.grid.levels)]
    if not blocks:
        return np.zeros((len(cloud), 0))
    return np.concatenate(blocks, axis=1)


def pls_descriptors(cloud: PointCloud, labels, cfg: PlsConfig) -> np.ndarray:
    return compute_pls(cloud, build_histograms(cloud, labels, cfg), cfg)


def augment_points(cloud: PointCloud, pls: np.ndarray) -> np.ndarray:
    """Append descriptors to ``(x, y, z, I)``, giving ``(N, 4 + levels * C)`` features."""
    pls = np.asarray(pls, dtype=np.float64)
    if pls.ndim != 2 or pls.shape[0] != len(cloud):
        raise LengthMismatch(f"{len(cloud)} points but descriptor matrix of shape {pls.shape}")
    return np.hstack([cloud.points.astype(np.float64), pls])


_HEADER = struct.Struct("<II")


def dump_pls(pls: np.ndarray) -> bytes:
    """Binary dump: ``uint32`` point count and width, then row-major float32."""
    pls = np.asarray(pls)
    n, d = pls.shape
    return _HEADER.pack(n, d) + np.ascontiguousarray(pls, dtype="<f4").tobytes()


def load_pls(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise TruncatedFile("descriptor dump shorter than its header")
    n, d = _HEADER.unpack_from(data)
    body = memoryview(data)[_HEADER.size:]
    if len(body) != 4 * n * d:
        raise TruncatedFile(f"descriptor dump holds {len(body)} bytes, expected {4 * n * d}")
    return np.frombuffer(body, dtype="<f4").reshape(n, d).astype(np.float32)


def save_pls(path: str | Path, pls: np.ndarray) -> None:
    Path(path).write_bytes(dump_pls(pls))
