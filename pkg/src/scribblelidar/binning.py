"""Transverse-plane binning: range annuli for pseudo-label balancing and
multi-resolution cylindrical sectors for the semantic-context descriptor.

All kernels are vectorized over points.  ``atan2(0, 0)`` is taken as 0, so a
point on the sensor axis falls in radial cell 0 and the middle azimuth cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import PointCloud
from .errors import DegenerateRange, EmptyFrame

DEFAULT_ANNULI = 10
DEFAULT_RESOLUTIONS = ((20, 40), (40, 80), (80, 120))
DEFAULT_PLS_RANGE = 50.0


def _planar_range(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1)
    return np.hypot(pts[:, 0], pts[:, 1])


@dataclass(frozen=True)
class AnnulusSpec:
    R: int
    B: float

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("annulus count R must be >= 1")
        if not self.B > 0:
            raise DegenerateRange(f"annulus width must be positive, got {self.B}")


def annulus_width(cloud: PointCloud | np.ndarray, R: int = DEFAULT_ANNULI) -> AnnulusSpec:
    """Annulus width ``B = max planar range / R`` of a single frame.

    Raises:
        EmptyFrame: the frame has no points.
        DegenerateRange: every point lies on the sensor axis.
    """
    rng = cloud.planar_range() if isinstance(cloud, PointCloud) else _planar_range(cloud)
    if rng.size == 0:
        raise EmptyFrame("cannot size annuli for an empty frame")
    far = float(rng.max())
    if far <= 0.0:
        raise DegenerateRange("all points lie on the sensor axis; annulus width would be 0")
    return AnnulusSpec(R, far / R)


def annulus_index(points, spec: AnnulusSpec) -> np.ndarray:
    """``min(floor(range / B), R - 1)`` for each point (``(N, >=2)`` or a single point)."""
    if isinstance(points, PointCloud):
        points = points.points
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    rng = _planar_range(pts)
    idx = np.minimum(np.floor(rng / spec.B), spec.R - 1).astype(np.int64)
    return idx[0] if single else idx


@dataclass(frozen=True)
class CylGridSpec:
    """Cylindrical sector grids, one ``(n_radial, n_azimuth)`` pair per level."""

    resolutions: tuple[tuple[int, int], ...] = DEFAULT_RESOLUTIONS
    r_max: float = DEFAULT_PLS_RANGE

    def __post_init__(self):
        res = tuple((int(a), int(b)) for a, b in self.resolutions)
        if not res:
            raise ValueError("at least one resolution is required")
        if any(a < 1 or b < 1 for a, b in res):
            raise ValueError("bin counts must be >= 1")
        totals = [a * b for a, b in res]
        if any(t1 >= t2 for t1, t2 in zip(totals, totals[1:])):
            raise ValueError("resolutions must strictly increase in total bin count")
        if not self.r_max > 0:
            raise ValueError("r_max must be positive")
        object.__setattr__(self, "resolutions", res)

    @property
    def levels(self) -> int:
        return len(self.resolutions)

    def cells(self, level: int) -> int:
        n_r, n_phi = self.resolutions[level]
        return n_r * n_phi


@dataclass(frozen=True)
class BinIndex:
    level: int
    cell: int


def cyl_cells(points, grid: CylGridSpec, level: int) -> tuple[np.ndarray, np.ndarray]:
    """Radial and azimuthal cell of every point at one level."""
    n_r, n_phi = grid.resolutions[level]
    if isinstance(points, PointCloud):
        points = points.points
    pts = np.asarray(points, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    rng = np.hypot(x, y)
    radial = np.minimum(np.floor(rng * n_r / grid.r_max), n_r - 1).astype(np.int64)
    phi = np.arctan2(y, x) + math.pi
    azim = np.minimum(np.floor(phi * n_phi / (2.0 * math.pi)), n_phi - 1).astype(np.int64)
    return radial, azim


def cyl_flat_index(points, grid: CylGridSpec, level: int) -> np.ndarray:
    """Row-major (radial-major) flattened cell index of every point."""
    radial, azim = cyl_cells(points, grid, level)
    return radial * grid.resolutions[level][1] + azim


def cyl_bin_index(point, grid: CylGridSpec, level: int) -> BinIndex:
    if not 0 <= level < grid.levels:
        raise IndexError(f"level {level} outside 0..{grid.levels - 1}")
    p = np.asarray(point, dtype=np.float64).reshape(1, -1)
    return BinIndex(level, int(cyl_flat_index(p, grid, level)[0]))
