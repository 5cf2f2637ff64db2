"""Synthetic street scenes with dense ground truth and line scribbles.

A frame is a straight street seen from a sensor near the road centre: road,
sidewalks and terrain bands on the ground, building walls behind them, and
compact objects (cars, poles, people, bushes).  Points are allotted to
one-metre rings in proportion to a ``1 / (1 + range)`` ray density, so far
rings are sparse, and split across classes by iterative proportional fitting
so class totals follow the configured long-tailed weights.  Scribbles are
thickened line segments through region interiors, added until the labeled
fraction reaches the target.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import LABEL_DTYPE, ClassMap, PointCloud
from .errors import UnreachableTarget
from .kitti_io import save_labels, save_points, sequence_dir

GROUND_Z = -1.73
# Domed objects return points from the top DOME_SKIN of their height span only.
DOME_SKIN = 0.25
# Scribbles on compact objects stay within this fraction of the half-extent.
SCRIBBLE_INTERIOR = 0.6

SYNTH_CLASS_MAP = ClassMap(
    names=("car", "person", "road", "sidewalk", "building", "vegetation", "terrain", "pole"),
    raw_to_train={0: 0, 10: 1, 30: 2, 40: 3, 48: 4, 50: 5, 70: 6, 72: 7, 80: 8},
    train_to_raw={0: 0, 1: 10, 2: 30, 3: 40, 4: 48, 5: 50, 6: 70, 7: 72, 8: 80},
)

# Share of points per class, long-tailed, aligned with SYNTH_CLASS_MAP.names.
DEFAULT_WEIGHTS = (0.07, 0.02, 0.30, 0.10, 0.16, 0.18, 0.14, 0.03)

# Per-class uniform intensity ranges (reflectance is otherwise unmodelled).
INTENSITY_RANGES = {
    "car": (0.45, 0.95), "person": (0.05, 0.45), "road": (0.05, 0.35), "sidewalk": (0.2, 0.5),
    "building": (0.2, 0.6), "vegetation": (0.3, 0.7), "terrain": (0.3, 0.6), "pole": (0.3, 0.8),
}


@dataclass(frozen=True)
class SceneConfig:
    weights: tuple[float, ...] = DEFAULT_WEIGHTS
    points_per_frame: int = 12000
    frames: int = 10
    r_min: float = 1.0
    r_max: float = 50.0
    road_half_width: tuple[float, float] = (3.5, 5.5)
    sidewalk_width: tuple[float, float] = (2.0, 3.5)
    building_setback: tuple[float, float] = (1.5, 8.0)
    cars: tuple[int, int] = (4, 9)
    people: tuple[int, int] = (2, 6)
    poles: tuple[int, int] = (4, 8)
    bushes: tuple[int, int] = (4, 9)
    scribble_fraction: float = 0.08
    scribble_half_width: float = 0.25
    seed: int = 0
    class_names: tuple[str, ...] = SYNTH_CLASS_MAP.names

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if any(w <= 0 for w in self.weights):
            raise ValueError("class weights must be positive")
        if len(self.weights) != len(self.class_names):
            raise ValueError("one weight per class is required")
        if not 0.0 < self.scribble_fraction < 1.0:
            raise ValueError("scribble fraction must lie in (0, 1)")
        if not 0 < self.r_min < self.r_max:
            raise ValueError("need 0 < r_min < r_max")

    @property
    def C(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> np.ndarray:
        """Points per class: largest-remainder split of ``points_per_frame``."""
        w = np.asarray(self.weights) / sum(self.weights)
        exact = w * self.points_per_frame
        n = np.floor(exact).astype(np.int64)
        rest = self.points_per_frame - n.sum()
        n[np.argsort(-(exact - n), kind="stable")[:rest]] += 1
        return n

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        for key in ("weights", "class_names", "road_half_width", "sidewalk_width", "building_setback",
                    "cars", "people", "poles", "bushes"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


# -- primitives (street frame: u along the street, v across it) --------------------


@dataclass
class _Primitive:
    cls: str
    kind: str  # "band", "box", "disc"
    params: dict
    z_range: tuple[float, float]
    domed: bool = False  # height falls off towards the footprint edge

    def height_fraction(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Surface height above ``z_range[0]`` as a fraction of the full span."""
        if not self.domed:
            return np.ones_like(u)
        p = self.params
        if self.kind == "disc":
            e = np.hypot(u - p["cu"], v - p["cv"]) / p["rad"]
        else:
            e = np.maximum(np.abs(u - p["cu"]) / p["hu"], np.abs(v - p["cv"]) / p["hv"])
        return np.sqrt(np.clip(1.0 - e ** 4, 0.0, 1.0))

    def contains(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        p = self.params
        if self.kind == "band":
            return (v >= p["v0"]) & (v < p["v1"]) & (u >= p["u0"]) & (u < p["u1"])
        if self.kind == "box":
            return (np.abs(u - p["cu"]) <= p["hu"]) & (np.abs(v - p["cv"]) <= p["hv"])
        return (u - p["cu"]) ** 2 + (v - p["cv"]) ** 2 <= p["rad"] ** 2

    def segments(self, half_width: float, outer: bool = False):
        """Scribble centre-lines ``(u0, v0, u1, v1)``, most interior first.

        ``outer=True`` gives the lines reaching out to the footprint edge that
        compact objects keep in reserve for very high label targets.
        """
        p = self.params
        if self.kind == "band":
            lo, hi = p["v0"] + half_width, p["v1"] - half_width
            if outer or hi < lo:
                return
            # centre, then ever finer lateral offsets
            yield (p["u0"], 0.5 * (lo + hi), p["u1"], 0.5 * (lo + hi))
            for depth in range(1, 8):
                n = 2 ** depth
                for j in range(1, n, 2):
                    v = lo + (hi - lo) * j / n
                    yield (p["u0"], v, p["u1"], v)
        elif self.kind == "box":
            long_u = p["hu"] >= p["hv"]
            k = 1.0 if outer else SCRIBBLE_INTERIOR
            half_long = k * (p["hu"] if long_u else p["hv"])
            half_lat = k * (p["hv"] if long_u else p["hu"])
            centre_lat = p["cv"] if long_u else p["cu"]
            offsets = [0.0, 1.0] if outer else [0.5]
            for depth in range(2, 6):
                offsets += [j / 2 ** depth for j in range(1, 2 ** depth, 2)]
            for f in offsets:
                a = centre_lat + (2.0 * f - 1.0) * half_lat
                if long_u:
                    yield (p["cu"] - half_long, a, p["cu"] + half_long, a)
                else:
                    yield (a, p["cv"] - half_long, a, p["cv"] + half_long)
        elif outer:
            # parallel chords spaced one line width apart
            rad = p["rad"]
            for o in np.linspace(-rad, rad, min(max(3, math.ceil(rad / half_width) + 1), 64)):
                h = math.sqrt(max(rad * rad - o * o, 0.0))
                yield (p["cu"] - h, p["cv"] + o, p["cu"] + h, p["cv"] + o)
        else:
            r = SCRIBBLE_INTERIOR * p["rad"]
            for ang in np.linspace(0.0, math.pi, 9)[:-1]:
                du, dv = r * math.cos(ang), r * math.sin(ang)
                yield (p["cu"] - du, p["cv"] - dv, p["cu"] + du, p["cv"] + dv)


@dataclass
class _Layout:
    yaw: float
    offset: float  # lateral position of the sensor relative to the road centre
    prims: list[_Primitive]

    def to_street(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return c * x + s * y, -s * x + c * y + self.offset

    def to_sensor(self, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        v = v - self.offset
        return c * u - s * v, s * u + c * v


def _layout(cfg: SceneConfig, rng: np.random.Generator) -> _Layout:
    L = cfg.r_max
    yaw = rng.uniform(-0.15, 0.15)
    w_road = rng.uniform(*cfg.road_half_width)
    offset = rng.uniform(-0.4, 0.4) * w_road
    prims: list[_Primitive] = []
    g = GROUND_Z
    prims.append(_Primitive("road", "band", dict(u0=-L, u1=L, v0=-w_road, v1=w_road), (g, g)))
    edges = {}
    for side in (-1, 1):
        w_side = rng.uniform(*cfg.sidewalk_width)
        inner, outer = w_road, w_road + w_side
        v0, v1 = (inner, outer) if side > 0 else (-outer, -inner)
        prims.append(_Primitive("sidewalk", "band", dict(u0=-L, u1=L, v0=v0, v1=v1), (g + 0.15, g + 0.15)))
        edges[side] = outer
        t0, t1 = (outer, L) if side > 0 else (-L, -outer)
        prims.append(_Primitive("terrain", "band", dict(u0=-L, u1=L, v0=t0, v1=t1), (g + 0.05, g + 0.05)))
        # building walls: slabs parallel to the street with gaps between them
        setback = outer + rng.uniform(*cfg.building_setback)
        u = -L
        while u < L:
            length = rng.uniform(8.0, 25.0)
            height = rng.uniform(4.0, 10.0)
            depth = 0.6
            cv = side * (setback + depth / 2)
            prims.append(_Primitive("building", "box",
                                    dict(cu=u + length / 2, hu=length / 2, cv=cv, hv=depth / 2), (g, g + height)))
            u += length + rng.uniform(3.0, 10.0)
    for _ in range(rng.integers(cfg.cars[0], cfg.cars[1] + 1)):
        lane = rng.choice([-1, 1]) * w_road * rng.uniform(0.3, 0.6)
        prims.append(_Primitive("car", "box", dict(cu=rng.uniform(-0.8 * L, 0.8 * L), hu=2.1, cv=lane, hv=0.9),
                                (g + 0.3, g + 1.5), domed=True))
    for _ in range(rng.integers(cfg.people[0], cfg.people[1] + 1)):
        side = rng.choice([-1, 1])
        cv = side * (w_road + 0.5 * (edges[side] - w_road))
        prims.append(_Primitive("person", "disc", dict(cu=rng.uniform(-0.6 * L, 0.6 * L), cv=cv, rad=0.3),
                                (g + 0.15, g + 1.75)))
    for _ in range(rng.integers(cfg.poles[0], cfg.poles[1] + 1)):
        side = rng.choice([-1, 1])
        prims.append(_Primitive("pole", "disc", dict(cu=rng.uniform(-0.9 * L, 0.9 * L), cv=side * (edges[side] - 0.3),
                                                     rad=0.15), (g + 0.15, g + rng.uniform(4.0, 7.0))))
    for _ in range(rng.integers(cfg.bushes[0], cfg.bushes[1] + 1)):
        side = rng.choice([-1, 1])
        rad = rng.uniform(1.0, 2.5)
        cv = side * (edges[side] + rad + rng.uniform(0.5, 6.0))
        prims.append(_Primitive("vegetation", "disc", dict(cu=rng.uniform(-0.9 * L, 0.9 * L), cv=cv, rad=rad),
                                (g + 0.1, g + rng.uniform(0.8, 3.0)), domed=True))
    # Classes outside the street vocabulary cover the whole plane.
    known = {p.cls for p in prims}
    for name in cfg.class_names:
        if name not in known:
            prims.append(_Primitive(name, "band", dict(u0=-2 * L, u1=2 * L, v0=-2 * L, v1=2 * L), (g, g + 2.0)))
    prims = [p for p in prims if p.cls in cfg.class_names]
    return _Layout(yaw, offset, prims)


# Polar grid used to locate class regions: rings of RING_WIDTH metres, each split
# into GRID_R sub-rows and GRID_PHI azimuth columns.
RING_WIDTH = 1.0
GRID_R = 4
GRID_PHI = 2048


@dataclass
class _PolarGrid:
    r: np.ndarray  # (rings, GRID_R) sub-row centres
    phi: np.ndarray  # (GRID_PHI,) column centres
    dr: float
    dphi: float
    edges: np.ndarray  # (rings + 1,) ring boundaries


def _polar_grid(cfg: SceneConfig) -> _PolarGrid:
    edges = np.arange(cfg.r_min, cfg.r_max, RING_WIDTH)
    edges = np.append(edges, cfg.r_max)
    dr = RING_WIDTH / GRID_R
    r = edges[:-1, None] + dr * (np.arange(GRID_R) + 0.5)
    r = np.minimum(r, cfg.r_max - dr / 2)
    dphi = 2 * math.pi / GRID_PHI
    phi = -math.pi + dphi * (np.arange(GRID_PHI) + 0.5)
    return _PolarGrid(r, phi, dr, dphi, edges)


def _ring_targets(edges: np.ndarray, n: int) -> np.ndarray:
    """Points per ring under a ``1 / (1 + r)`` ray density, largest-remainder rounded."""
    mass = np.diff(np.log1p(edges))
    exact = n * mass / mass.sum()
    out = np.floor(exact).astype(np.int64)
    out[np.argsort(-(exact - out), kind="stable")[: n - out.sum()]] += 1
    return out


def _fit_allocation(K: np.ndarray, rows: np.ndarray, cols: np.ndarray, iters: int = 500) -> np.ndarray:
    """Integer ``(C, rings)`` counts near ``rows``/``cols`` marginals with support of ``K``.

    Iterative proportional fitting, then per-ring largest-remainder rounding so
    ring totals are exact.  Rounding drift in the class totals is repaired by
    moving single points between classes inside a shared ring.
    """
    X = K.astype(np.float64).copy()
    for _ in range(iters):
        rs = X.sum(axis=1)
        X *= np.divide(rows, rs, out=np.zeros_like(rs), where=rs > 0)[:, None]
        cs = X.sum(axis=0)
        X *= np.divide(cols, cs, out=np.zeros_like(cs), where=cs > 0)[None, :]
    out = np.floor(X).astype(np.int64)
    for j in range(X.shape[1]):
        rest = int(cols[j] - out[:, j].sum())
        if rest > 0:
            frac = np.where(K[:, j] > 0, X[:, j] - out[:, j], -1.0)
            out[np.argsort(-frac, kind="stable")[:rest], j] += 1
    resid = X - out
    while True:
        diff = out.sum(axis=1) - rows
        a, b = int(np.argmax(diff)), int(np.argmin(diff))
        if diff[a] <= 0 or diff[b] >= 0:
            break
        ok = (out[a] > 0) & (K[b] > 0)
        if not ok.any():
            break
        # the move that strays least from the fitted real-valued solution
        j = int(np.argmax(np.where(ok, resid[b] - resid[a], -np.inf)))
        out[a, j] -= 1
        out[b, j] += 1
        resid[a, j] += 1.0
        resid[b, j] -= 1.0
    return out


def _class_cells(layout: _Layout, grid: _PolarGrid, names: tuple[str, ...]) -> np.ndarray:
    """Owning primitive of every grid cell per class, ``-1`` outside the class."""
    rr = grid.r.reshape(-1)[:, None]
    x, y = rr * np.cos(grid.phi)[None, :], rr * np.sin(grid.phi)[None, :]
    u, v = layout.to_street(x, y)
    owner = np.full((len(names),) + u.shape, -1, dtype=np.int64)
    for i, prim in enumerate(layout.prims):
        ci = names.index(prim.cls)
        inside = prim.contains(u, v) & (owner[ci] < 0)
        owner[ci][inside] = i
    return owner.reshape(len(names), grid.r.shape[0], GRID_R, grid.phi.size)


def _sample_cells(layout: _Layout, grid: _PolarGrid, owner: np.ndarray, ring: int, n: int,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``n`` points of one class inside one ring: (x, y, owning primitive)."""
    sub, col = np.nonzero(owner >= 0)
    r0 = grid.r[ring, sub]
    w = 1.0 / (1.0 + r0)
    pick = rng.choice(sub.size, size=n, p=w / w.sum())
    r_c, phi_c, prim = r0[pick], grid.phi[col[pick]], owner[sub[pick], col[pick]]
    r = r_c + grid.dr * (rng.random(n) - 0.5)
    phi = phi_c + grid.dphi * (rng.random(n) - 0.5)
    x, y = r * np.cos(phi), r * np.sin(phi)
    u, v = layout.to_street(x, y)
    ok = np.zeros(n, dtype=bool)
    for p in np.unique(prim):
        sel = prim == p
        ok[sel] = layout.prims[p].contains(u[sel], v[sel])
    # Jitter that leaves the primitive falls back to the cell centre, which is inside.
    x = np.where(ok, x, r_c * np.cos(phi_c))
    y = np.where(ok, y, r_c * np.sin(phi_c))
    return x, y, prim


def _sample_z(layout: _Layout, prim: np.ndarray, x: np.ndarray, y: np.ndarray,
              rng: np.random.Generator) -> np.ndarray:
    """Heights: uniform over a column, or within the top skin of a domed surface."""
    u, v = layout.to_street(x, y)
    z = np.empty(len(prim))
    draw = rng.random(len(prim))
    for p in np.unique(prim):
        sel = prim == p
        pr = layout.prims[p]
        lo, hi = pr.z_range
        top = pr.height_fraction(u[sel], v[sel])
        bottom = np.maximum(top - DOME_SKIN, 0.0) if pr.domed else np.zeros_like(top)
        z[sel] = lo + (hi - lo) * (bottom + (top - bottom) * draw[sel])
    return z


def _frame_rng(cfg: SceneConfig, frame_id: int, stream: int, sequence: int = 0) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, sequence, frame_id, stream])


@dataclass
class Scene:
    cloud: PointCloud
    labels: np.ndarray
    instances: np.ndarray
    layout: _Layout
    sequence: int = 0


def generate_scene_full(cfg: SceneConfig, frame_id: int = 0, sequence: int = 0) -> Scene:
    rng = _frame_rng(cfg, frame_id, 0, sequence)
    layout = _layout(cfg, rng)
    grid = _polar_grid(cfg)
    owner = _class_cells(layout, grid, cfg.class_names)
    weight = (1.0 / (1.0 + grid.r))[None, :, :, None]
    K = ((owner >= 0) * weight).sum(axis=(2, 3))
    counts = cfg.class_counts()
    for ci, name in enumerate(cfg.class_names):
        if counts[ci] and not K[ci].any():
            raise UnreachableTarget(f"scene layout has no region for class {name}")
    alloc = _fit_allocation(K, counts, _ring_targets(grid.edges, cfg.points_per_frame))
    xs, ys, zs, inten, labels, inst = [], [], [], [], [], []
    for ci, name in enumerate(cfg.class_names):
        lo, hi = INTENSITY_RANGES.get(name, (0.0, 1.0))
        for j in np.flatnonzero(alloc[ci]):
            n = int(alloc[ci, j])
            x, y, prim = _sample_cells(layout, grid, owner[ci, j], int(j), n, rng)
            zs.append(_sample_z(layout, prim, x, y, rng))
            xs.append(x)
            ys.append(y)
            inten.append(lo + (hi - lo) * rng.random(n))
            labels.append(np.full(n, ci + 1, dtype=LABEL_DTYPE))
            inst.append(prim)
    if xs:
        data = np.column_stack([np.concatenate(a) for a in (xs, ys, zs, inten)])
    else:
        data = np.zeros((0, 4))
    data[:, 2] += rng.normal(0.0, 0.02, size=len(data))
    lab = np.concatenate(labels) if labels else np.zeros(0, LABEL_DTYPE)
    ins = np.concatenate(inst) if inst else np.zeros(0, np.int64)
    # Shuffle so point order carries no class information.
    perm = rng.permutation(len(data))
    return Scene(PointCloud(data[perm], frame_id), lab[perm], ins[perm], layout, sequence)


def generate_scene(cfg: SceneConfig, frame_id: int = 0, sequence: int = 0) -> tuple[PointCloud, np.ndarray]:
    """Point cloud and dense labels of one frame, deterministic per ``(seed, sequence, frame_id)``."""
    scene = generate_scene_full(cfg, frame_id, sequence)
    return scene.cloud, scene.labels


def _segment_distance(u, v, seg) -> tuple[np.ndarray, np.ndarray]:
    """Distance to a segment and the normalized position of the foot point."""
    u0, v0, u1, v1 = seg
    du, dv = u1 - u0, v1 - v0
    length2 = du * du + dv * dv
    t = np.clip(((u - u0) * du + (v - v0) * dv) / length2, 0.0, 1.0) if length2 > 0 else np.zeros_like(u)
    return np.hypot(u - (u0 + t * du), v - (v0 + t * dv)), t


def generate_scribbles(scene: Scene, cfg: SceneConfig, target: float | None = None) -> np.ndarray:
    """Line-scribble labels for a generated scene.

    Every region instance (a car, a wall, a sidewalk band, ...) gets a point
    budget proportional to its size.  Its scribble lines, central one first,
    label the instance's points within ``scribble_half_width`` of the line;
    the line that would overrun the budget is shortened from one end.  Any
    shortfall is then taken from instances that still have unused lines, and
    only once those run out from lines reaching the edges of compact objects.

    Raises:
        UnreachableTarget: all candidate lines are exhausted below
            ``0.9 * target`` of the points.
    """
    target = cfg.scribble_fraction if target is None else target
    n = len(scene.cloud)
    out = np.zeros(n, dtype=LABEL_DTYPE)
    if n == 0:
        return out
    goal = int(round(target * n))
    rng = _frame_rng(cfg, scene.cloud.frame_id, 1, scene.sequence)
    x, y = scene.cloud.points[:, 0].astype(np.float64), scene.cloud.points[:, 1].astype(np.float64)
    u, v = scene.layout.to_street(x, y)
    prim_ids = np.unique(scene.instances)
    members = {int(i): np.flatnonzero(scene.instances == i) for i in prim_ids}
    sizes = np.array([members[int(i)].size for i in prim_ids], dtype=np.float64)
    exact = sizes * goal / sizes.sum()
    budget = np.floor(exact).astype(np.int64)
    budget[np.argsort(-(exact - budget), kind="stable")[: goal - budget.sum()]] += 1
    gens = {int(i): scene.layout.prims[int(i)].segments(cfg.scribble_half_width) for i in prim_ids}

    def draw(i: int, quota: int) -> int:
        """Label up to ``quota`` more points of instance ``i``; returns how many."""
        done = 0
        while done < quota:
            seg = next(gens[i], None)
            if seg is None:
                break
            idx = members[i]
            idx = idx[out[idx] == 0]
            d, t = _segment_distance(u[idx], v[idx], seg)
            hit = d <= cfg.scribble_half_width
            new, pos = idx[hit], t[hit]
            if new.size > quota - done:
                # shorten the line, keeping the part from one (random) end
                if rng.random() < 0.5:
                    pos = 1.0 - pos
                new = new[np.argsort(pos, kind="stable")[: quota - done]]
            out[new] = scene.labels[new]
            done += new.size
        return done

    labeled = 0
    for i, b in zip(prim_ids, budget):
        labeled += draw(int(i), int(b))
    # Shortfall: largest instances first, interior lines before edge-reaching ones.
    by_size = prim_ids[np.argsort(-sizes, kind="stable")]
    for i in by_size:
        if labeled >= goal:
            break
        labeled += draw(int(i), goal - labeled)
    for i in by_size:
        if labeled >= goal:
            break
        gens[int(i)] = scene.layout.prims[int(i)].segments(cfg.scribble_half_width, outer=True)
        labeled += draw(int(i), goal - labeled)
    if labeled < 0.9 * target * n:
        raise UnreachableTarget(f"scribbles reach only {labeled / n:.4f} of the points, target {target:.4f}")
    return out


# -- datasets -----------------------------------------------------------------------


def scene_class_map(cfg: SceneConfig) -> ClassMap:
    """Identity raw ids ``1..C`` for custom class lists."""
    ids = range(cfg.C + 1)
    return ClassMap(cfg.class_names, {i: i for i in ids}, {i: i for i in ids})


def generate_dataset(root: str | Path, cfg: SceneConfig, sequences=("00",), frames_per_sequence=None,
                     class_map: ClassMap | None = None) -> dict:
    """Write a SemanticKITTI-style synthetic dataset.

    Each sequence gets ``velodyne/*.bin``, ``scribbles/*.label`` and dense
    ``labels/*.label``; ``synth_manifest.json`` and ``class_map.json`` are
    written at the root.  Returns the manifest.
    """
    root = Path(root)
    frames_per_sequence = frames_per_sequence or {}
    if class_map is None:
        class_map = SYNTH_CLASS_MAP if cfg.class_names == SYNTH_CLASS_MAP.names else scene_class_map(cfg)
    for si, seq in enumerate(sequences):
        n_frames = int(frames_per_sequence.get(seq, cfg.frames))
        d = sequence_dir(root, seq)
        for f in range(n_frames):
            scene = generate_scene_full(cfg, f, si)
            scrib = generate_scribbles(scene, cfg)
            stem = f"{f:06d}"
            save_points(d / "velodyne" / f"{stem}.bin", scene.cloud)
            save_labels(d / "labels" / f"{stem}.label", scene.labels, class_map)
            save_labels(d / "scribbles" / f"{stem}.label", scrib, class_map)
    manifest = {
        "seed": cfg.seed,
        "sequences": list(sequences),
        "frames": {s: int(frames_per_sequence.get(s, cfg.frames)) for s in sequences},
        "scene": cfg.to_dict(),
    }
    root.mkdir(parents=True, exist_ok=True)
    (root / "synth_manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    class_map.save(root / "class_map.json")
    return manifest
