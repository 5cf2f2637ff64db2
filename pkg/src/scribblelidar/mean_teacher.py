"""Mean-teacher training with a partial consistency loss.

The student is fitted by SGD with momentum on hard cross-entropy over labeled
points (scribbles, plus pseudo-labels when present) and a soft cross-entropy
against the teacher's prediction on the remaining unlabeled points.  The
teacher is an exponential moving average of the student and receives the clean
frame, while the student sees an augmented copy.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import PointCloud
from .crb import FramePseudoLabels, merge_labels
from .errors import DivergenceDetected, EmptyMask, ShapeMismatch, TruncatedFile
from .model import ModelParams, backward, init_params, logits_and_cache, softmax
from .pls import PlsConfig, pls_descriptors

log = logging.getLogger(__name__)

_TINY = np.finfo(np.float64).tiny


# -- losses -------------------------------------------------------------------


def supervised_loss(pred: np.ndarray, labels, mask) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over ``mask`` and its gradient wrt the logits.

    Raises:
        EmptyMask: no point is selected.
    """
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(labels)
    mask = np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise EmptyMask("no labeled point in frame")
    cls = labels[idx].astype(np.int64) - 1
    if np.any(cls < 0):
        raise ValueError("mask selects unlabeled points")
    p_true = pred[idx, cls]
    loss = float(-np.log(np.maximum(p_true, _TINY)).mean())
    grad = np.zeros_like(pred)
    grad[idx] = pred[idx]
    grad[idx, cls] -= 1.0
    grad[idx] /= idx.size
    return loss, grad


def consistency_loss(student: np.ndarray, teacher: np.ndarray, mask) -> tuple[float, np.ndarray]:
    """Mean soft cross-entropy ``-sum_c t_c log s_c`` over ``mask``.

    The teacher is a constant target, so the gradient wrt the student logits is
    ``(s - t) / |mask|`` on masked rows and zero elsewhere.
    """
    student = np.asarray(student, dtype=np.float64)
    teacher = np.asarray(teacher, dtype=np.float64)
    if student.shape != teacher.shape:
        raise ShapeMismatch(f"student {student.shape} vs teacher {teacher.shape}")
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if idx.size == 0:
        raise EmptyMask("no unlabeled point in frame")
    s, t = student[idx], teacher[idx]
    loss = float(-(t * np.log(np.maximum(s, _TINY))).sum(axis=1).mean())
    grad = np.zeros_like(student)
    grad[idx] = (s - t) / idx.size
    return loss, grad


def combined_step_loss(pred_s, pred_t, labels, pseudo: FramePseudoLabels | None = None,
                       weight: float = 1.0, soft_mask=None):
    """Hard cross-entropy on scribbles and pseudo-labels, consistency on the rest.

    Both terms are averaged within their own point sets and summed, the
    consistency term scaled by ``weight``; an empty set contributes nothing.
    ``soft_mask`` restricts the consistency set further (default: every point
    without a hard label).  ``pred_t`` may be ``None`` when every point is
    labeled.  Returns ``(loss, grad_logits, hard_loss, soft_loss)``.
    """
    target = merge_labels(labels, pseudo) if pseudo is not None else np.asarray(labels)
    hard = target != 0
    grad = np.zeros_like(np.asarray(pred_s, dtype=np.float64))
    hard_loss = soft_loss = 0.0
    if hard.any():
        hard_loss, g = supervised_loss(pred_s, target, hard)
        grad += g
    soft = ~hard if soft_mask is None else ~hard & np.asarray(soft_mask, dtype=bool)
    if soft.any() and pred_t is not None and weight > 0:
        soft_loss, g = consistency_loss(pred_s, pred_t, soft)
        grad += weight * g
    return hard_loss + weight * soft_loss, grad, hard_loss, soft_loss


def entropy(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return -(p * np.log(np.maximum(p, _TINY))).sum(axis=1)


# -- mean teacher ---------------------------------------------------------------


@dataclass
class TeacherStudent:
    student: ModelParams
    teacher: ModelParams
    alpha: float = 0.99
    t: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if not self.student.same_shape(self.teacher):
            raise ShapeMismatch("teacher and student architectures differ")

    @classmethod
    def create(cls, d: int, C: int, hidden=(64, 64), alpha: float = 0.99, seed: int = 0) -> "TeacherStudent":
        student = init_params(d, C, hidden, seed)
        return cls(student, student.copy(), alpha, 0)

    def copy(self) -> "TeacherStudent":
        return TeacherStudent(self.student.copy(), self.teacher.copy(), self.alpha, self.t)


def ema_update(ts: TeacherStudent) -> TeacherStudent:
    """``teacher <- alpha * teacher + (1 - alpha) * student``; advances ``t``."""
    a = ts.alpha
    teacher = ModelParams(
        [a * tw + (1.0 - a) * sw for tw, sw in zip(ts.teacher.weights, ts.student.weights)],
        [a * tb + (1.0 - a) * sb for tb, sb in zip(ts.teacher.biases, ts.student.biases)],
    )
    return TeacherStudent(ts.student, teacher, a, ts.t + 1)


# -- augmentation ---------------------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    rotation: tuple[float, float] = (0.0, 2.0 * math.pi)
    translation: tuple[float, float, float] = (0.5, 0.5, 0.5)
    flip_prob: float = 0.5
    noise_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        trans = self.translation
        if np.ndim(trans) == 0:
            trans = (float(trans),) * 3
        object.__setattr__(self, "translation", tuple(float(v) for v in trans))
        object.__setattr__(self, "rotation", tuple(float(v) for v in self.rotation))
        if self.rotation[1] < self.rotation[0] or min(self.translation) < 0 or self.noise_std < 0:
            raise ValueError("augmentation ranges must be non-negative")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip probability must lie in [0, 1]")

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(rotation=(0.0, 0.0), translation=(0.0, 0.0, 0.0), flip_prob=0.0, noise_std=0.0)


def augment_xyz(xyz: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Global z-rotation, translation, planar flips, then per-coordinate jitter."""
    xyz = np.asarray(xyz, dtype=np.float64)
    lo, hi = cfg.rotation
    theta = rng.uniform(lo, hi) if hi > lo else lo
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    shift = np.array([rng.uniform(-t, t) if t > 0 else 0.0 for t in cfg.translation])
    flips = rng.random(2) < cfg.flip_prob
    out = xyz @ rot.T + shift
    out[:, 0] *= -1.0 if flips[0] else 1.0
    out[:, 1] *= -1.0 if flips[1] else 1.0
    if cfg.noise_std > 0:
        out += rng.normal(0.0, cfg.noise_std, size=out.shape)
    return out


def augment_student(cloud: PointCloud, cfg: AugmentConfig, rng: np.random.Generator) -> PointCloud:
    """Heavily augmented copy of ``cloud`` for the student; intensity untouched."""
    xyz = augment_xyz(cloud.xyz, cfg, rng)
    return PointCloud(np.column_stack([xyz, cloud.intensity]), cloud.frame_id)


# -- features -------------------------------------------------------------------


def point_features(xyz: np.ndarray, intensity: np.ndarray, extra: np.ndarray | None = None,
                   coord_scale: float | Sequence[float] = 1.0) -> np.ndarray:
    """Model input ``(x, y, z) / coord_scale, I`` optionally followed by ``extra`` columns.

    ``coord_scale`` is one divisor for all axes or one per axis.
    """
    scale = np.asarray(coord_scale, dtype=np.float64)
    cols = [np.asarray(xyz, dtype=np.float64) / scale, np.asarray(intensity, dtype=np.float64)[:, None]]
    if extra is not None:
        cols.append(np.asarray(extra, dtype=np.float64))
    return np.hstack(cols)


# -- training -------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    lr: float = 0.05
    momentum: float = 0.9
    batch_frames: int = 1
    seed: int = 0
    consistency: bool = True
    points_per_step: int | None = None
    coord_scale: float | tuple[float, float, float] = (25.0, 25.0, 1.0)
    consistency_weight: float = 1.0
    rampup_epochs: int = 0
    pls_holdout: float | tuple[float, float] = 0.0

    def __post_init__(self):
        if self.epochs < 0 or not self.lr > 0:
            raise ValueError("epochs must be >= 0 and learning rate positive")
        if self.batch_frames != 1:
            raise ValueError("only one frame per optimizer step is supported")
        if isinstance(self.pls_holdout, (list, tuple)):
            lo, hi = (float(v) for v in self.pls_holdout)
            if not 0 < lo <= hi:
                raise ValueError("holdout block range must satisfy 0 < lo <= hi")
            object.__setattr__(self, "pls_holdout", (lo, hi))
        if self.consistency_weight < 0 or self.rampup_epochs < 0 or self._holdout_lo() < 0:
            raise ValueError("consistency weight, ramp-up length and holdout block must be non-negative")

    def _holdout_lo(self) -> float:
        h = self.pls_holdout
        return h[0] if isinstance(h, tuple) else h

    def consistency_at(self, epoch: int) -> float:
        """Consistency weight for ``epoch``: sigmoid ramp ``exp(-5 (1 - t)^2)`` then constant."""
        if not self.consistency:
            return 0.0
        if self.rampup_epochs == 0 or epoch >= self.rampup_epochs:
            return self.consistency_weight
        t = epoch / self.rampup_epochs
        return self.consistency_weight * math.exp(-5.0 * (1.0 - t) ** 2)


@dataclass
class TrainFrame:
    """One training frame: geometry, supervision and optional appended features."""

    cloud: PointCloud
    labels: np.ndarray
    pseudo: FramePseudoLabels | None = None
    extra: np.ndarray | None = None
    pls: PlsConfig | None = None  # lets training recompute ``extra`` from a subset of scribbles


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)


def _momentum_step(params: ModelParams, grads: ModelParams, velocity: list[np.ndarray], lr: float, mu: float):
    for p, g, v in zip(params.arrays(), grads.arrays(), velocity):
        v *= mu
        v += g
        p -= lr * v


def holdout_mask(xy: np.ndarray, labeled: np.ndarray, block: float | tuple[float, float],
                 rng: np.random.Generator) -> np.ndarray:
    """Labeled points falling in a random half of ``block``-metre squares (random grid offset).

    A ``(lo, hi)`` pair draws the block size log-uniformly from that range.
    """
    if isinstance(block, tuple):
        block = math.exp(rng.uniform(math.log(block[0]), math.log(block[1])))
    off = rng.uniform(0.0, block, size=2)
    keys = np.floor((np.asarray(xy, dtype=np.float64) + off) / block).astype(np.int64)
    _, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    chosen = rng.random(int(inv.max()) + 1 if inv.size else 0) < 0.5
    return np.asarray(labeled, dtype=bool) & chosen[inv]


def train(frames: Sequence[TrainFrame], ts: TeacherStudent, cfg: TrainConfig,
          aug: AugmentConfig = AugmentConfig(), history: TrainLog | None = None) -> TeacherStudent:
    """Run ``cfg.epochs`` passes of mean-teacher training, one frame per step.

    Randomness (frame order, augmentation, point subsampling) is drawn from a
    single generator seeded by ``(cfg.seed, aug.seed)``.

    With ``cfg.pls_holdout > 0`` and a frame carrying its :class:`PlsConfig`,
    each step recomputes the descriptors without the scribbles of a random
    half of ``pls_holdout``-metre blocks and applies the hard loss to those
    held-out points only.  A supervised point then never finds its own label
    in its descriptor, matching what an unlabeled point sees at inference.

    Raises:
        DivergenceDetected: the loss became NaN or infinite.
    """
    ts = ts.copy()
    rng = np.random.default_rng([cfg.seed, aug.seed])
    velocity = [np.zeros_like(a) for a in ts.student.arrays()]
    for epoch in range(cfg.epochs):
        weight = cfg.consistency_at(epoch)
        order = rng.permutation(len(frames))
        epoch_loss = []
        for fi in order:
            fr = frames[fi]
            n = len(fr.cloud)
            if n == 0:
                continue
            sel = None
            if cfg.points_per_step is not None and n > cfg.points_per_step:
                sel = np.sort(rng.choice(n, cfg.points_per_step, replace=False))
            xyz_s = augment_xyz(fr.cloud.xyz, aug, rng)
            labels = fr.labels if fr.pseudo is None else merge_labels(fr.labels, fr.pseudo)
            xyz_t, inten, extra = fr.cloud.xyz, fr.cloud.intensity, fr.extra
            soft_mask = None
            if fr.pls is not None and cfg._holdout_lo() > 0:
                scribbled = np.asarray(fr.labels) != 0
                held = holdout_mask(fr.cloud.xy, scribbled, cfg.pls_holdout, rng)
                extra = pls_descriptors(fr.cloud, np.where(held, 0, fr.labels), fr.pls)
                soft_mask = labels == 0
                labels = np.where(scribbled & ~held, 0, labels)
            if sel is not None:
                xyz_s, xyz_t, inten, labels = xyz_s[sel], xyz_t[sel], inten[sel], labels[sel]
                extra = None if extra is None else extra[sel]
                soft_mask = None if soft_mask is None else soft_mask[sel]
            x_s = point_features(xyz_s, inten, extra, cfg.coord_scale)
            logits, acts = logits_and_cache(ts.student, x_s)
            p_s = softmax(logits)
            p_t = None
            if weight > 0 and np.any(labels == 0):
                x_t = point_features(xyz_t, inten, extra, cfg.coord_scale)
                p_t = softmax(logits_and_cache(ts.teacher, x_t)[0])
            loss, dlogits, _, _ = combined_step_loss(p_s, p_t, labels, weight=weight, soft_mask=soft_mask)
            if not math.isfinite(loss):
                raise DivergenceDetected(f"loss became {loss} at epoch {epoch}, frame {fr.cloud.frame_id}")
            grads = backward(ts.student, acts, dlogits)
            _momentum_step(ts.student, grads, velocity, cfg.lr, cfg.momentum)
            if not ts.student.is_finite():
                raise DivergenceDetected(f"parameters became non-finite at epoch {epoch}")
            ts = ema_update(ts)
            epoch_loss.append(loss)
        if epoch_loss:
            mean = float(np.mean(epoch_loss))
            log.info("epoch %d: loss %.4f", epoch, mean)
            if history is not None:
                history.losses.append(mean)
    return ts


def predict(params: ModelParams, cloud: PointCloud, extra: np.ndarray | None = None,
            coord_scale: float | Sequence[float] = (25.0, 25.0, 1.0), chunk: int = 65536) -> np.ndarray:
    """Class distribution for every point of ``cloud`` (chunked inference)."""
    x = point_features(cloud.xyz, cloud.intensity, extra, coord_scale)
    if x.shape[1] != params.d:
        raise ShapeMismatch(f"model expects {params.d} features, frame provides {x.shape[1]}")
    out = np.empty((len(x), params.C))
    for start in range(0, len(x), chunk):
        out[start:start + chunk] = softmax(logits_and_cache(params, x[start:start + chunk])[0])
    return out


# -- checkpoint -----------------------------------------------------------------


def dump_checkpoint(ts: TeacherStudent) -> bytes:
    """Header of uint32 ``(n_hidden, d, hidden..., C)``, then float64 student and
    teacher parameters (``W`` row-major then ``b`` per layer), float64 alpha and
    uint64 step count, all little-endian."""
    sizes = ts.student.layer_sizes
    head = struct.pack(f"<{len(sizes) + 1}I", len(sizes) - 2, *sizes)
    body = [np.ascontiguousarray(a, dtype="<f8").tobytes() for m in (ts.student, ts.teacher) for a in m.arrays()]
    return head + b"".join(body) + struct.pack("<dQ", ts.alpha, ts.t)


def load_checkpoint_bytes(data: bytes) -> TeacherStudent:
    if len(data) < 4:
        raise TruncatedFile("checkpoint shorter than its header")
    (n_hidden,) = struct.unpack_from("<I", data)
    n_sizes = n_hidden + 2
    head = 4 * (n_sizes + 1)
    if len(data) < head:
        raise TruncatedFile("checkpoint header truncated")
    sizes = struct.unpack_from(f"<{n_sizes}I", data, 4)
    n_params = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    expected = head + 16 * n_params + 16
    if len(data) != expected:
        raise TruncatedFile(f"checkpoint has {len(data)} bytes, expected {expected}")
    vec = np.frombuffer(data, dtype="<f8", count=2 * n_params, offset=head).astype(np.float64)
    alpha, t = struct.unpack_from("<dQ", data, head + 16 * n_params)
    student = ModelParams.from_flat(vec[:n_params], sizes)
    teacher = ModelParams.from_flat(vec[n_params:], sizes)
    return TeacherStudent(student, teacher, alpha, t)


def save_checkpoint(path: str | Path, ts: TeacherStudent) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(dump_checkpoint(ts))


def load_checkpoint(path: str | Path) -> TeacherStudent:
    return load_checkpoint_bytes(Path(path).read_bytes())
