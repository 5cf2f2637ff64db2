"""Three-stage pipeline: training with descriptors, pseudo-labeling, distillation.

Every stage reads a :class:`PipelineConfig`, writes its artifacts into an output
directory and returns a dictionary of metrics.  Outputs depend only on the
inputs, the config and its seeds.
"""

from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import crb as crb_mod
from .binning import DEFAULT_RESOLUTIONS, CylGridSpec
from .core import SEMANTIC_KITTI, ClassMap, PointCloud, split_supervision, validate_frame
from .errors import ConfigError, ShapeMismatch
from .kitti_io import load_labels, load_points, save_labels, scan_sequence, sequence_dir
from .mean_teacher import (
    AugmentConfig,
    TeacherStudent,
    TrainConfig,
    TrainFrame,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from .metrics import (
    ConfusionMatrix,
    confusion,
    distribution,
    distribution_report,
    pseudo_label_accuracy,
    segmentation_report,
    write_report,
)
from .pls import PlsConfig, pls_descriptors
from .synth import SYNTH_CLASS_MAP, SceneConfig, generate_dataset

log = logging.getLogger(__name__)

RAW_DIM = 4

DEFAULT_CONFIG: dict[str, Any] = {
    "data_root": "data",
    "train_sequences": ["00"],
    "val_sequences": ["08"],
    "scribble_dir": "scribbles",
    "label_dir": "labels",
    "class_map": "class_map.json",
    "seed": 0,
    "workers": 1,
    "pls": {"resolutions": [list(r) for r in DEFAULT_RESOLUTIONS], "r_max": 50.0},
    "model": {"hidden": [64, 64], "alpha": 0.99, "coord_scale": [25.0, 25.0, 1.0]},
    "augment": {"rotation": [0.0, 6.283185307179586], "translation": [0.5, 0.5, 0.5],
                "flip_prob": 0.5, "noise_std": 0.02, "seed": None},
    "train": {"epochs": 10, "lr": 0.05, "momentum": 0.9, "seed": None, "consistency": True,
              "use_pls": True, "points_per_step": None, "pls_holdout": 2.0},
    "crb": {"strategy": "crb", "beta": 0.5, "R": 10, "tau": 0.9, "global_range": False, "rounds": 1},
    "distill": {"epochs": 10, "lr": 0.05, "momentum": 0.9, "seed": None, "consistency": True,
                "points_per_step": None, "init_from_checkpoint": False},
    "synth": {"train_frames": 10, "val_frames": 4},
}


def _deep_update(base: dict, over: Mapping) -> dict:
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = copy.deepcopy(v)
    return base


@dataclass
class PipelineConfig:
    """Parsed JSON configuration; relative paths resolve against ``base_dir``."""

    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG))
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: Mapping | None = None) -> "PipelineConfig":
        raw = copy.deepcopy(DEFAULT_CONFIG)
        base = Path.cwd()
        if path is not None:
            path = Path(path)
            try:
                doc = json.loads(path.read_text())
            except FileNotFoundError as exc:
                raise ConfigError(f"config file {path} not found") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
            if not isinstance(doc, dict):
                raise ConfigError(f"{path}: top level must be an object")
            _deep_update(raw, doc)
            base = path.resolve().parent
        if overrides:
            _deep_update(raw, overrides)
        cfg = cls(raw, base)
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=1, sort_keys=True) + "\n"

    def __getitem__(self, key):
        return self.raw[key]

    def validate(self) -> None:
        beta = self.raw["crb"]["beta"]
        if not (isinstance(beta, (int, float)) and 0 < beta <= 1):
            raise ConfigError(f"crb.beta must lie in (0, 1], got {beta!r}")
        if self.raw["crb"]["strategy"] not in crb_mod.STRATEGIES:
            raise ConfigError(f"crb.strategy must be one of {crb_mod.STRATEGIES}")
        if int(self.raw["crb"]["R"]) < 1:
            raise ConfigError("crb.R must be >= 1")
        if int(self.raw["crb"].get("rounds", 1)) < 1:
            raise ConfigError("crb.rounds must be >= 1")

    # -- derived objects -----------------------------------------------------------

    def path(self, key_or_path: str | Path) -> Path:
        p = Path(self.raw.get(key_or_path, key_or_path)) if isinstance(key_or_path, str) else Path(key_or_path)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def data_root(self) -> Path:
        return self.path("data_root")

    def class_map(self) -> ClassMap:
        ref = self.raw["class_map"]
        if ref == "semantickitti":
            return SEMANTIC_KITTI
        if ref == "synthetic":
            return SYNTH_CLASS_MAP
        p = Path(ref)
        if not p.is_absolute():
            p = self.data_root / p if (self.data_root / p).exists() else self.base_dir / p
        if not p.exists():
            raise ConfigError(f"class_map: file {p} not found")
        return ClassMap.load(p)

    def pls_config(self, C: int) -> PlsConfig:
        sec = self.raw["pls"]
        try:
            grid = CylGridSpec(tuple(tuple(r) for r in sec["resolutions"]), float(sec["r_max"]))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"pls: {exc}") from exc
        return PlsConfig(grid, C)

    @property
    def coord_scale(self) -> float | tuple[float, ...]:
        v = self.raw["model"]["coord_scale"]
        return tuple(float(x) for x in v) if isinstance(v, (list, tuple)) else float(v)

    def seed_for(self, section: str) -> int:
        s = self.raw.get(section, {}).get("seed")
        return int(self.raw["seed"] if s is None else s)

    def augment_config(self, stage: str) -> AugmentConfig:
        sec = self.raw["augment"]
        try:
            return AugmentConfig(
                rotation=tuple(sec["rotation"]), translation=tuple(sec["translation"]),
                flip_prob=float(sec["flip_prob"]), noise_std=float(sec["noise_std"]),
                seed=self.seed_for("augment") if sec.get("seed") is not None else self.seed_for(stage),
            )
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"augment: {exc}") from exc

    def train_config(self, stage: str) -> TrainConfig:
        sec = self.raw[stage]
        try:
            return TrainConfig(
                epochs=int(sec["epochs"]), lr=float(sec["lr"]), momentum=float(sec["momentum"]),
                seed=self.seed_for(stage), consistency=bool(sec.get("consistency", True)),
                points_per_step=sec.get("points_per_step"),
                coord_scale=self.coord_scale,
                consistency_weight=float(sec.get("consistency_weight", 1.0)),
                rampup_epochs=int(sec.get("rampup_epochs", 0)),
                pls_holdout=_holdout(sec.get("pls_holdout", 0.0)),
            )
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{stage}: {exc}") from exc

    def scene_config(self) -> SceneConfig:
        sec = {k: v for k, v in self.raw["synth"].items() if k not in ("train_frames", "val_frames")}
        sec.setdefault("seed", self.seed_for("synth"))
        try:
            return SceneConfig.from_dict(sec)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"synth: {exc}") from exc


def _holdout(v) -> float | tuple[float, float]:
    return tuple(float(x) for x in v) if isinstance(v, (list, tuple)) else float(v or 0.0)


# -- data loading -------------------------------------------------------------------


@dataclass
class Frame:
    sequence: str
    stem: str
    cloud: PointCloud
    labels: np.ndarray | None  # scribbles (or merged pseudo-labels)
    dense: np.ndarray | None = None


def load_frames(cfg: PipelineConfig, sequences, label_dir: str | None, require: bool = True,
                dense: bool = True, label_root: Path | None = None) -> list[Frame]:
    """Read point files plus the label directory ``label_dir`` (and dense labels when present)."""
    cmap = cfg.class_map()
    root = cfg.data_root
    frames: list[Frame] = []
    for seq in sequences:
        layout = scan_sequence(root, seq, cfg["label_dir"], require_labels=False)
        extra = None
        if label_dir is not None:
            extra = scan_sequence(label_root or root, seq, label_dir, require_labels=require) \
                if label_root is None else _scan_labels_only(label_root, seq, label_dir, layout.stems, require)
        for i, (pfile, stem) in enumerate(zip(layout.point_files, layout.stems)):
            cloud = load_points(pfile, int(stem) if stem.isdigit() else i)
            labels = None
            if extra is not None and extra.label_files:
                labels = load_labels(extra.label_files[i], cmap)
            gt = None
            if dense and layout.label_files:
                gt = load_labels(layout.label_files[i], cmap)
            validate_frame(cloud, labels if labels is not None else np.zeros(len(cloud), np.int32),
                           num_classes=cmap.C)
            if gt is not None:
                validate_frame(cloud, gt, num_classes=cmap.C)
            frames.append(Frame(str(seq), stem, cloud, labels, gt))
    return frames


def _scan_labels_only(root: Path, seq: str, label_dir: str, stems, require: bool):
    from .kitti_io import SequenceLayout
    from .errors import UnpairedFrame

    d = sequence_dir(root, seq) / label_dir
    files = []
    for s in stems:
        f = d / f"{s}.label"
        if not f.is_file():
            if require:
                raise UnpairedFrame(f"frame {seq}/{s} has no label file {f}")
            return SequenceLayout(root, seq, (), None)
        files.append(f)
    return SequenceLayout(root, seq, (), tuple(files))


def frame_descriptors(frames: list[Frame], pls_cfg: PlsConfig) -> list[np.ndarray]:
    """Descriptors from each frame's scribbles (never from pseudo-labels)."""
    return [pls_descriptors(f.cloud, f.labels, pls_cfg) for f in frames]


# -- evaluation helpers --------------------------------------------------------------


def evaluate(params, frames: list[Frame], C: int, extras=None, coord_scale=(25.0, 25.0, 1.0)) -> ConfusionMatrix:
    m = ConfusionMatrix.zeros(C)
    for i, f in enumerate(frames):
        if f.dense is None:
            continue
        p = predict(params, f.cloud, None if extras is None else extras[i], coord_scale)
        m = m + confusion(f.dense, p, C)
    return m


def _report_split(report: dict, params, frames, cmap: ClassMap, extras, coord_scale, prefix: str):
    if not frames or all(f.dense is None for f in frames):
        return
    m = evaluate(params, frames, cmap.C, extras, coord_scale)
    if m.total:
        report.update(segmentation_report(m, cmap.names, prefix))


# -- stages ---------------------------------------------------------------------------


def stage_train(cfg: PipelineConfig, out_dir: str | Path) -> dict:
    """Stage 1: mean teacher on scribbles, inputs augmented with PLS descriptors."""
    t0 = time.perf_counter()
    out = Path(out_dir)
    cmap = cfg.class_map()
    sec = cfg["train"]
    use_pls = bool(sec.get("use_pls", True))
    frames = load_frames(cfg, cfg["train_sequences"], cfg["scribble_dir"], require=True)
    pls_cfg = cfg.pls_config(cmap.C)
    extras = frame_descriptors(frames, pls_cfg) if use_pls else None
    d = RAW_DIM + (pls_cfg.dim if use_pls else 0)
    tcfg = cfg.train_config("train")
    ts = TeacherStudent.create(d, cmap.C, tuple(cfg["model"]["hidden"]), float(cfg["model"]["alpha"]),
                               seed=cfg.seed_for("train"))
    data = [TrainFrame(f.cloud, f.labels, None, None if extras is None else extras[i], pls_cfg if use_pls else None)
            for i, f in enumerate(frames)]
    ts = train(data, ts, tcfg, cfg.augment_config("train"))
    save_checkpoint(out / "checkpoint.bin", ts)
    model = ts.teacher if tcfg.consistency else ts.student
    report: dict = {"stage": "train", "input_dim": d, "use_pls": use_pls, "consistency": tcfg.consistency,
                    "frames": len(frames), "steps": ts.t}
    _report_split(report, model, frames, cmap, extras, tcfg.coord_scale, "train.")
    val = _val_frames(cfg, need_scribbles=use_pls)
    if val:
        vext = frame_descriptors(val, pls_cfg) if use_pls else None
        _report_split(report, model, val, cmap, vext, tcfg.coord_scale, "val.")
    write_report(out / "metrics.txt", report)
    report["seconds"] = round(time.perf_counter() - t0, 3)
    return report


def _val_frames(cfg: PipelineConfig, need_scribbles: bool) -> list[Frame]:
    seqs = [s for s in cfg["val_sequences"] if sequence_dir(cfg.data_root, s).is_dir()]
    if not seqs:
        return []
    label_dir = cfg["scribble_dir"] if need_scribbles else None
    frames = load_frames(cfg, seqs, label_dir, require=False)
    if need_scribbles and any(f.labels is None for f in frames):
        return []
    return frames


def pseudo_dir(out_dir: Path, seq: str) -> Path:
    return sequence_dir(out_dir, seq) / "pseudo"


def stage_pseudolabel(cfg: PipelineConfig, checkpoint: str | Path, out_dir: str | Path) -> dict:
    """Stage 2: teacher predictions -> thresholds -> pseudo-labels merged with scribbles."""
    t0 = time.perf_counter()
    out = Path(out_dir)
    cmap = cfg.class_map()
    ts = load_checkpoint(checkpoint)
    frames = load_frames(cfg, cfg["train_sequences"], cfg["scribble_dir"], require=True)
    pls_cfg = cfg.pls_config(cmap.C)
    if ts.teacher.C != cmap.C:
        raise ShapeMismatch(f"checkpoint predicts {ts.teacher.C} classes, class map has {cmap.C}")
    if ts.teacher.d == RAW_DIM + pls_cfg.dim:
        extras = frame_descriptors(frames, pls_cfg)
    elif ts.teacher.d == RAW_DIM:
        extras = [None] * len(frames)
    else:
        raise ShapeMismatch(f"checkpoint input width {ts.teacher.d} matches neither {RAW_DIM} "
                            f"nor {RAW_DIM + pls_cfg.dim}")
    coord_scale = cfg.coord_scale
    preds = [predict(ts.teacher, f.cloud, e, coord_scale) for f, e in zip(frames, extras)]
    masks_u = [split_supervision(f.labels)[1] for f in frames]
    sec = cfg["crb"]
    pseudo, table = crb_mod.generate(sec["strategy"], preds, [f.cloud for f in frames], masks_u,
                                     beta=float(sec["beta"]), R=int(sec["R"]), tau=float(sec["tau"]),
                                     global_range=bool(sec["global_range"]), workers=int(cfg["workers"]))
    for f, p in zip(frames, pseudo):
        merged = crb_mod.merge_labels(f.labels, p)
        save_labels(pseudo_dir(out, f.sequence) / f"{f.stem}.label", merged, cmap)
    n_pseudo = sum(len(p) for p in pseudo)
    n_unlabeled = sum(int(m.sum()) for m in masks_u)
    report: dict = {"stage": "pseudolabel", "strategy": sec["strategy"], "pseudo_labels": n_pseudo,
                    "unlabeled_points": n_unlabeled,
                    "pseudo_fraction": n_pseudo / n_unlabeled if n_unlabeled else 0.0}
    if all(f.dense is not None for f in frames) and n_pseudo:
        report["pseudo_accuracy"] = pseudo_label_accuracy(pseudo, [f.dense for f in frames])
    manifest_extra = {"frames": len(frames), "pseudo_labels": n_pseudo}
    if table is None:
        manifest_extra.update({"beta": float(sec["beta"]), "R": int(sec["R"])})
        if sec["strategy"] == "threshold":
            manifest_extra["tau"] = float(sec["tau"])
    crb_mod.write_manifest(out / "manifest.json", table, sec["strategy"], cmap.names, **manifest_extra)
    write_report(out / "metrics.txt", report)
    report["seconds"] = round(time.perf_counter() - t0, 3)
    log.info("pseudo-labeled %d of %d unlabeled points", n_pseudo, n_unlabeled)
    return report


def stage_distill(cfg: PipelineConfig, pseudo_root: str | Path, out_dir: str | Path,
                  init_checkpoint: str | Path | None = None) -> dict:
    """Stage 3: retrain on raw ``(x, y, z, I)`` with scribbles plus pseudo-labels."""
    t0 = time.perf_counter()
    out = Path(out_dir)
    cmap = cfg.class_map()
    frames = load_frames(cfg, cfg["train_sequences"], "pseudo", require=True, label_root=Path(pseudo_root))
    sec = cfg["distill"]
    tcfg = cfg.train_config("distill")
    if init_checkpoint is not None or sec.get("init_from_checkpoint"):
        ts = load_checkpoint(init_checkpoint)
        if ts.student.d != RAW_DIM:
            raise ShapeMismatch(f"distillation needs a {RAW_DIM}-input model, checkpoint has {ts.student.d}")
    else:
        ts = TeacherStudent.create(RAW_DIM, cmap.C, tuple(cfg["model"]["hidden"]), float(cfg["model"]["alpha"]),
                                   seed=cfg.seed_for("distill"))
    # Descriptors need scribbles, unavailable at test time: distillation sees raw points only.
    assert ts.student.d == RAW_DIM
    data = [TrainFrame(f.cloud, f.labels) for f in frames]
    ts = train(data, ts, tcfg, cfg.augment_config("distill"))
    save_checkpoint(out / "checkpoint.bin", ts)
    model = ts.teacher if tcfg.consistency else ts.student
    report: dict = {"stage": "distill", "input_dim": RAW_DIM, "frames": len(frames), "steps": ts.t}
    _report_split(report, model, frames, cmap, None, tcfg.coord_scale, "train.")
    val = _val_frames(cfg, need_scribbles=False)
    _report_split(report, model, val, cmap, None, tcfg.coord_scale, "val.")
    write_report(out / "metrics.txt", report)
    report["seconds"] = round(time.perf_counter() - t0, 3)
    return report


def stage_eval(cfg: PipelineConfig, out_dir: str | Path, checkpoint: str | Path | None = None,
               pred_root: str | Path | None = None, pred_dir: str = "pseudo", model: str = "teacher",
               sequences=None) -> dict:
    """Score a checkpoint, or a directory of predicted label files, against dense labels."""
    out = Path(out_dir)
    cmap = cfg.class_map()
    seqs = list(sequences or cfg["val_sequences"])
    m = ConfusionMatrix.zeros(cmap.C)
    if checkpoint is not None:
        ts = load_checkpoint(checkpoint)
        params = ts.teacher if model == "teacher" else ts.student
        need_pls = params.d != RAW_DIM
        frames = load_frames(cfg, seqs, cfg["scribble_dir"] if need_pls else None, require=need_pls)
        extras = frame_descriptors(frames, cfg.pls_config(cmap.C)) if need_pls else None
        m = evaluate(params, frames, cmap.C, extras, cfg.coord_scale)
    elif pred_root is not None:
        frames = load_frames(cfg, seqs, pred_dir, require=True, label_root=Path(pred_root))
        for f in frames:
            if f.dense is not None:
                m = m + confusion(f.dense, f.labels, cmap.C)
    else:
        raise ConfigError("eval needs a checkpoint or a prediction directory")
    report: dict = {"stage": "eval", "sequences": ",".join(seqs)}
    report.update(segmentation_report(m, cmap.names))
    write_report(out / "metrics.txt", report)
    return report


def stage_synth(cfg: PipelineConfig, out_dir: str | Path | None = None) -> dict:
    root = Path(out_dir) if out_dir is not None else cfg.data_root
    sc = cfg.scene_config()
    frames = {s: int(cfg["synth"]["train_frames"]) for s in cfg["train_sequences"]}
    frames.update({s: int(cfg["synth"]["val_frames"]) for s in cfg["val_sequences"]})
    seqs = list(dict.fromkeys(list(cfg["train_sequences"]) + list(cfg["val_sequences"])))
    return generate_dataset(root, sc, seqs, frames)


def stage_stats(cfg: PipelineConfig, out_dir: str | Path) -> dict:
    """Scribble label counts per class and per annulus on the training sequences."""
    cmap = cfg.class_map()
    frames = load_frames(cfg, cfg["train_sequences"], cfg["scribble_dir"], require=True)
    R = int(cfg["crb"]["R"])
    stats = distribution([f.labels for f in frames], cmap.C, [f.cloud for f in frames], R,
                         bool(cfg["crb"]["global_range"]))
    report = distribution_report(stats, cmap.names)
    if all(f.dense is not None for f in frames):
        dense = distribution([f.dense for f in frames], cmap.C)
        for name, v in zip(cmap.names, dense.class_counts):
            report[f"dense_count.{name}"] = v
    write_report(Path(out_dir) / "stats.txt", report)
    return report


def run_all(cfg: PipelineConfig, out_dir: str | Path) -> dict:
    """Train, pseudo-label and distill in sequence; returns the stage reports.

    With ``crb.rounds > 1`` each further round pseudo-labels with the previous
    round's distilled (raw-input) teacher and distills again; its reports are
    keyed ``pseudolabel2``, ``distill2`` and so on.
    """
    out = Path(out_dir)
    reports = {"train": stage_train(cfg, out / "train")}
    ckpt = out / "train" / "checkpoint.bin"
    for k in range(int(cfg["crb"].get("rounds", 1))):
        tag = "" if k == 0 else str(k + 1)
        reports[f"pseudolabel{tag}"] = stage_pseudolabel(cfg, ckpt, out / f"pseudolabel{tag}")
        reports[f"distill{tag}"] = stage_distill(cfg, out / f"pseudolabel{tag}", out / f"distill{tag}")
        ckpt = out / f"distill{tag}" / "checkpoint.bin"
    return reports
