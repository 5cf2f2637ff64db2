"""
The three-stage pipeline on the synthetic benchmark
===================================================

Writes the benchmark dataset into a scratch directory, trains a scribble-only
baseline, then runs descriptor training, pseudo-labeling and distillation.
Takes one to two minutes.  Pass a directory to keep the artifacts.
"""

import sys
import tempfile
import time
from pathlib import Path

from scribblelidar import pipeline

conf = Path(__file__).resolve().parent.parent / "configs" / "synthetic_benchmark.json"
work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="scribblelidar-"))
t0 = time.perf_counter()

cfg = pipeline.PipelineConfig.load(conf, {"data_root": str(work / "data")})
manifest = pipeline.stage_synth(cfg)
print("frames written:", manifest["frames"])

stats = pipeline.stage_stats(cfg, work / "stats")
print(f"scribbled fraction of training points: {stats['labeled_fraction']:.3f}")

# baseline: raw points, scribbles only, no teacher
base = pipeline.PipelineConfig.load(conf, {"data_root": str(work / "data"),
                                           "train": {"use_pls": False, "consistency": False}})
baseline = pipeline.stage_train(base, work / "baseline")
print(f"baseline           val mIoU {baseline['val.miou']:.4f}")

reports = pipeline.run_all(cfg, work / "full")
print(f"stage 1 (with PLS) val mIoU {reports['train']['val.miou']:.4f}")
pl = reports["pseudolabel"]
print(f"pseudo-labels: {pl['pseudo_labels']} of {pl['unlabeled_points']} unlabeled points, "
      f"accuracy {pl['pseudo_accuracy']:.4f}")
print(f"distilled          val mIoU {reports['distill']['val.miou']:.4f}")

# per-class view of the distilled model against the baseline
names = cfg.class_map().names
for name in names:
    print(f"  {name:<11}{baseline[f'val.iou.{name}']:.3f}  {reports['distill'][f'val.iou.{name}']:.3f}")
print(f"artifacts in {work}, {time.perf_counter() - t0:.0f}s")
