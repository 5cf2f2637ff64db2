"""
Why the pseudo-label thresholds are split by range
==================================================

Far points are sparse and the classifier is less sure about them.  One
threshold per class keeps mostly near points; one per class and annulus keeps
the same fraction everywhere.
"""

import numpy as np

from scribblelidar import PointCloud, generate
from scribblelidar.crb import frame_annuli

rng = np.random.default_rng(0)
n = 30000

# density falls with range, as on a spinning sensor
r = 50 * rng.random(n) ** 2 + 0.5
phi = rng.uniform(-np.pi, np.pi, n)
cloud = PointCloud.from_xyzi(np.column_stack([r * np.cos(phi), r * np.sin(phi), np.zeros(n)]))

# two classes; confidence decays with range
cls = rng.integers(0, 2, n)
conf = np.clip(0.98 - 0.007 * r + rng.normal(scale=0.03, size=n), 0.51, 0.999)
pred = np.where(cls[:, None] == 0, np.column_stack([conf, 1 - conf]), np.column_stack([1 - conf, conf]))
unlabeled = rng.random(n) > 0.08

ann = frame_annuli([cloud], 10)[0]
print("annulus  points  class_balanced  crb")
picked = {}
for strategy in ("class_balanced", "crb"):
    pseudo, _ = generate(strategy, [pred], [cloud], [unlabeled], beta=0.5, R=10)
    sel = np.zeros(n, bool)
    sel[pseudo[0].indices] = True
    picked[strategy] = sel
for a in range(10):
    u = unlabeled & (ann == a)
    print(f"{a:>7}{u.sum():>8}{picked['class_balanced'][u].mean():>16.2f}{picked['crb'][u].mean():>5.2f}")

# both keep about half of the unlabeled points overall
for strategy, sel in picked.items():
    print(f"{strategy}: {sel.sum()} of {unlabeled.sum()} unlabeled points")

# the thresholds themselves, as negative log confidence per class and annulus
_, table = generate("crb", [pred], [cloud], [unlabeled], beta=0.5, R=10)
np.set_printoptions(precision=3, suppress=True)
print(table.k)
