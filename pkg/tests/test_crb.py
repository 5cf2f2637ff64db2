import math
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scribblelidar.core import PointCloud
from scribblelidar.crb import (
    ConfidenceStore,
    FramePseudoLabels,
    ThresholdTable,
    collect_confidences,
    determine_thresholds,
    frame_annuli,
    generate,
    manifest_dict,
    merge_labels,
    read_manifest_table,
    solve_pseudo_labels,
    write_manifest,
)


def store_of(values, C=1, R=1, cls=1, ann=0):
    v = np.asarray(values, dtype=np.float64)
    return ConfidenceStore(C, R, np.full(v.size, cls, np.int32), np.full(v.size, ann), v)


def random_inputs(seed, n_frames=3, n=400, C=4, distinct=True):
    rng = np.random.default_rng(seed)
    clouds, preds, masks = [], [], []
    for f in range(n_frames):
        r = rng.uniform(0.5, 50, n)
        phi = rng.uniform(-np.pi, np.pi, n)
        clouds.append(PointCloud.from_xyzi(np.column_stack([r * np.cos(phi), r * np.sin(phi), np.zeros(n)]),
                                           frame_id=f))
        logits = rng.normal(scale=2.0, size=(n, C))
        p = np.exp(logits)
        preds.append(p / p.sum(axis=1, keepdims=True))
        masks.append(rng.random(n) < 0.9)
    return preds, clouds, masks


def brute_force_counts(preds, clouds, masks, beta, R):
    """Per (class, annulus): how many pooled confidences beat the floor(beta * n)-th largest."""
    pools = {}
    for p, c, m in zip(preds, clouds, masks):
        B = max(math.hypot(x, y) for x, y in c.points[:, :2].astype(np.float64)) / R
        for i in np.flatnonzero(m):
            x, y = c.points[i, :2].astype(np.float64)
            r = min(int(math.hypot(x, y) // B), R - 1)
            cls = int(np.argmax(p[i])) + 1
            pools.setdefault((cls, r), []).append(float(p[i].max()))
    out = {}
    for key, vals in pools.items():
        vals = sorted(vals, reverse=True)
        thr = vals[min(math.floor(Decimal(repr(beta)) * len(vals)), len(vals) - 1)]
        out[key] = (sum(v > thr for v in vals), len(vals))
    return out


def selected_counts(pseudo, preds, clouds, R):
    out = {}
    for p, c, pl, ann in zip(preds, clouds, pseudo, frame_annuli(clouds, R)):
        for i, cls in zip(pl.indices, pl.classes):
            out[(int(cls), int(ann[i]))] = out.get((int(cls), int(ann[i])), 0) + 1
    return out


class TestCollect:
    def test_single_point_trace(self):
        cloud = PointCloud.from_xyzi([[3.0, 0.0, 0.0], [0.0, 50.0, 0.0]])
        preds = [np.array([[0.7, 0.3], [0.1, 0.9]])]
        store = collect_confidences(preds, [cloud], [np.array([True, False])], R=10)
        assert store.values(1, 0).tolist() == [0.7]
        assert len(store) == 1

    def test_no_unlabeled(self):
        preds, clouds, masks = random_inputs(0, 1, 20)
        store = collect_confidences(preds, clouds, [np.zeros(20, bool)], R=10)
        assert len(store) == 0 and store.counts().sum() == 0

    def test_frames_concatenate(self):
        preds, clouds, masks = random_inputs(1, 2, 50)
        both = collect_confidences(preds, clouds, masks)
        a = collect_confidences(preds[:1], clouds[:1], masks[:1])
        b = collect_confidences(preds[1:], clouds[1:], masks[1:])
        assert np.array_equal(both.confidences, np.concatenate([a.confidences, b.confidences]))

    def test_worker_count_irrelevant(self):
        preds, clouds, masks = random_inputs(2, 6, 100)
        one = collect_confidences(preds, clouds, masks, workers=1)
        many = collect_confidences(preds, clouds, masks, workers=4)
        assert np.array_equal(one.confidences, many.confidences)
        assert np.array_equal(one.annuli, many.annuli)

    def test_values_in_unit_interval_and_argmax_class(self):
        preds, clouds, masks = random_inputs(3)
        store = collect_confidences(preds, clouds, masks)
        assert store.confidences.min() > 0 and store.confidences.max() <= 1
        p = np.concatenate([p[m] for p, m in zip(preds, masks)])
        assert np.array_equal(store.classes, p.argmax(axis=1) + 1)


class TestThresholds:
    def test_four_values_half(self):
        table = determine_thresholds(store_of([0.9, 0.8, 0.7, 0.6]), 0.5)
        assert table.k[0, 0] == pytest.approx(-math.log(0.7))
        assert table.k[0, 0] == pytest.approx(0.3567, abs=1e-4)
        assert sum(v > table.confidence[0, 0] for v in [0.9, 0.8, 0.7, 0.6]) == 2

    def test_unsorted_input(self):
        table = determine_thresholds(store_of([0.6, 0.9, 0.7, 0.8]), 0.5)
        assert table.confidence[0, 0] == 0.7

    def test_empty_cell_infinite(self):
        table = determine_thresholds(ConfidenceStore.empty(2, 3), 0.5)
        assert np.all(np.isinf(table.k))

    def test_beta_one_clamps(self):
        table = determine_thresholds(store_of([0.9, 0.8]), 1.0)
        assert table.k[0, 0] == pytest.approx(-math.log(0.8))
        assert sum(v > table.confidence[0, 0] for v in [0.9, 0.8]) == 1

    def test_beta_rank_uses_decimal_value(self):
        # 0.3 * 10 is 3.0000000000000004 in binary but floor must still be 3
        vals = np.linspace(0.99, 0.5, 10)
        table = determine_thresholds(store_of(vals), 0.3)
        assert table.confidence[0, 0] == vals[3]

    def test_beta_validated(self):
        with pytest.raises(ValueError):
            determine_thresholds(store_of([0.5]), 0.0)
        with pytest.raises(ValueError):
            determine_thresholds(store_of([0.5]), 1.5)


class TestSolve:
    def setup_method(self):
        self.cloud = PointCloud.from_xyzi([[0.5, 0.0, 0.0], [10.0, 0.0, 0.0]])
        k = np.full((3, 10), np.inf)
        k[2, 0] = -math.log(0.7)
        self.table = ThresholdTable(k, np.where(np.isinf(k), 0.0, 0.7), 0.5, 10)

    def solve(self, conf):
        p = np.array([[(1 - conf) / 2, (1 - conf) / 2, conf], [0.2, 0.2, 0.6]])
        return solve_pseudo_labels([p], self.table, [self.cloud], [np.array([True, True])])[0]

    def test_above_threshold(self):
        pl = self.solve(0.75)
        assert pl.indices.tolist() == [0] and pl.classes.tolist() == [3]

    def test_equal_is_rejected(self):
        assert len(self.solve(0.7)) == 0

    def test_infinite_cell(self):
        # point 1 sits in annulus 9 where k is infinite
        assert 1 not in self.solve(0.99).indices


class TestGenerate:
    def test_naive_labels_all_unlabeled(self):
        preds, clouds, masks = random_inputs(4)
        pseudo, table = generate("naive", preds, clouds, masks)
        assert table is None
        assert [len(p) for p in pseudo] == [int(m.sum()) for m in masks]

    def test_class_balanced_equals_crb_one_annulus(self):
        preds, clouds, masks = random_inputs(5)
        cb, t1 = generate("class_balanced", preds, clouds, masks, beta=0.4)
        crb, t2 = generate("crb", preds, clouds, masks, beta=0.4, R=1)
        assert all(a.indices.tobytes() == b.indices.tobytes() and a.classes.tobytes() == b.classes.tobytes()
                   for a, b in zip(cb, crb))
        assert np.array_equal(t1.k, t2.k)

    def test_threshold_strategy(self):
        preds, clouds, masks = random_inputs(6)
        pseudo, _ = generate("threshold", preds, clouds, masks, tau=0.8)
        for p, m, pl in zip(preds, masks, pseudo):
            assert np.array_equal(pl.indices, np.flatnonzero(m & (p.max(axis=1) > 0.8)))
        with pytest.raises(ValueError):
            generate("threshold", preds, clouds, masks, tau=1.0)

    def test_unknown_strategy(self):
        preds, clouds, masks = random_inputs(6, 1, 10)
        with pytest.raises(ValueError):
            generate("dars", preds, clouds, masks)

    @pytest.mark.parametrize("beta", [0.3, 0.5, 0.7])
    def test_counts_match_oracle(self, beta):
        preds, clouds, masks = random_inputs(7)
        pseudo, _ = generate("crb", preds, clouds, masks, beta=beta)
        got = selected_counts(pseudo, preds, clouds, 10)
        want = brute_force_counts(preds, clouds, masks, beta, 10)
        for key, (count, n) in want.items():
            assert got.get(key, 0) == count == min(math.floor(Decimal(repr(beta)) * n), n - 1)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_subset_of_argmax_and_disjoint_from_scribbles(self, seed):
        preds, clouds, masks = random_inputs(seed, 2, 120)
        pseudo, _ = generate("crb", preds, clouds, masks)
        for p, m, pl in zip(preds, masks, pseudo):
            assert np.all(m[pl.indices])
            assert np.array_equal(pl.classes, p[pl.indices].argmax(axis=1) + 1)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
    def test_nested_in_beta(self, seed, b1, b2):
        lo, hi = sorted((b1, b2))
        preds, clouds, masks = random_inputs(seed, 2, 120)
        small, _ = generate("crb", preds, clouds, masks, beta=lo)
        large, _ = generate("crb", preds, clouds, masks, beta=hi)
        for a, b in zip(small, large):
            assert set(a.indices.tolist()) <= set(b.indices.tolist())

    def test_scaling_one_cell_keeps_selection(self):
        preds, clouds, masks = random_inputs(8, 1, 500)
        before, _ = generate("crb", preds, clouds, masks)
        ann = frame_annuli(clouds, 10)[0]
        p = preds[0].copy()
        cls = p.argmax(axis=1)
        cell = masks[0] & (cls == 0) & (ann == 3)
        assert cell.sum() > 4
        # shrink the whole row so argmax and ranks inside the cell survive
        p[cell] *= 0.5
        after, _ = generate("crb", [p], clouds, masks)
        sel_b = set(before[0].indices.tolist()) & set(np.flatnonzero(cell).tolist())
        sel_a = set(after[0].indices.tolist()) & set(np.flatnonzero(cell).tolist())
        assert sel_a == sel_b

    def test_workers_identical(self):
        preds, clouds, masks = random_inputs(9, 5, 200)
        a, _ = generate("crb", preds, clouds, masks, workers=1)
        b, _ = generate("crb", preds, clouds, masks, workers=3)
        assert all(x.indices.tobytes() == y.indices.tobytes() for x, y in zip(a, b))


class TestRangeBalance:
    @staticmethod
    def far_is_unsure(seed=0, n=20000):
        rng = np.random.default_rng(seed)
        r = rng.uniform(0.1, 50, n)
        phi = rng.uniform(-np.pi, np.pi, n)
        cloud = PointCloud.from_xyzi(np.column_stack([r * np.cos(phi), r * np.sin(phi), np.zeros(n)]))
        conf = np.clip(0.99 - 0.008 * r + rng.normal(scale=0.02, size=n), 0.51, 0.999)
        return [np.column_stack([conf, 1 - conf])], [cloud], [np.ones(n, bool)]

    def test_crb_balanced_class_balanced_not(self):
        preds, clouds, masks = self.far_is_unsure()
        ann = frame_annuli(clouds, 10)[0]
        crb, _ = generate("crb", preds, clouds, masks, beta=0.5)
        cb, _ = generate("class_balanced", preds, clouds, masks, beta=0.5)
        sel_crb = np.zeros(len(ann), bool)
        sel_crb[crb[0].indices] = True
        sel_cb = np.zeros(len(ann), bool)
        sel_cb[cb[0].indices] = True
        for r in range(10):
            assert abs(sel_crb[ann == r].mean() - 0.5) <= 0.02
        assert sel_cb[ann == 9].mean() < 0.25


class TestMerge:
    def test_scribble_wins(self):
        assert merge_labels([3], FramePseudoLabels([0], [5])).tolist() == [3]

    def test_empty_pseudo(self):
        assert merge_labels([0, 2, 0], FramePseudoLabels([], [])).tolist() == [0, 2, 0]
        assert merge_labels([0, 2, 0], None).tolist() == [0, 2, 0]

    def test_union(self):
        assert merge_labels([0, 2, 0, 0], FramePseudoLabels([0, 3], [4, 1])).tolist() == [4, 2, 0, 1]

    def test_input_untouched(self):
        scrib = np.array([0, 1])
        merge_labels(scrib, FramePseudoLabels([0], [2]))
        assert scrib.tolist() == [0, 1]


def test_manifest_roundtrip(tmp_path):
    preds, clouds, masks = random_inputs(10)
    _, table = generate("crb", preds, clouds, masks, beta=0.5, R=10)
    write_manifest(tmp_path / "m.json", table, "crb", ["a", "b", "c", "d"])
    again = read_manifest_table(tmp_path / "m.json")
    assert again.beta == 0.5 and again.R == 10
    assert np.array_equal(again.k, table.k)
    doc = manifest_dict(table, "crb")
    assert doc["strategy"] == "crb" and len(doc["k"]) == 4 and len(doc["k"][0]) == 10
