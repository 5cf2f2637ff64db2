import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scribblelidar.core import PointCloud
from scribblelidar.crb import FramePseudoLabels
from scribblelidar.errors import DivergenceDetected, EmptyMask, ShapeMismatch, TruncatedFile
from scribblelidar.mean_teacher import (
    AugmentConfig,
    TeacherStudent,
    TrainConfig,
    TrainFrame,
    TrainLog,
    augment_student,
    combined_step_loss,
    consistency_loss,
    dump_checkpoint,
    ema_update,
    entropy,
    holdout_mask,
    load_checkpoint_bytes,
    predict,
    train,
)
from scribblelidar.model import (
    ModelParams,
    backward,
    forward,
    init_params,
    logits_and_cache,
    softmax,
    zero_params,
)
from scribblelidar.pls import PlsConfig


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)


def fd_logits(fn, z, eps=1e-6):
    g = np.zeros_like(z)
    for idx in np.ndindex(*z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += eps
        zm[idx] -= eps
        g[idx] = (fn(zp) - fn(zm)) / (2 * eps)
    return g


# -- model ----------------------------------------------------------------------


class TestForward:
    def test_zero_network_uniform(self):
        p = forward(zero_params(4, 19), np.random.default_rng(0).normal(size=(5, 4)))
        np.testing.assert_allclose(p, 1 / 19)

    @given(st.integers(0, 2**31 - 1))
    def test_rows_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        params = init_params(6, 5, (8,), seed)
        p = forward(params, rng.normal(scale=30, size=(20, 6)))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
        assert p.min() >= 0

    def test_width_mismatch(self):
        with pytest.raises(ShapeMismatch):
            forward(init_params(4, 3), np.zeros((2, 5)))

    def test_flat_roundtrip(self):
        params = init_params(4, 3, (5, 6), 1)
        again = ModelParams.from_flat(params.flat(), params.layer_sizes)
        assert np.array_equal(again.flat(), params.flat())
        with pytest.raises(ShapeMismatch):
            ModelParams.from_flat(params.flat()[:-1], params.layer_sizes)

    def test_backprop_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        params = init_params(5, 4, (7, 6), rng)
        for b in params.biases:
            b += rng.normal(scale=0.1, size=b.shape)
        x = rng.normal(size=(9, 5))
        labels = rng.integers(1, 5, 9)
        mask = rng.random(9) < 0.6
        mask[0] = True
        teacher = softmax(rng.normal(size=(9, 4)))

        def loss(p):
            pred = forward(p, x)
            a = _sup(pred, labels, mask)
            b = consistency_loss(pred, teacher, ~mask)[0] if (~mask).any() else 0.0
            return a + b

        logits, acts = logits_and_cache(params, x)
        pred = softmax(logits)
        _, g1, _, _ = combined_step_loss(pred, teacher, np.where(mask, labels, 0))
        analytic = backward(params, acts, g1).flat()
        base = params.flat()
        numeric = np.zeros_like(base)
        for i in range(base.size):
            up, dn = base.copy(), base.copy()
            up[i] += 1e-6
            dn[i] -= 1e-6
            numeric[i] = (loss(ModelParams.from_flat(up, params.layer_sizes))
                          - loss(ModelParams.from_flat(dn, params.layer_sizes))) / 2e-6
        assert rel_err(analytic, numeric) <= 1e-4


def _sup(pred, labels, mask):
    return -np.mean(np.log(pred[mask, labels[mask] - 1]))


# -- losses -----------------------------------------------------------------------


class TestSupervised:
    def test_certain_and_correct(self):
        loss, _ = supervised([[1.0, 0.0]], [1], [True])
        assert loss == 0.0

    def test_uniform_nineteen(self):
        loss, _ = supervised(np.full((3, 19), 1 / 19), [4, 5, 6], [True] * 3)
        assert loss == pytest.approx(math.log(19)) and loss == pytest.approx(2.9444, abs=1e-4)

    def test_empty_mask(self):
        with pytest.raises(EmptyMask):
            supervised([[0.5, 0.5]], [1], [False])

    def test_unmasked_gradient_zero(self):
        _, g = supervised([[0.2, 0.8], [0.6, 0.4]], [2, 1], [True, False])
        assert not g[1].any()
        np.testing.assert_allclose(g[0], [0.2, -0.2])


def supervised(pred, labels, mask):
    from scribblelidar.mean_teacher import supervised_loss
    return supervised_loss(np.asarray(pred, float), np.asarray(labels), np.asarray(mask))


class TestConsistency:
    def test_equal_one_hot(self):
        t = np.eye(3)
        loss, _ = consistency_loss(t, t, [True] * 3)
        assert loss == 0.0

    def test_equal_any_distribution_zero_gradient(self):
        p = softmax(np.random.default_rng(0).normal(size=(6, 4)))
        _, g = consistency_loss(p, p, np.ones(6, bool))
        assert np.abs(g).max() <= 1e-12

    def test_half_half(self):
        loss, _ = consistency_loss(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]]), [True])
        assert loss == pytest.approx(0.6931, abs=1e-4)

    def test_empty_mask(self):
        with pytest.raises(EmptyMask):
            consistency_loss(np.eye(2), np.eye(2), [False, False])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            consistency_loss(np.eye(2), np.eye(3), [True, True])

    @settings(max_examples=100)
    @given(st.integers(0, 2**31 - 1))
    def test_bounded_below_by_teacher_entropy(self, seed):
        rng = np.random.default_rng(seed)
        s = softmax(rng.normal(size=(5, 4)))
        t = softmax(rng.normal(size=(5, 4)))
        mask = np.ones(5, bool)
        assert consistency_loss(s, t, mask)[0] >= entropy(t).mean() - 1e-12
        assert consistency_loss(t, t, mask)[0] == pytest.approx(entropy(t).mean(), abs=1e-12)


class TestGradientCheck:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_losses_match_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        n, C = int(rng.integers(1, 6)), int(rng.integers(2, 6))
        z = rng.normal(scale=2, size=(n, C))
        labels = rng.integers(1, C + 1, n)
        mask = rng.random(n) < 0.7
        mask[0] = True
        teacher = softmax(rng.normal(size=(n, C)))

        def sup(zz):
            return supervised(softmax(zz), labels, mask)[0]

        def cons(zz):
            return consistency_loss(softmax(zz), teacher, mask)[0]

        assert rel_err(supervised(softmax(z), labels, mask)[1], fd_logits(sup, z)) <= 1e-4
        assert rel_err(consistency_loss(softmax(z), teacher, mask)[1], fd_logits(cons, z)) <= 1e-4


class TestCombined:
    def test_no_pseudo_reduces_to_sum(self):
        rng = np.random.default_rng(0)
        s, t = softmax(rng.normal(size=(6, 3))), softmax(rng.normal(size=(6, 3)))
        labels = np.array([1, 0, 2, 0, 0, 3])
        loss, grad, _, _ = combined_step_loss(s, t, labels)
        l1, g1 = supervised(s, labels, labels != 0)
        l2, g2 = consistency_loss(s, t, labels == 0)
        assert loss == pytest.approx(l1 + l2)
        np.testing.assert_allclose(grad, g1 + g2)

    def test_everything_labeled(self):
        s = softmax(np.random.default_rng(1).normal(size=(3, 2)))
        _, _, _, soft = combined_step_loss(s, s[::-1], [1, 0, 0], FramePseudoLabels([1, 2], [2, 2]))
        assert soft == 0.0

    def test_three_point_hand_sum(self):
        s = np.array([[0.8, 0.2], [0.3, 0.7], [0.6, 0.4]])
        t = np.array([[0.5, 0.5], [0.5, 0.5], [0.9, 0.1]])
        loss, _, hard, soft = combined_step_loss(s, t, [1, 0, 0], FramePseudoLabels([1], [1]))
        want_hard = -(math.log(0.8) + math.log(0.3)) / 2
        want_soft = -(0.9 * math.log(0.6) + 0.1 * math.log(0.4))
        assert hard == pytest.approx(want_hard)
        assert soft == pytest.approx(want_soft)
        assert loss == pytest.approx(want_hard + want_soft)

    def test_weight_and_soft_mask(self):
        s = np.array([[0.8, 0.2], [0.3, 0.7], [0.6, 0.4]])
        t = np.full((3, 2), 0.5)
        loss, grad, hard, soft = combined_step_loss(s, t, [1, 0, 0], weight=0.25,
                                                    soft_mask=[False, False, True])
        assert soft == pytest.approx(-0.5 * (math.log(0.6) + math.log(0.4)))
        assert not grad[1].any()
        assert loss == pytest.approx(hard + 0.25 * soft)


# -- EMA ----------------------------------------------------------------------------


def scalar_ts(teacher, student, alpha=0.99):
    return TeacherStudent(ModelParams([np.array([[student]])], [np.zeros(1)]),
                          ModelParams([np.array([[teacher]])], [np.zeros(1)]), alpha)


class TestEma:
    def test_one_step(self):
        ts = ema_update(scalar_ts(1.0, 0.0))
        assert ts.teacher.weights[0][0, 0] == pytest.approx(0.99)
        assert ts.student.weights[0][0, 0] == 0.0 and ts.t == 1

    def test_fixed_point(self):
        ts = TeacherStudent.create(4, 3, seed=0)
        after = ema_update(ts)
        np.testing.assert_allclose(after.teacher.flat(), ts.teacher.flat(), rtol=1e-15, atol=1e-15)

    def test_geometric_contraction(self):
        ts = scalar_ts(1.0, 0.0)
        for _ in range(100):
            ts = ema_update(ts)
        assert ts.teacher.weights[0][0, 0] == pytest.approx(0.99 ** 100, rel=1e-9)
        assert ts.t == 100

    @settings(max_examples=30)
    @given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.999))
    def test_teacher_within_student_envelope(self, seed, alpha):
        rng = np.random.default_rng(seed)
        ts = TeacherStudent.create(3, 2, (4,), alpha, seed)
        seen = [ts.teacher.flat()]
        for _ in range(15):
            ts.student = ModelParams.from_flat(rng.normal(size=ts.student.flat().size), ts.student.layer_sizes)
            seen.append(ts.student.flat())
            ts = ema_update(ts)
            lo, hi = np.min(seen, axis=0), np.max(seen, axis=0)
            assert np.all(ts.teacher.flat() >= lo - 1e-12) and np.all(ts.teacher.flat() <= hi + 1e-12)

    def test_alpha_validated(self):
        with pytest.raises(ValueError):
            TeacherStudent.create(2, 2, alpha=1.0)


# -- augmentation --------------------------------------------------------------------


class TestAugment:
    pc = PointCloud.from_xyzi(np.random.default_rng(0).normal(size=(20, 3)), np.linspace(0, 1, 20))

    def test_identity(self):
        out = augment_student(self.pc, AugmentConfig.identity(), np.random.default_rng(1))
        assert np.array_equal(out.points, self.pc.points)

    def test_half_turn(self):
        cfg = AugmentConfig(rotation=(math.pi, math.pi), translation=0.0, flip_prob=0.0, noise_std=0.0)
        out = augment_student(PointCloud.from_xyzi([[1.0, 0.0, 0.0]]), cfg, np.random.default_rng(0))
        np.testing.assert_allclose(out.xyz, [[-1.0, 0.0, 0.0]], atol=1e-6)

    def test_seeded_bytes(self):
        a = augment_student(self.pc, AugmentConfig(), np.random.default_rng(5))
        b = augment_student(self.pc, AugmentConfig(), np.random.default_rng(5))
        assert a.points.tobytes() == b.points.tobytes()

    def test_intensity_untouched(self):
        out = augment_student(self.pc, AugmentConfig(), np.random.default_rng(2))
        assert np.array_equal(out.intensity, self.pc.intensity)

    def test_flip_only(self):
        cfg = AugmentConfig(rotation=(0.0, 0.0), translation=0.0, flip_prob=1.0, noise_std=0.0)
        out = augment_student(self.pc, cfg, np.random.default_rng(0))
        np.testing.assert_allclose(out.xyz[:, :2], -self.pc.xyz[:, :2])
        np.testing.assert_allclose(out.xyz[:, 2], self.pc.xyz[:, 2])

    def test_validation(self):
        with pytest.raises(ValueError):
            AugmentConfig(flip_prob=1.5)
        with pytest.raises(ValueError):
            AugmentConfig(translation=(-1.0, 0.0, 0.0))


# -- training -------------------------------------------------------------------------


def separable_frames(n_frames=4, n=200, seed=0):
    rng = np.random.default_rng(seed)
    frames = []
    for f in range(n_frames):
        xyz = rng.uniform(-20, 20, size=(n, 3))
        labels = np.where(xyz[:, 0] > 0, 1, 2)
        frames.append(TrainFrame(PointCloud.from_xyzi(xyz, rng.random(n), f), labels))
    return frames


class TestTrain:
    def test_zero_epochs(self):
        ts = TeacherStudent.create(4, 2, seed=0)
        out = train(separable_frames(), ts, TrainConfig(epochs=0))
        assert np.array_equal(out.student.flat(), ts.student.flat())
        assert np.array_equal(out.teacher.flat(), ts.teacher.flat()) and out.t == 0

    def test_separable_two_classes(self):
        frames = separable_frames()
        ts = train(frames, TeacherStudent.create(4, 2, (16,), seed=0), TrainConfig(epochs=50, seed=0),
                   AugmentConfig.identity())
        correct = total = 0
        for fr in frames:
            pred = predict(ts.student, fr.cloud).argmax(axis=1) + 1
            correct += int((pred == fr.labels).sum())
            total += len(pred)
        assert correct / total >= 0.99

    def test_same_seed_identical(self):
        frames = separable_frames(2, 80)
        cfg = TrainConfig(epochs=3, seed=4)
        a = train(frames, TeacherStudent.create(4, 2, (8,), seed=1), cfg, AugmentConfig(seed=2))
        b = train(frames, TeacherStudent.create(4, 2, (8,), seed=1), cfg, AugmentConfig(seed=2))
        assert dump_checkpoint(a) == dump_checkpoint(b)

    def test_input_not_mutated(self):
        ts = TeacherStudent.create(4, 2, (8,), seed=1)
        before = ts.student.flat().copy()
        train(separable_frames(1, 50), ts, TrainConfig(epochs=2))
        assert np.array_equal(ts.student.flat(), before)

    def test_fully_labeled_is_plain_supervised(self):
        """With no unlabeled point, consistency on and off give the same model."""
        frames = separable_frames(2, 60)
        on = train(frames, TeacherStudent.create(4, 2, (8,), seed=3), TrainConfig(epochs=3, consistency=True))
        off = train(frames, TeacherStudent.create(4, 2, (8,), seed=3), TrainConfig(epochs=3, consistency=False))
        assert np.array_equal(on.student.flat(), off.student.flat())

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_detected(self):
        ts = TeacherStudent.create(4, 2, (8,), seed=0)
        ts.student.biases[-1][0] = np.inf
        with pytest.raises(DivergenceDetected):
            train(separable_frames(1, 50), ts, TrainConfig(epochs=1))

    def test_loss_history_recorded(self):
        log = TrainLog()
        train(separable_frames(2, 40), TeacherStudent.create(4, 2, (8,)), TrainConfig(epochs=4), history=log)
        assert len(log.losses) == 4 and all(np.isfinite(log.losses))

    def test_ema_after_every_step(self):
        ts = train(separable_frames(3, 20), TeacherStudent.create(4, 2, (8,)), TrainConfig(epochs=2))
        assert ts.t == 6

    def test_holdout_training_runs_with_descriptors(self):
        frames = []
        for fr in separable_frames(2, 100):
            scrib = np.where(np.arange(100) % 5 == 0, fr.labels, 0)
            cfg = PlsConfig(C=2)
            from scribblelidar.pls import pls_descriptors
            frames.append(TrainFrame(fr.cloud, scrib, extra=pls_descriptors(fr.cloud, scrib, cfg), pls=cfg))
        ts = train(frames, TeacherStudent.create(4 + 6, 2, (8,)), TrainConfig(epochs=2, pls_holdout=(1.0, 8.0)))
        assert ts.t == 4 and ts.student.is_finite()


class TestTrainConfig:
    def test_rampup(self):
        cfg = TrainConfig(consistency_weight=0.5, rampup_epochs=10)
        assert cfg.consistency_at(0) == pytest.approx(0.5 * math.exp(-5))
        assert cfg.consistency_at(10) == 0.5
        assert TrainConfig(consistency=False).consistency_at(3) == 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_frames=2)
        with pytest.raises(ValueError):
            TrainConfig(pls_holdout=(4.0, 2.0))


def test_holdout_mask_subset_of_labeled():
    rng = np.random.default_rng(0)
    xy = rng.uniform(-30, 30, size=(2000, 2))
    labeled = rng.random(2000) < 0.3
    held = holdout_mask(xy, labeled, 4.0, rng)
    assert not np.any(held & ~labeled)
    assert 0.2 < held.sum() / labeled.sum() < 0.8


class TestCheckpoint:
    def test_roundtrip(self):
        ts = TeacherStudent.create(61, 19, seed=2)
        ts = ema_update(ts)
        again = load_checkpoint_bytes(dump_checkpoint(ts))
        assert again.t == 1 and again.alpha == 0.99
        assert np.array_equal(again.student.flat(), ts.student.flat())
        assert np.array_equal(again.teacher.flat(), ts.teacher.flat())

    def test_header(self):
        blob = dump_checkpoint(TeacherStudent.create(4, 3, (5, 6)))
        assert np.frombuffer(blob[:20], "<u4").tolist() == [2, 4, 5, 6, 3]

    def test_truncated(self):
        blob = dump_checkpoint(TeacherStudent.create(4, 3, (5,)))
        with pytest.raises(TruncatedFile):
            load_checkpoint_bytes(blob[:-1])
        with pytest.raises(TruncatedFile):
            load_checkpoint_bytes(blob[:2])
