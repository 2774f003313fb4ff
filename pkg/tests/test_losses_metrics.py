"""Losses and evaluation metrics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidarmos import losses_metrics as lm
from lidarmos.errors import ShapeError
from lidarmos.scan_io import PointCloud

import reference as ref


def random_probs(rng, n, k):
    p = rng.random((n, k)) + 1e-3
    return p / p.sum(axis=1, keepdims=True)


class TestCrossEntropy:
    def test_perfect(self):
        assert lm.weighted_cross_entropy(np.eye(3)[[0, 2, 1]], [0, 2, 1]) == 0.0

    def test_uniform_two_class(self):
        assert lm.weighted_cross_entropy(np.full((5, 2), 0.5), [0, 1, 1, 0, 1]) == pytest.approx(math.log(2), abs=1e-15)

    def test_loop_oracle(self, rng):
        probs, gt = random_probs(rng, 200, 4), rng.integers(0, 4, 200)
        w = rng.uniform(0.5, 3.0, 4)
        want = sum(-w[g] * math.log(max(p[g], 1e-12)) for p, g in zip(probs, gt)) / 200
        assert abs(lm.weighted_cross_entropy(probs, gt, w) - want) <= 1e-9

    def test_log_clamp(self):
        assert lm.weighted_cross_entropy([[1.0, 0.0]], [1]) == pytest.approx(-math.log(1e-12))

    def test_errors(self):
        with pytest.raises(ShapeError):
            lm.weighted_cross_entropy(np.full((3, 2), 0.5), [0, 1])
        with pytest.raises(ShapeError):
            lm.weighted_cross_entropy(np.full((2, 2), 0.5), [0, 1], [1.0, -1.0])
        with pytest.raises(ShapeError):
            lm.weighted_cross_entropy(np.full((2, 2), 0.5), [0, 2])


class TestLovasz:
    def test_perfect(self):
        assert lm.lovasz_softmax(np.eye(2)[[0, 1, 1]], [0, 1, 1]) == 0.0

    @pytest.mark.parametrize("p", [0.0, 0.3, 0.75, 1.0])
    def test_single_point(self, p):
        # only the true class is present
        assert lm.lovasz_softmax([[1 - p, p]], [1]) == pytest.approx(1 - p, abs=1e-15)

    def test_small_exhaustive(self):
        grid = [0.0, 0.5, 1.0]
        import itertools
        for n in range(1, 5):
            for ps in itertools.product(grid, repeat=n):
                for gt in itertools.product((0, 1), repeat=n):
                    probs = np.column_stack([1 - np.array(ps), ps])
                    assert abs(lm.lovasz_softmax(probs, gt) - ref.lovasz_two_class(ps, gt)) <= 1e-9

    def test_random_multiclass_bounds(self, rng):
        for _ in range(50):
            n, k = rng.integers(1, 30), rng.integers(2, 5)
            v = lm.lovasz_softmax(random_probs(rng, n, k), rng.integers(0, k, n))
            assert 0.0 <= v <= 1.0

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]), st.integers(0, 1)),
                    min_size=1, max_size=12), st.randoms(use_true_random=False))
    def test_permutation_invariant(self, pts, rnd):
        ps = [p for p, _ in pts]
        gt = [g for _, g in pts]
        order = list(range(len(pts)))
        rnd.shuffle(order)
        a = lm.lovasz_softmax(np.column_stack([1 - np.array(ps), ps]), gt)
        b = lm.lovasz_softmax(np.column_stack([1 - np.array(ps)[order], np.array(ps)[order]]), np.array(gt)[order])
        assert abs(a - b) <= 1e-12

    def test_grad_sums_to_final_loss(self, rng):
        fg = (rng.random(20) < 0.4).astype(float)
        g = lm.lovasz_grad(fg)
        assert g.sum() == pytest.approx(1.0 - 0.0 if fg.sum() else 0.0)


class TestTotalLoss:
    def test_perfect(self):
        p = np.eye(2)[[0, 1]]
        assert lm.total_loss(p, [0, 1], p, [0, 1]) == 0.0

    def test_motion_perfect(self, rng):
        sem, sg = random_probs(rng, 30, 3), rng.integers(0, 3, 30)
        m = np.eye(2)[[0, 1, 1]]
        assert lm.total_loss(sem, sg, m, [0, 1, 1]) == lm.branch_loss(sem, sg)

    def test_compositional(self, rng):
        sem, sg = random_probs(rng, 30, 3), rng.integers(0, 3, 30)
        mot, mg = random_probs(rng, 30, 2), rng.integers(0, 2, 30)
        want = (lm.weighted_cross_entropy(sem, sg) + lm.lovasz_softmax(sem, sg)
                + lm.weighted_cross_entropy(mot, mg) + lm.lovasz_softmax(mot, mg))
        assert abs(lm.total_loss(sem, sg, mot, mg) - want) <= 1e-12
        assert lm.total_loss(sem, sg, mot, mg) >= 0


class TestIou:
    def test_perfect(self):
        assert lm.iou_eval([1, 0, 1], [1, 0, 1]) == (100.0, 100.0, 100.0)

    def test_disjoint(self):
        assert lm.iou_eval([1, 0, 0], [0, 1, 0])[0] == 0.0

    def test_hand_computed(self):
        pred = [1, 1, 1, 1, 0, 0, 0]
        gt = [1, 1, 1, 0, 1, 1, 0]
        assert lm.confusion(pred, gt) == lm.Confusion(3, 1, 2, 1)
        assert lm.iou_eval(pred, gt) == (50.0, 60.0, 75.0)

    def test_undefined(self):
        assert lm.iou_eval([0, 0], [0, 0]) == (None, None, None)
        assert lm.iou_eval([1, 0], [0, 0]) == (0.0, None, 0.0)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=50))
    def test_iou_below_recall_and_precision(self, pairs):
        pred, gt = zip(*pairs)
        iou, rec, prec = lm.iou_eval(pred, gt)
        if None not in (iou, rec, prec):
            assert iou <= min(rec, prec) + 1e-12
        c = lm.confusion(pred, gt)
        assert c.n == len(pairs)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            lm.iou_eval([1, 0], [1])


class TestDistanceBins:
    def test_table_boundaries(self):
        assert lm.DEFAULT_BINS == ((0.0, 20.0), (20.0, 50.0), (50.0, math.inf))
        assert lm.BIN_NAMES == ("Close", "Medium", "Far")

    def test_edges(self):
        cloud = PointCloud.from_xyz([[19.999, 0, 0], [20.0, 0, 0], [49.999, 0, 0], [50.0, 0, 0]])
        rep = lm.distance_binned_eval([1, 1, 1, 1], [1, 1, 1, 1], cloud)
        assert [c.tp for c in rep.per_bin] == [1, 2, 1]

    def test_single_bin(self):
        cloud = PointCloud.from_xyz([[10.0, 0, 0], [0, 10.0, 0], [6.0, 8.0, 0]])
        rep = lm.distance_binned_eval([1, 0, 1], [1, 1, 0], cloud)
        assert rep.per_bin[0].n == 3
        assert rep.per_bin[1].iou is None and rep.per_bin[2].iou is None

    def test_filter_oracle(self, rng):
        xyz = rng.uniform(-80, 80, (3000, 3))
        pred, gt = rng.integers(0, 2, 3000), rng.integers(0, 2, 3000)
        rep = lm.distance_binned_eval(pred, gt, PointCloud.from_xyz(xyz))
        r = np.linalg.norm(xyz, axis=1)
        for (lo, hi), c in zip(lm.DEFAULT_BINS, rep.per_bin):
            m = (r >= lo) & (r < hi)
            assert c == lm.confusion(pred[m], gt[m])
            assert (c.iou, c.recall, c.precision) == lm.iou_eval(pred[m], gt[m])
        assert rep.overall == lm.confusion(pred, gt)

    def test_merge_is_count_sum(self, rng):
        parts = []
        for _ in range(3):
            xyz = rng.uniform(-60, 60, (100, 3))
            parts.append(lm.distance_binned_eval(rng.integers(0, 2, 100), rng.integers(0, 2, 100),
                                                 PointCloud.from_xyz(xyz)))
        total = parts[0] + parts[1] + parts[2]
        assert total.overall.tp == sum(p.overall.tp for p in parts)

    def test_exports(self):
        cloud = PointCloud.from_xyz([[10.0, 0, 0], [30.0, 0, 0]])
        rep = lm.distance_binned_eval([1, 0], [1, 0], cloud)
        csv_text = rep.to_csv()
        assert csv_text.splitlines()[0].startswith("bin,lo_m,hi_m,tp")
        assert "Close,0.0,20.0,1,0,0,0,100.0000" in csv_text
        table = rep.to_table()
        assert "Close (<20m)" in table and "Far (>=50m)" in table and "-" in table
        d = rep.to_dict()
        assert d["Far"]["hi"] is None and d["Close"]["iou"] == 100.0
