import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossalign.geometry import (
    Assignment,
    Box2D,
    ScoredDetection,
    box_regression_loss,
    giou,
    hungarian_match,
    iou,
    nms,
)

from oracles import brute_force_nms, central_diff, enumerate_assignment_cost, grid_giou, grid_iou


@st.composite
def boxes(draw, lo=-50.0, hi=50.0):
    x0 = draw(st.floats(lo, hi))
    y0 = draw(st.floats(lo, hi))
    w = draw(st.floats(0.01, 40.0))
    h = draw(st.floats(0.01, 40.0))
    return Box2D(x0, y0, x0 + w, y0 + h)


def random_boxes(rng, n, extent=20.0):
    xy = rng.uniform(0, extent, size=(n, 2))
    wh = rng.uniform(1, extent / 2, size=(n, 2))
    return [Box2D(*xy[i], *(xy[i] + wh[i])) for i in range(n)]


class TestBox2D:
    @pytest.mark.parametrize("coords", [(0, 0, 0, 1), (0, 0, 1, 0), (2, 0, 1, 1), (0, 0, math.inf, 1)])
    def test_rejects_degenerate(self, coords):
        with pytest.raises(ValueError):
            Box2D(*coords)

    def test_score_range(self):
        with pytest.raises(ValueError):
            ScoredDetection(Box2D(0, 0, 1, 1), 0, 1.5)


class TestIoU:
    def test_identity(self):
        a = Box2D(0, 0, 1, 1)
        assert iou(a, a) == 1.0

    def test_disjoint(self):
        assert iou(Box2D(0, 0, 1, 1), Box2D(5, 5, 6, 6)) == 0.0

    def test_overlap_matches_grid_oracle(self):
        a, b = (0, 0, 2, 2), (1, 1, 3, 3)
        inter, union = grid_iou(a, b, cells_per_unit=8)
        assert inter / union == pytest.approx(1 / 7, abs=1e-15)
        assert iou(Box2D(*a), Box2D(*b)) == pytest.approx(inter / union, abs=1e-15)

    @given(boxes(), boxes())
    def test_symmetric_and_bounded(self, a, b):
        v = iou(a, b)
        assert v == iou(b, a)
        assert 0.0 <= v <= 1.0


class TestGIoU:
    def test_identity(self):
        a = Box2D(3, 4, 7, 9)
        assert giou(a, a) == 1.0

    def test_touching(self):
        assert giou(Box2D(0, 0, 1, 1), Box2D(1, 0, 2, 1)) == pytest.approx(0.0, abs=1e-15)

    def test_gap(self):
        a, b = (0, 0, 1, 1), (2, 0, 3, 1)
        assert grid_giou(a, b) == pytest.approx(-1 / 3)
        assert giou(Box2D(*a), Box2D(*b)) == pytest.approx(-1 / 3, abs=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_integer_boxes_match_grid_oracle(self, seed):
        rng = np.random.default_rng(seed)
        a0 = rng.integers(0, 6, 2)
        b0 = rng.integers(0, 6, 2)
        a = (*a0, *(a0 + rng.integers(1, 5, 2)))
        b = (*b0, *(b0 + rng.integers(1, 5, 2)))
        assert giou(Box2D(*map(float, a)), Box2D(*map(float, b))) == pytest.approx(grid_giou(a, b), abs=1e-12)

    @given(boxes(), boxes())
    def test_bounds(self, a, b):
        g = giou(a, b)
        assert -1.0 < g <= 1.0 + 1e-12
        assert g <= iou(a, b) + 1e-12


class TestNMS:
    def test_single_kept(self):
        d = ScoredDetection(Box2D(0, 0, 1, 1), 3, 0.9)
        assert nms([d], 0.5, 0.3) == [d]

    def test_dominance(self):
        hi = ScoredDetection(Box2D(0, 0, 1, 1), 0, 0.9)
        lo = ScoredDetection(Box2D(0, 0, 1, 1), 0, 0.8)
        assert nms([lo, hi], 0.5, 0.3) == [hi]

    def test_other_class_not_suppressed(self):
        a = ScoredDetection(Box2D(0, 0, 1, 1), 0, 0.9)
        b = ScoredDetection(Box2D(0, 0, 1, 1), 1, 0.8)
        assert nms([a, b]) == [a, b]

    def test_confidence_filter(self):
        dets = [ScoredDetection(Box2D(10 * i, 0, 10 * i + 1, 1), 0, s) for i, s in enumerate((0.9, 0.5, 0.2))]
        assert [d.score for d in nms(dets, 0.5, 0.3)] == [0.9, 0.5]

    def test_empty(self):
        assert nms([]) == []

    def test_tie_break_by_index(self):
        a = ScoredDetection(Box2D(0, 0, 1, 1), 0, 0.7)
        b = ScoredDetection(Box2D(0, 0, 1, 1.01), 0, 0.7)
        assert nms([a, b]) == [a]
        assert nms([b, a]) == [b]

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        bxs = random_boxes(rng, 20)
        cats = rng.integers(0, 3, 20)
        scores = np.round(rng.uniform(0, 1, 20), 2)
        dets = [ScoredDetection(b, int(c), float(s)) for b, c, s in zip(bxs, cats, scores)]
        kept = nms(dets, 0.4, 0.3)
        expected = brute_force_nms([(b.as_tuple(), int(c), float(s)) for b, c, s in zip(bxs, cats, scores)], 0.4, 0.3)
        assert kept == [dets[i] for i in expected]

    @given(st.lists(st.tuples(boxes(0, 30), st.integers(0, 2), st.floats(0, 1)), max_size=15), st.floats(0.05, 1))
    @settings(max_examples=100)
    def test_properties(self, raw, thr):
        dets = [ScoredDetection(b, c, s) for b, c, s in raw]
        kept = nms(dets, thr, 0.3)
        assert all(k in dets for k in kept)
        assert [k.score for k in kept] == sorted((k.score for k in kept), reverse=True)
        for a, b in itertools.combinations(kept, 2):
            if a.category_id == b.category_id:
                assert iou(a.box, b.box) < thr
        assert nms(dets, thr, 0.3) == kept


class TestHungarian:
    def test_zero_diagonal(self):
        c = 1 - np.eye(3)
        a = hungarian_match(c)
        assert a.pairs == ((0, 0), (1, 1), (2, 2))
        assert a.total_cost == 0.0

    def test_two_by_two(self):
        a = hungarian_match([[1, 2], [2, 1]])
        assert a.pairs == ((0, 0), (1, 1))
        assert a.total_cost == 2.0

    def test_empty(self):
        a = hungarian_match(np.zeros((0, 3)))
        assert a.pairs == () and a.total_cost == 0.0

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            hungarian_match([[np.nan]])

    def test_random_6x6_vs_720_permutations(self):
        c = np.random.default_rng(7).uniform(-5, 5, (6, 6))
        assert hungarian_match(c).total_cost == pytest.approx(enumerate_assignment_cost(c), abs=1e-12)

    @pytest.mark.parametrize("shape", [(2, 5), (5, 2), (4, 4), (1, 7), (7, 3)])
    def test_rectangular(self, shape):
        c = np.random.default_rng(sum(shape)).normal(size=shape)
        a = hungarian_match(c)
        assert len(a.pairs) == min(shape)
        rows, cols = zip(*a.pairs)
        assert len(set(rows)) == len(rows) and len(set(cols)) == len(cols)
        assert a.total_cost == pytest.approx(enumerate_assignment_cost(c), abs=1e-12)


class TestBoxRegressionLoss:
    def test_identity(self):
        bxs = [Box2D(0, 0, 2, 3), Box2D(5, 5, 9, 8)]
        loss, grad = box_regression_loss(bxs, bxs, Assignment(((0, 0), (1, 1))))
        assert loss == pytest.approx(0.0, abs=1e-15)

    def test_empty_match(self):
        loss, grad = box_regression_loss([Box2D(0, 0, 1, 1)], [], Assignment())
        assert loss == 0.0 and not grad.any()

    def test_far_apart_giou_term_approaches_two(self):
        p, t = Box2D(0, 0, 1, 1), Box2D(1e4, 1e4, 1e4 + 1, 1e4 + 1)
        loss, _ = box_regression_loss([p], [t], Assignment(((0, 0),)), l1_weight=0.0, giou_weight=1.0)
        assert 1.999 < loss < 2.0
        loss_l1, _ = box_regression_loss([p], [t], Assignment(((0, 0),)), l1_weight=1.0, giou_weight=0.5)
        assert loss_l1 == pytest.approx(4e4 + 0.5 * loss, rel=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_matches_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        pred = np.array([b.as_tuple() for b in random_boxes(rng, 4)])
        tgt = np.array([b.as_tuple() for b in random_boxes(rng, 4)])
        match = Assignment(tuple((i, int(j)) for i, j in enumerate(rng.permutation(4))))
        _, grad = box_regression_loss(pred, tgt, match, 1.0, 2.0)
        num = central_diff(lambda x: box_regression_loss(x, tgt, match, 1.0, 2.0)[0], pred)
        err = np.abs(grad - num) / np.maximum(np.abs(grad), 1.0)
        assert err.max() < 1e-5

    @given(st.lists(st.tuples(boxes(), boxes()), min_size=1, max_size=5), st.floats(0, 3), st.floats(0, 3))
    def test_nonnegative(self, pairs, w1, w2):
        pred = [p for p, _ in pairs]
        tgt = [t for _, t in pairs]
        loss, _ = box_regression_loss(pred, tgt, Assignment(tuple((i, i) for i in range(len(pairs)))), w1, w2)
        assert loss >= -1e-12
