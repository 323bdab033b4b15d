import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boxfit3d.geometry import Box2D, Box3D, iou_2d
from boxfit3d.metrics import (
    EvalBox,
    EvalCriterion,
    average_localization_precision,
    average_orientation_similarity,
    average_precision,
    match_detections,
    precision_recall,
    select_class,
)

CRIT_2D = EvalCriterion("2d", 0.7)
CRIT_3D = EvalCriterion("3d", 0.7)


def obj(x=0.0, z=20.0, theta=0.0, score=1.0, box2d=None, **kw):
    b3 = Box3D(1.5, 1.6, 3.9, x, 1.0, z, theta)
    b2 = Box2D(*box2d) if box2d else Box2D(100 + 10 * x, 100, 160 + 10 * x, 140)
    return EvalBox(b2, b3, score, **kw)


def brute_force_ap(dets, gts, ok, points=11):
    """Scalar 11-point AP: greedy matching per image, then interpolated precision."""
    rows, n_gt = [], 0
    for img_d, img_g in zip(dets, gts):
        n_gt += len(img_g)
        taken = set()
        for i in sorted(range(len(img_d)), key=lambda i: -img_d[i].score):
            hit = None
            for g in range(len(img_g)):
                if g not in taken and ok(img_d[i], img_g[g]):
                    if hit is None or iou_2d(img_d[i].box2d, img_g[g].box2d) > iou_2d(img_d[i].box2d, img_g[hit].box2d):
                        hit = g
            if hit is not None:
                taken.add(hit)
            rows.append((img_d[i].score, hit is not None))
    rows.sort(key=lambda r: -r[0])
    tp = 0
    pr = []
    for k, (_, is_tp) in enumerate(rows, start=1):
        tp += is_tp
        pr.append((tp / n_gt, tp / k))
    total = 0.0
    for j in range(points):
        r = j / (points - 1)
        total += max([p for rec, p in pr if rec >= r - 1e-12], default=0.0)
    return total / points


class TestCriterion:
    def test_validation(self):
        with pytest.raises(ValueError):
            EvalCriterion("iou", 0.7)
        with pytest.raises(ValueError):
            EvalCriterion("3d", 0.0)
        with pytest.raises(ValueError):
            EvalCriterion("alp", 0.7, -1)

    def test_threshold_inclusive(self):
        a = EvalBox(Box2D(0, 0, 2, 2))
        b = EvalBox(Box2D(1, 0, 3, 2))
        assert EvalCriterion("2d", 1 / 3).score(a, b)[1]

    def test_missing_3d(self):
        assert CRIT_3D.score(EvalBox(Box2D(0, 0, 1, 1)), obj()) == (0.0, False)


class TestMatching:
    def test_single(self):
        a = match_detections([obj()], [obj()], CRIT_3D)
        assert (a.tp, a.fp, a.fn) == (1, 0, 0)

    def test_duplicate(self):
        a = match_detections([obj(score=0.9), obj(score=0.8)], [obj()], CRIT_3D)
        assert (a.tp, a.fp, a.fn) == (1, 1, 0)
        assert a.status == ["tp", "fp"]

    def test_alp_far_center(self):
        gt = obj(box2d=(0, 0, 10, 10))
        det = EvalBox(Box2D(0, 0, 10, 8), Box3D(1.5, 1.6, 3.9, 1.5, 1.0, 20, 0))
        assert iou_2d(det.box2d, gt.box2d) == pytest.approx(0.8)
        a = match_detections([det], [gt], EvalCriterion("alp", 0.7, 1.0))
        assert (a.tp, a.fp) == (0, 1)

    def test_ignored_gt(self):
        gts = [obj(ignore=True)]
        a = match_detections([obj()], gts, CRIT_3D)
        assert a.status == ["ignored"] and a.n_gt == 0
        assert average_precision([[obj()], [obj()]], [gts, [obj()]], CRIT_3D) == 1.0


class TestAP:
    def test_perfect(self):
        gts = [[obj(x) for x in (-5, 0, 5)], [obj(2)]]
        dets = [[obj(x, score=0.9) for x in (-5, 0, 5)], [obj(2, score=0.8)]]
        assert average_precision(dets, gts, CRIT_3D) == 1.0

    def test_no_detections(self):
        assert average_precision([[]], [[obj()]], CRIT_3D) == 0.0

    def test_half(self):
        fp, tp = obj(8, score=0.9), obj(0, score=0.8)
        assert average_precision([fp, tp], [obj(0)], CRIT_3D) == 0.5

    def test_hand_computed_mixed(self):
        # ranks: TP, FP, TP with 4 GT -> recall 0.25/0.25/0.5, precision 1, 0.5, 2/3
        gts = [obj(x) for x in (-6, -2, 2, 6)]
        dets = [obj(-6, score=0.9), obj(20, score=0.8), obj(2, score=0.7)]
        expected = (3 * 1.0 + 3 * (2 / 3)) / 11
        assert average_precision(dets, gts, CRIT_3D) == pytest.approx(expected, abs=1e-15)
        pr = precision_recall(dets, gts, CRIT_3D)
        np.testing.assert_allclose(pr.recall, [0.25, 0.25, 0.5])

    def test_forty_point(self):
        fp, tp = obj(8, score=0.9), obj(0, score=0.8)
        assert average_precision([fp, tp], [obj(0)], CRIT_3D, points=40) == 0.5
        with pytest.raises(ValueError):
            average_precision([fp, tp], [obj(0)], CRIT_3D, points=7)

    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.floats(-10, 10), st.floats(0, 1), st.booleans()), max_size=12))
    def test_fp_to_tp_monotone(self, cases):
        gts = [obj(x) for x in range(-10, 11, 4)]
        base, better = [], []
        for x, s, flip in cases:
            d = obj(x + 40, score=s)  # far away: FP
            base.append(d)
            better.append(obj(round(x / 4) * 4 + 2, score=s) if flip else d)
        ap0 = average_precision(base, gts, CRIT_3D)
        ap1 = average_precision(better, gts, CRIT_3D)
        assert 0.0 <= ap0 <= ap1 + 1e-12 <= 1.0 + 1e-12


class TestAOS:
    def dets_gts(self, offset):
        gts = [obj(x, theta=0.3) for x in (-4, 0, 4)]
        dets = [obj(x, theta=0.3 + offset, score=0.9 - 0.1 * i) for i, x in enumerate((-4, 0, 4))]
        dets.append(obj(30, score=0.95))
        return dets, gts

    def test_exact(self):
        dets, gts = self.dets_gts(0.0)
        assert average_orientation_similarity(dets, gts) == pytest.approx(average_precision(dets, gts, CRIT_2D))

    def test_flipped(self):
        dets, gts = self.dets_gts(math.pi)
        assert average_orientation_similarity(dets, gts) == pytest.approx(0.0, abs=1e-15)

    def test_quarter(self):
        aos = average_orientation_similarity([obj(theta=math.pi / 2)], [obj()])
        assert aos == pytest.approx(0.5 * average_precision([obj()], [obj()], CRIT_2D))

    @given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-4, 4), st.floats(0, 1)), max_size=8))
    def test_bounded_by_ap2d(self, cases):
        gts = [obj(x) for x in (-8, 0, 8)]
        dets = [obj(x, theta=t, score=s) for x, t, s in cases]
        aos = average_orientation_similarity(dets, gts)
        assert 0.0 <= aos <= average_precision(dets, gts, CRIT_2D) + 1e-12


class TestALP:
    def test_close_centers(self):
        gts = [obj(x) for x in (-4, 4)]
        dets = [EvalBox(g.box2d, Box3D(1.5, 1.6, 3.9, g.box3d.x + 0.3, 1.0, 20.4, 0), 0.9) for g in gts]
        assert average_localization_precision(dets, gts) == average_precision(dets, gts, CRIT_2D) == 1.0

    def test_far_centers(self):
        gts = [obj(x) for x in (-4, 4)]
        dets = [EvalBox(g.box2d, Box3D(1.5, 1.6, 3.9, g.box3d.x, 1.0, 22.0, 0), 0.9) for g in gts]
        assert average_localization_precision(dets, gts) == 0.0

    def test_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            dets, gts = [], []
            for _ in range(3):
                g = [EvalBox(Box2D(x, 100, x + 50, 140), Box3D(1.5, 1.6, 3.9, x / 50, 1, 20, 0))
                     for x in rng.choice(np.arange(0, 1000, 100), size=rng.integers(1, 4), replace=False)]
                d = []
                for gt in g:
                    for _ in range(rng.integers(0, 3)):
                        j = rng.normal(0, [6, 3, 6, 3])
                        d.append(EvalBox(Box2D(*(gt.box2d.as_array() + j)),
                                         Box3D(1.5, 1.6, 3.9, *(gt.box3d.center + rng.normal(0, 0.7, 3)), 0),
                                         float(rng.uniform())))
                dets.append(d)
                gts.append(g)

            def ok(det, gt):
                return (iou_2d(det.box2d, gt.box2d) >= 0.7
                        and np.linalg.norm(det.box3d.center - gt.box3d.center) <= 1.0)

            assert average_localization_precision(dets, gts) == pytest.approx(brute_force_ap(dets, gts, ok), abs=1e-12)


class TestDifficulty:
    def test_select_class(self):
        gts = [obj(-4, box2d=(0, 0, 50, 30), label="Car"),  # 30 px tall: moderate only
               obj(0, label="Van"),
               obj(4, label="Pedestrian"),
               obj(8, label="Car", occluded=2)]
        dets = [obj(-4, box2d=(0, 0, 50, 30), score=0.9), obj(0, score=0.8), obj(4, score=0.7, label="Pedestrian")]
        d, g = select_class(dets, gts, "Car", "easy")
        assert len(d[0]) == 2 and len(g[0]) == 3
        assert [x.ignore for x in g[0]] == [True, True, True]
        assert average_precision(d, g, CRIT_2D) == 0.0  # nothing left to find
        d, g = select_class(dets, gts, "Car", "moderate")
        assert [x.ignore for x in g[0]] == [False, True, True]
        assert average_precision(d, g, CRIT_2D) == 1.0
