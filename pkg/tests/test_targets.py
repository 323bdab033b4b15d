import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boxfit3d.errors import DepthTooSmall
from boxfit3d.geometry import Box2D, Box3D, Camera, projected_envelope
from boxfit3d.synth import KITTI_P2
from boxfit3d.targets import (
    CORNERS,
    N_TARGETS,
    TargetContext,
    TargetVector,
    assign_support_regions,
    corner_pixels,
    encode,
    model_and_jacobian,
    residual_targets,
    support_region,
)

IDENTITY = Camera(np.hstack([np.eye(3), np.zeros((3, 1))]))
KITTI = Camera(KITTI_P2)


def oracle_targets(b, P, pixel):
    """Scalar re-implementation of the forward encoding, written from the definitions."""
    h, w, l, xc, yc, zc, t = b
    px, py = pixel
    us, vs = [], []
    for v1, v2, v3 in itertools.product((-1, 1), repeat=3):
        ox, oy, oz = l * v1 / 2, h * v2 / 2, w * v3 / 2
        X = xc + math.cos(t) * ox + math.sin(t) * oz
        Y = yc + oy
        Z = zc - math.sin(t) * ox + math.cos(t) * oz
        hom = [sum(P[r][k] * c for k, c in enumerate((X, Y, Z, 1.0))) for r in range(3)]
        us.append(hom[0] / hom[2])
        vs.append(hom[1] / hom[2])
    alpha = t - math.atan2(xc, zc)
    out = [px - min(us), py - min(vs), max(us) - px, max(vs) - py,
           math.sqrt(xc ** 2 + yc ** 2 + zc ** 2), math.sin(alpha), math.cos(alpha),
           math.log(h), math.log(w), math.log(l)]
    for u, v in zip(us, vs):
        out += [u - px, v - py]
    return np.array(out)


def random_kitti_box(rng):
    return Box3D(*rng.uniform([1.2, 1.4, 3.0], [2.0, 1.9, 4.8]), rng.uniform(-10, 10), rng.uniform(0.5, 1.5),
                 rng.uniform(8, 50), rng.uniform(-math.pi, math.pi))


class TestEncode:
    def test_cube_example(self):
        b = Box3D(2, 2, 2, 0, 0, 10, 0)
        ctx = TargetContext((0, 0), IDENTITY)
        f = encode(b, projected_envelope(IDENTITY, b), ctx)
        assert f[4] == pytest.approx(10)
        np.testing.assert_allclose(f[5:7], [0, 1], atol=1e-15)
        np.testing.assert_allclose(f[7:10], [math.log(2)] * 3)
        np.testing.assert_allclose(f[:4], [1 / 9] * 4)

    def test_zero_observation_angle(self):
        f = encode(Box3D(1, 1, 1, 10, 0, 10, math.pi / 4), Box2D(0, 0, 1, 1), TargetContext((0, 0), IDENTITY))
        np.testing.assert_allclose(f[5:7], [0, 1], atol=1e-15)

    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            b = random_kitti_box(rng)
            pix = rng.uniform([0, 0], [1242, 375])
            ctx = TargetContext(pix, KITTI)
            f = residual_targets(b, ctx)
            np.testing.assert_allclose(f, oracle_targets(b.as_array(), KITTI_P2, pix), rtol=0, atol=1e-10)

    def test_labelled_box2d_used(self):
        ctx = TargetContext((5, 6), IDENTITY)
        f = encode(Box3D(2, 2, 2, 0, 0, 10, 0), Box2D(1, 2, 10, 20), ctx)
        np.testing.assert_allclose(f[:4], [4, 4, 5, 14])
        assert TargetVector(f, 1.0, ctx).box2d() == Box2D(1, 2, 10, 20)

    def test_envelope_equals_encode(self):
        ctx = TargetContext((600, 180), KITTI)
        b = Box3D(1.5, 1.6, 3.9, 2, 1, 20, 0.7)
        np.testing.assert_array_equal(residual_targets(b, ctx), encode(b, projected_envelope(KITTI, b), ctx))

    def test_distance_sensitivity(self):
        ctx = TargetContext((600, 180), KITTI)
        b = np.array([1.5, 1.6, 3.9, 2, 1, 20, 0.7])
        delta = 1e-6
        f0 = residual_targets(Box3D(*b), ctx)
        b[5] += delta
        f1 = residual_targets(Box3D(*b), ctx)
        d = math.sqrt(2 ** 2 + 1 + 20 ** 2)
        assert (f1[4] - f0[4]) == pytest.approx(delta * 20 / d, rel=1e-6)

    def test_periodic_in_theta(self):
        ctx = TargetContext((600, 180), KITTI)
        b = np.array([1.5, 1.6, 3.9, 2, 1, 20, 0.7])
        f0, _ = model_and_jacobian(b, ctx)
        b[6] += 2 * math.pi
        f1, _ = model_and_jacobian(b, ctx)
        np.testing.assert_allclose(f1, f0, atol=1e-9)

    def test_behind_camera(self):
        with pytest.raises(DepthTooSmall):
            residual_targets(Box3D(1, 1, 1, 0, 0, -3, 0), TargetContext((0, 0), IDENTITY))

    def test_unit_orientation(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            f = residual_targets(random_kitti_box(rng), TargetContext((600, 180), KITTI))
            assert f[5] ** 2 + f[6] ** 2 == pytest.approx(1.0, abs=1e-15)

    @settings(max_examples=100)
    @given(st.floats(-200, 200), st.floats(-200, 200))
    def test_anchor_shift(self, dx, dy):
        b = Box3D(1.5, 1.6, 3.9, 2, 1, 20, 0.7)
        f0 = residual_targets(b, TargetContext((600, 180), KITTI))
        f1 = residual_targets(b, TargetContext((600 + dx, 180 + dy), KITTI))
        diff = f1 - f0
        np.testing.assert_allclose(diff[:4], [dx, dy, -dx, -dy], atol=1e-9)
        np.testing.assert_allclose(diff[4:10], 0, atol=0)
        np.testing.assert_allclose(diff[CORNERS], np.tile([-dx, -dy], 8), atol=1e-9)

    def test_corner_pixels(self):
        b = Box3D(1.5, 1.6, 3.9, 2, 1, 20, 0.7)
        ctx = TargetContext((600, 180), KITTI)
        uv = corner_pixels(residual_targets(b, ctx), ctx)
        np.testing.assert_allclose(uv, corner_pixels(residual_targets(b, TargetContext((0, 0), KITTI)),
                                                     TargetContext((0, 0), KITTI)), atol=1e-9)


class TestJacobian:
    def test_finite_differences(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            b = random_kitti_box(rng).as_array()
            ctx = TargetContext(rng.uniform([0, 0], [1242, 375]), KITTI)
            _, J = model_and_jacobian(b, ctx)
            fd = np.empty_like(J)
            for k in range(7):
                h = 1e-6 * max(1.0, abs(b[k]))
                e = np.zeros(7)
                e[k] = h
                fd[:, k] = (oracle_targets(b + e, KITTI_P2, ctx.pixel) - oracle_targets(b - e, KITTI_P2, ctx.pixel)) / (2 * h)
            scale = np.maximum(np.abs(fd).max(axis=0), 1e-12)
            assert np.max(np.abs(J - fd) / scale) < 1e-5


class TestTargetVector:
    def test_shape_checked(self):
        with pytest.raises(ValueError):
            TargetVector(np.zeros(25), 1.0, TargetContext((0, 0), IDENTITY))

    def test_sigma_positive(self):
        s = np.ones(N_TARGETS)
        s[3] = 0
        with pytest.raises(ValueError):
            TargetVector(np.zeros(N_TARGETS), s, TargetContext((0, 0), IDENTITY))

    def test_weights(self):
        tv = TargetVector(np.zeros(N_TARGETS), 4.0, TargetContext((0, 0), IDENTITY))
        np.testing.assert_array_equal(tv.weights, 0.25)

    def test_context_finite(self):
        with pytest.raises(ValueError):
            TargetContext((math.nan, 0), IDENTITY)


class TestSupportRegion:
    def test_twenty_percent(self):
        r = support_region(Box2D(0, 0, 100, 50))
        assert (r.x_min, r.x_max, r.y_min, r.y_max) == (40, 60, 20, 30)

    def test_centered_and_contained(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            x1, y1 = rng.uniform(0, 500, 2)
            box = Box2D(x1, y1, x1 + rng.uniform(20, 400), y1 + rng.uniform(20, 200))
            r = support_region(box, stride=4)
            assert box.x1 <= 4 * r.x_min and 4 * r.x_max <= box.x2
            assert box.y1 <= 4 * r.y_min and 4 * r.y_max <= box.y2
            cx, cy = box.center
            assert 4 * r.x_min <= cx <= 4 * r.x_max and 4 * r.y_min <= cy <= 4 * r.y_max

    def test_tiny_box_single_cell(self):
        r = support_region(Box2D(10.2, 20.1, 10.8, 20.5), stride=4)
        assert r.size == 1
        assert (r.x_min, r.y_min) == (2, 5)

    def test_closer_object_wins(self):
        a = support_region(Box2D(0, 0, 100, 100), owner=0)
        b = support_region(Box2D(5, 5, 105, 105), owner=1)
        near_second = assign_support_regions([a, b], [10.0, 5.0], (120, 120))
        assert np.all(near_second[b.y_min:b.y_max, b.x_min:b.x_max] == 1)
        assert np.count_nonzero(near_second == 0) == a.size - np.count_nonzero(
            (near_second[a.y_min:a.y_max, a.x_min:a.x_max] == 1))
        near_first = assign_support_regions([a, b], [5.0, 10.0], (120, 120))
        assert np.all(near_first[a.y_min:a.y_max, a.x_min:a.x_max] == 0)

    def test_cells(self):
        r = support_region(Box2D(0, 0, 100, 50))
        cells = list(r.cells())
        assert len(cells) == r.size == 200
        assert cells[0] == (20, 40)
