import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from boxfit3d.detection import Candidate, Detection
from boxfit3d.errors import MalformedLine, MissingP2
from boxfit3d.fitting import fit
from boxfit3d.geometry import Box2D, Box3D, Camera
from boxfit3d.kitti import (
    KittiLabel,
    emit_kitti_calib,
    emit_kitti_labels,
    emit_kitti_predictions,
    emit_predictions,
    parse_kitti_calib,
    parse_kitti_label_file,
    parse_predictions,
)
from boxfit3d.synth import KITTI_P2, SynthConfig, candidate_list, generate_dataset
from boxfit3d.targets import TargetContext, encode

LINE = "Car 0.00 0 0.00 0 0 100 50 2.00 2.00 4.00 0.00 1.00 10.00 0.00"


class TestLabels:
    def test_example_line(self):
        (lb,) = parse_kitti_label_file(LINE)
        b = lb.box3d()
        np.testing.assert_allclose(b.center, [0, 0, 10])
        assert b.dims == (2, 2, 4) and b.theta == 0
        assert lb.score is None and lb.box2d() == Box2D(0, 0, 100, 50)

    def test_empty(self):
        assert parse_kitti_label_file("") == []
        assert parse_kitti_label_file("\n\n") == []

    def test_field_count(self):
        with pytest.raises(MalformedLine) as exc:
            parse_kitti_label_file(LINE + "\n" + " ".join(LINE.split()[:14]))
        assert exc.value.lineno == 2

    def test_bad_number(self):
        with pytest.raises(MalformedLine) as exc:
            parse_kitti_label_file(LINE.replace("10.00", "ten"))
        assert exc.value.lineno == 1
        with pytest.raises(MalformedLine):
            parse_kitti_label_file(LINE.replace("Car 0.00 0", "Car 0.00 0.5"))

    def test_unknown_class_passes(self):
        (lb,) = parse_kitti_label_file(LINE.replace("Car", "Tram"))
        assert lb.type == "Tram"

    def test_dontcare(self):
        (lb,) = parse_kitti_label_file("DontCare -1 -1 -10 5 5 20 20 -1 -1 -1 -1000 -1000 -1000 -10")
        assert lb.box3d() is None
        assert lb.to_eval().box3d is None

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        labels = []
        for _ in range(50):
            b = Box3D(*rng.uniform([1, 1, 2, -10, 0, 5], [2, 2, 5, 10, 2, 50]), rng.uniform(-3, 3))
            labels.append(KittiLabel.from_box("Car", b, Box2D(*np.sort(rng.uniform(0, 500, 4)).reshape(2, 2).T.ravel()),
                                              truncated=0.0, occluded=0))
        once = parse_kitti_label_file(emit_kitti_labels(labels))
        twice = parse_kitti_label_file(emit_kitti_labels(once))
        for a, b, c in zip(labels, once, twice):
            np.testing.assert_allclose(b.box3d().as_array(), a.box3d().as_array(), atol=0.005 + 0.0025 + 1e-9)
            assert b == c

    def test_sixteen_fields(self):
        cfg = SynthConfig(seed=1, noise_scale=0.0)
        synth = generate_dataset(cfg, 1)[0]
        tv = synth.clean[0]
        det = Detection(Candidate("Car", 0.95, tv), fit(tv))
        line = emit_kitti_predictions([det]).strip()
        assert len(line.split()) == 16
        assert line.split()[-1] == "0.95"
        (lb,) = parse_kitti_label_file(line)
        assert lb.score == 0.95
        # location goes back to bottom center
        assert lb.location[1] == pytest.approx(det.box.y + det.box.h / 2, abs=0.005)

    def test_alpha_matches_encoding(self):
        rng = np.random.default_rng(2)
        cam = Camera(KITTI_P2)
        for _ in range(100):
            b = Box3D(*rng.uniform([1, 1, 2, -10, 0, 5], [2, 2, 5, 10, 2, 50]), rng.uniform(-3, 3))
            f = encode(b, Box2D(0, 0, 1, 1), TargetContext((600, 180), cam))
            lb = KittiLabel.from_box("Car", b, Box2D(0, 0, 1, 1))
            assert lb.alpha == pytest.approx(math.atan2(f[5], f[6]), abs=1e-9)


class TestCalib:
    def test_identity(self):
        cam = parse_kitti_calib("P2: 1 0 0 0 0 1 0 0 0 0 1 0")
        np.testing.assert_array_equal(cam.P, np.hstack([np.eye(3), np.zeros((3, 1))]))

    def test_missing(self):
        with pytest.raises(MissingP2):
            parse_kitti_calib("P0: 1 0 0 0 0 1 0 0 0 0 1 0\n")

    def test_wrong_count(self):
        with pytest.raises(MalformedLine):
            parse_kitti_calib("P2: 1 0 0 0 0 1 0 0 0 0 1\n")

    def test_singular(self):
        with pytest.raises(MalformedLine) as exc:
            parse_kitti_calib("P0: 1\nP2: 0 0 0 0 0 1 0 0 0 0 1 0\n")
        assert exc.value.lineno == 2

    def test_round_trip_exact(self):
        P = KITTI_P2 + np.random.default_rng(3).normal(0, 1e-3, (3, 4))
        cam = parse_kitti_calib(emit_kitti_calib(Camera(P)))
        np.testing.assert_array_equal(cam.P, P)
        assert parse_kitti_calib(emit_kitti_calib(cam)) == cam


class TestPredictionRecords:
    def test_round_trip_exact(self):
        cfg = SynthConfig(seed=4, noise_scale=1.0)
        synth = generate_dataset(cfg, 1)[0]
        cands = candidate_list(synth, cfg, noisy=True, rng=0, n_background=3)
        back = parse_predictions(emit_predictions(cands), synth.scene.camera)
        assert len(back) == len(cands)
        for a, b in zip(cands, back):
            assert (a.label, a.score) == (b.label, b.score)
            np.testing.assert_array_equal(a.targets.y, b.targets.y)
            np.testing.assert_array_equal(a.targets.sigma, b.targets.sigma)
            assert a.targets.context.pixel == b.targets.context.pixel

    def test_field_count(self):
        text = "Car " + " ".join(["1.0"] * 54)
        with pytest.raises(MalformedLine):
            parse_predictions(text, Camera(KITTI_P2))

    def test_nonpositive_sigma(self):
        text = "Car 0.9 1 1 " + " ".join(["1.0"] * 26) + " " + " ".join(["0.0"] * 26)
        with pytest.raises(MalformedLine):
            parse_predictions(text, Camera(KITTI_P2))


class TestTotality:
    @given(st.text(alphabet=st.sampled_from(list("0123456789.- \nCarP2:e")), max_size=300))
    def test_label_parser(self, text):
        try:
            parse_kitti_label_file(text)
        except MalformedLine as exc:
            assert exc.lineno >= 1

    @given(st.text(alphabet=st.sampled_from(list("0123456789.- \nP2:e")), max_size=200))
    def test_calib_parser(self, text):
        try:
            parse_kitti_calib(text)
        except MalformedLine as exc:
            assert exc.lineno >= 1
        except MissingP2:
            pass

    @given(st.text(alphabet=st.sampled_from(list("0123456789.- \nCar")), max_size=300))
    def test_prediction_parser(self, text):
        try:
            parse_predictions(text, Camera(KITTI_P2))
        except MalformedLine as exc:
            assert exc.lineno >= 1
