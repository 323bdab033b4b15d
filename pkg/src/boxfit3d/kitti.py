"""KITTI label / calibration text formats and the raw-prediction record format.

Label lines have 15 whitespace-separated fields (16 with a trailing score)::

    type truncated occluded alpha x1 y1 x2 y2 h w l x y z rotation_y [score]

KITTI locates a box by its bottom center; :class:`~boxfit3d.geometry.Box3D`
uses the geometric center, so ``y_c = y - h / 2`` on the way in and the
inverse on the way out.

Raw predictions (what a detector network emits per output pixel before
fitting) are stored one candidate per line::

    label score px py y_1 ... y_26 sigma_1 ... sigma_26

i.e. a class label followed by 55 reals, written with ``repr`` so that a
write/read round trip is exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .detection import Candidate
from .errors import MalformedLine, MissingP2
from .geometry import Box2D, Box3D, Camera, normalize_angle
from .metrics import EvalBox
from .targets import N_TARGETS, TargetContext, TargetVector


@dataclass(frozen=True)
class KittiLabel:
    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox: tuple
    dimensions: tuple  # (h, w, l)
    location: tuple  # bottom center (x, y, z)
    rotation_y: float
    score: float | None = None

    def box3d(self) -> Box3D | None:
        """Center-parametrised box, or ``None`` for placeholder dimensions (DontCare)."""
        h, w, l = self.dimensions
        if not (h > 0 and w > 0 and l > 0):
            return None
        x, y, z = self.location
        return Box3D(h, w, l, x, y - 0.5 * h, z, self.rotation_y)

    def box2d(self) -> Box2D:
        return Box2D(*self.bbox)

    def to_eval(self) -> EvalBox:
        return EvalBox(self.box2d(), self.box3d(), 1.0 if self.score is None else self.score,
                       self.type, self.truncated, self.occluded)

    @classmethod
    def from_box(cls, type_, box: Box3D, box2d: Box2D, score=None, truncated=-1.0, occluded=-1):
        alpha = normalize_angle(box.theta - math.atan2(box.x, box.z))
        return cls(type_, truncated, occluded, alpha, tuple(box2d.as_array().tolist()),
                   box.dims, (box.x, box.y + 0.5 * box.h, box.z), box.theta, score)


def _floats(fields, lineno):
    try:
        return [float(v) for v in fields]
    except ValueError as exc:
        raise MalformedLine(lineno, str(exc)) from None


def parse_kitti_label_file(text: str):
    """Parse label text into :class:`KittiLabel` objects; blank lines are skipped."""
    labels = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) not in (15, 16):
            raise MalformedLine(lineno, f"expected 15 or 16 fields, got {len(fields)}")
        v = _floats(fields[1:], lineno)
        occluded = v[1]
        if occluded != int(occluded):
            raise MalformedLine(lineno, f"occlusion level must be an integer, got {fields[2]}")
        labels.append(KittiLabel(
            type=fields[0], truncated=v[0], occluded=int(occluded), alpha=v[2],
            bbox=tuple(v[3:7]), dimensions=tuple(v[7:10]), location=tuple(v[10:13]),
            rotation_y=v[13], score=v[14] if len(v) == 15 else None,
        ))
    return labels


def format_kitti_label(label: KittiLabel) -> str:
    parts = [label.type, f"{label.truncated:.2f}", f"{label.occluded:d}", f"{label.alpha:.2f}"]
    parts += [f"{v:.2f}" for v in (*label.bbox, *label.dimensions, *label.location, label.rotation_y)]
    if label.score is not None:
        parts.append(f"{label.score:.2f}")
    return " ".join(parts)


def emit_kitti_labels(labels) -> str:
    return "".join(format_kitti_label(lb) + "\n" for lb in labels)


def emit_kitti_predictions(detections) -> str:
    """16-field KITTI lines for fitted :class:`~boxfit3d.detection.Detection` objects."""
    return emit_kitti_labels(KittiLabel.from_box(d.label, d.box, d.box2d, score=d.score) for d in detections)


def parse_kitti_calib(text: str) -> Camera:
    """Camera from the ``P2:`` line of a KITTI calibration file."""
    for lineno, line in enumerate(text.splitlines(), start=1):
        key, _, rest = line.partition(":")
        if key.strip() != "P2":
            continue
        vals = _floats(rest.split(), lineno)
        if len(vals) != 12:
            raise MalformedLine(lineno, f"P2 needs 12 values, got {len(vals)}")
        try:
            return Camera(np.reshape(vals, (3, 4)))
        except ValueError as exc:
            raise MalformedLine(lineno, str(exc)) from None
    raise MissingP2("calibration text has no P2 line")


def emit_kitti_calib(camera: Camera) -> str:
    return "P2: " + " ".join(repr(float(v)) for v in camera.P.ravel()) + "\n"


def emit_predictions(candidates) -> str:
    lines = []
    for c in candidates:
        t = c.targets
        vals = [c.score, *t.context.pixel, *t.y.tolist(), *t.sigma.tolist()]
        lines.append(" ".join([c.label] + [repr(float(v)) for v in vals]))
    return "".join(line + "\n" for line in lines)


def parse_predictions(text: str, camera: Camera):
    """Raw prediction records to :class:`~boxfit3d.detection.Candidate` objects."""
    out = []
    n_vals = 3 + 2 * N_TARGETS
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 1 + n_vals:
            raise MalformedLine(lineno, f"expected label + {n_vals} values, got {len(fields)} fields")
        v = _floats(fields[1:], lineno)
        try:
            ctx = TargetContext((v[1], v[2]), camera)
            tv = TargetVector(v[3:3 + N_TARGETS], v[3 + N_TARGETS:], ctx)
            out.append(Candidate(fields[0], v[0], tv))
        except ValueError as exc:
            raise MalformedLine(lineno, str(exc)) from None
    return out
