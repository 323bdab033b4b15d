"""Boxes, cameras, projection and overlap measures.

Coordinates follow the KITTI camera frame: x to the right, y down, z forward.
A 3D box is upright (yaw only) and parametrised by its dimensions, its center
and its yaw ``theta`` about the camera y axis.

Box-frame axes: ``l`` spans the heading (x) axis, ``h`` the vertical (y) axis
and ``w`` the lateral (z) axis, so that ``theta = 0`` points the box along the
camera x axis as in the KITTI devkit.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .errors import DepthTooSmall

#: Minimum depth (meters) for a point to count as in front of the camera.
EPS_DEPTH = 1e-6

# Unit cube corners ordered by binary counting, v1 on the most significant bit.
UNIT_CORNERS = np.array(
    [[1.0 if (j >> (2 - k)) & 1 else -1.0 for k in range(3)] for j in range(8)]
)


def normalize_angle(theta):
    """Wrap an angle to (-pi, pi]."""
    t = math.remainder(float(theta), 2.0 * math.pi)
    if t <= -math.pi:
        t += 2.0 * math.pi
    return t


def angle_diff(a, b):
    """Signed difference ``a - b`` wrapped to (-pi, pi]. Works on arrays."""
    d = np.remainder(np.asarray(a, dtype=float) - b + np.pi, 2.0 * np.pi) - np.pi
    d = np.where(d <= -np.pi, d + 2.0 * np.pi, d)
    return d if d.ndim else float(d)


def rotation_y(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class Box3D:
    """Upright 3D box ``(h, w, l, x_c, y_c, z_c, theta)``."""

    h: float
    w: float
    l: float
    x: float
    y: float
    z: float
    theta: float

    def __post_init__(self):
        for name in ("h", "w", "l", "x", "y", "z", "theta"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.h > 0 and self.w > 0 and self.l > 0):
            raise ValueError(f"box dimensions must be positive, got {self.dims}")
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @classmethod
    def from_array(cls, params) -> "Box3D":
        return cls(*np.asarray(params, dtype=float).tolist())

    def as_array(self) -> np.ndarray:
        return np.array([self.h, self.w, self.l, self.x, self.y, self.z, self.theta])

    @property
    def dims(self):
        return (self.h, self.w, self.l)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def volume(self) -> float:
        return self.h * self.w * self.l

    @property
    def observation_angle(self) -> float:
        """Viewing angle onto the object, ``theta - atan2(x, z)``."""
        return normalize_angle(self.theta - math.atan2(self.x, self.z))


@dataclass(frozen=True)
class Box2D:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"invalid 2D box {self.as_array()}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=float)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self):
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera given by a 3x4 projection matrix ``P = [K | p4]``."""

    P: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        if P.shape != (3, 4):
            raise ValueError(f"projection matrix must be 3x4, got {P.shape}")
        if abs(np.linalg.det(P[:, :3])) < 1e-12:
            raise ValueError("left 3x3 block of P is singular")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @classmethod
    def from_intrinsics(cls, f, cx, cy, fy=None, t=(0.0, 0.0, 0.0)) -> "Camera":
        K = np.array([[f, 0.0, cx], [0.0, f if fy is None else fy, cy], [0.0, 0.0, 1.0]])
        return cls(np.hstack([K, np.reshape(t, (3, 1))]))

    @property
    def K(self) -> np.ndarray:
        return self.P[:, :3]

    def __eq__(self, other):
        return isinstance(other, Camera) and np.array_equal(self.P, other.P)

    def __hash__(self):
        return hash(self.P.tobytes())


def project_points(camera: Camera, points) -> np.ndarray:
    """Project an ``(n, 3)`` array of points to ``(n, 2)`` pixels."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    q = pts @ camera.P[:, :3].T + camera.P[:, 3]
    if np.any(q[:, 2] <= EPS_DEPTH):
        raise DepthTooSmall(f"projective depth {q[:, 2].min():.3g} <= {EPS_DEPTH}")
    return q[:, :2] / q[:, 2:3]


def project_point(camera: Camera, point) -> np.ndarray:
    return project_points(camera, point)[0]


def box_corners(box: Box3D) -> np.ndarray:
    """The 8 corners of ``box`` as an ``(8, 3)`` array.

    Corner ``j`` is ``R_y(theta) @ (l*v1, h*v2, w*v3) / 2 + center`` with
    ``v = UNIT_CORNERS[j]``; corner ``7 - j`` is diagonally opposite ``j``.
    """
    half = 0.5 * np.array([box.l, box.h, box.w])
    offsets = (UNIT_CORNERS * half) @ rotation_y(box.theta).T
    return offsets + box.center


def projected_envelope(camera: Camera, box: Box3D) -> Box2D:
    """Axis-aligned image rectangle enclosing the projected box corners."""
    px = project_points(camera, box_corners(box))
    lo, hi = px.min(axis=0), px.max(axis=0)
    return Box2D(lo[0], lo[1], hi[0], hi[1])


def iou_2d(a: Box2D, b: Box2D) -> float:
    if a.area <= 0 or b.area <= 0:
        return 0.0
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


# ---------------------------------------------------------------------------
# Oriented overlap. The helpers below accept real or complex scalars so that
# complex-step differentiation can be pushed through the clipping; all
# branching decisions look at real parts only.


def _cos_sin(t):
    if isinstance(t, complex):
        return cmath.cos(t), cmath.sin(t)
    return math.cos(t), math.sin(t)


def _re(v):
    return v.real if isinstance(v, complex) else v


def bev_rectangle(l, w, x, z, theta):
    """Counter-clockwise footprint corners ``[(x, z), ...]`` in the ground plane."""
    c, s = _cos_sin(theta)
    ax, az = 0.5 * l * c, -0.5 * l * s  # heading half-axis
    bx, bz = 0.5 * w * s, 0.5 * w * c  # lateral half-axis
    return [
        (x + ax + bx, z + az + bz),
        (x - ax + bx, z - az + bz),
        (x - ax - bx, z - az - bz),
        (x + ax - bx, z + az - bz),
    ]


def clip_convex(subject, clip):
    """Sutherland-Hodgman: clip polygon ``subject`` by convex CCW polygon ``clip``."""
    out = list(subject)
    n = len(clip)
    for i in range(n):
        if not out:
            break
        px, pz = clip[i]
        qx, qz = clip[(i + 1) % n]
        ex, ez = qx - px, qz - pz
        inp = out
        out = []
        side = [ex * (vz - pz) - ez * (vx - px) for vx, vz in inp]
        m = len(inp)
        for k in range(m):
            cur, prev = inp[k], inp[k - 1]
            sc, sp = side[k], side[k - 1]
            cur_in, prev_in = _re(sc) >= 0, _re(sp) >= 0
            if cur_in != prev_in:
                t = sp / (sp - sc)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            if cur_in:
                out.append(cur)
    return out


def polygon_area(poly):
    """Signed shoelace area (positive for counter-clockwise)."""
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, z0 = poly[i]
        x1, z1 = poly[(i + 1) % n]
        acc = acc + x0 * z1 - x1 * z0
    return 0.5 * acc


def _bev_intersection(pa, pb):
    ra = bev_rectangle(pa[2], pa[1], pa[3], pa[5], pa[6])
    rb = bev_rectangle(pb[2], pb[1], pb[3], pb[5], pb[6])
    area = polygon_area(clip_convex(ra, rb))
    return area if _re(area) > 0 else 0.0


def _vertical_overlap(pa, pb):
    lo = pa[4] - 0.5 * pa[0] if _re(pa[4] - 0.5 * pa[0]) > _re(pb[4] - 0.5 * pb[0]) else pb[4] - 0.5 * pb[0]
    hi = pa[4] + 0.5 * pa[0] if _re(pa[4] + 0.5 * pa[0]) < _re(pb[4] + 0.5 * pb[0]) else pb[4] + 0.5 * pb[0]
    ov = hi - lo
    return ov if _re(ov) > 0 else 0.0


def iou3d_params(pa, pb):
    """3D IoU of two boxes given as 7-sequences (real or complex entries)."""
    inter = _bev_intersection(pa, pb)
    if _re(inter) <= 0:
        return 0.0
    inter = inter * _vertical_overlap(pa, pb)
    va = pa[0] * pa[1] * pa[2]
    vb = pb[0] * pb[1] * pb[2]
    union = va + vb - inter
    if _re(union) <= 0 or _re(inter) <= 0:
        return 0.0
    return inter / union


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Oriented 3D IoU of two upright boxes.

    The intersection volume is the area of the clipped ground-plane
    footprints times the overlap of the vertical extents.
    """
    return float(iou3d_params(a.as_array().tolist(), b.as_array().tolist()))


def iou_bev(a: Box3D, b: Box3D) -> float:
    """Bird's-eye-view IoU of the two footprints."""
    pa, pb = a.as_array().tolist(), b.as_array().tolist()
    inter = _bev_intersection(pa, pb)
    union = a.l * a.w + b.l * b.w - inter
    return float(inter / union) if inter > 0 and union > 0 else 0.0
