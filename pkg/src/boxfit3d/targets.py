"""Surrogate regression targets.

A box is encoded, relative to an anchor pixel ``p = (x, y)``, into 26 image
domain quantities (0-based indices):

====== ====================================== =========
index  quantity                               unit
====== ====================================== =========
0:4    ``(x - x1, y - y1, x2 - x, y2 - y)``   pixels
4      distance ``||(x_c, y_c, z_c)||``        meters
5:7    ``(sin(alpha), cos(alpha))``            --
7:10   ``(log h, log w, log l)``               log-m
10:26  projected corners minus ``p``, (u, v)   pixels
====== ====================================== =========

with ``alpha = theta - atan2(x_c, z_c)`` the observation angle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import EPS_DEPTH, UNIT_CORNERS, Box2D, Box3D, Camera
from .errors import DepthTooSmall

N_TARGETS = 26
BOX2D = slice(0, 4)
DIST = 4
ORIENT = slice(5, 7)
LOG_DIMS = slice(7, 10)
CORNERS = slice(10, 26)

TARGET_GROUPS = {"box2d": BOX2D, "distance": slice(4, 5), "orientation": ORIENT,
                 "dimensions": LOG_DIMS, "corners": CORNERS}


@dataclass(frozen=True, eq=False)
class TargetContext:
    """Anchor pixel and camera that give the targets their meaning."""

    pixel: tuple
    camera: Camera

    def __post_init__(self):
        px = tuple(float(v) for v in self.pixel)
        if len(px) != 2 or not all(math.isfinite(v) for v in px):
            raise ValueError(f"anchor pixel must be two finite numbers, got {self.pixel}")
        object.__setattr__(self, "pixel", px)


@dataclass(frozen=True, eq=False)
class TargetVector:
    """Regressed targets ``y`` with per-target standard deviations ``sigma``."""

    y: np.ndarray
    sigma: np.ndarray
    context: TargetContext

    def __post_init__(self):
        y = np.array(self.y, dtype=float).reshape(-1)
        sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), y.shape).copy()
        if y.shape != (N_TARGETS,):
            raise ValueError(f"expected {N_TARGETS} targets, got {y.shape}")
        if not np.all(sigma > 0):
            raise ValueError("all sigma must be positive")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma", sigma)

    @property
    def weights(self) -> np.ndarray:
        return 1.0 / self.sigma

    def box2d(self) -> Box2D:
        """2D box decoded from the anchor pixel and the first four targets."""
        x, y = self.context.pixel
        f = self.y
        return Box2D(x - f[0], y - f[1], x + f[2], y + f[3])


def encode(box: Box3D, box2d: Box2D, ctx: TargetContext) -> np.ndarray:
    """Exact forward encoding of ``box`` with an explicitly given 2D box."""
    f = residual_targets(box, ctx)
    x, y = ctx.pixel
    f[BOX2D] = (x - box2d.x1, y - box2d.y1, box2d.x2 - x, box2d.y2 - y)
    return f


def residual_targets(box: Box3D, ctx: TargetContext) -> np.ndarray:
    """Model targets ``f(b)``; the 2D box is the projected envelope."""
    return model_targets(box.as_array(), ctx)


def model_targets(params, ctx: TargetContext) -> np.ndarray:
    return _forward(np.asarray(params, dtype=float), ctx, False)[0]


def model_and_jacobian(params, ctx: TargetContext):
    """``f(b)`` and the analytic ``(26, 7)`` Jacobian ``df/db``.

    ``params`` is the raw 7-array ``(h, w, l, x, y, z, theta)``; theta is not
    wrapped, which keeps the map smooth for finite-difference checks. The
    envelope rows take the derivative of the extremal corner.
    """
    return _forward(np.asarray(params, dtype=float), ctx, True)


def _forward(b, ctx, with_jac):
    h, w, l, xc, yc, zc, t = b
    if not (h > 0 and w > 0 and l > 0):
        raise ValueError(f"box dimensions must be positive, got {b[:3]}")
    c, s = math.cos(t), math.sin(t)
    R = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    local = UNIT_CORNERS * (0.5 * np.array([l, h, w]))
    X = local @ R.T + b[3:6]

    P = ctx.camera.P
    M = P[:, :3]
    q = X @ M.T + P[:, 3]
    if np.any(q[:, 2] <= EPS_DEPTH):
        raise DepthTooSmall(f"corner depth {q[:, 2].min():.3g} <= {EPS_DEPTH}")
    u = q[:, 0] / q[:, 2]
    v = q[:, 1] / q[:, 2]
    px, py = ctx.pixel

    d = math.sqrt(xc * xc + yc * yc + zc * zc)
    rho2 = xc * xc + zc * zc
    alpha = t - math.atan2(xc, zc)
    sa, ca = math.sin(alpha), math.cos(alpha)

    iu_min, iu_max = int(np.argmin(u)), int(np.argmax(u))
    iv_min, iv_max = int(np.argmin(v)), int(np.argmax(v))

    f = np.empty(26)
    f[0] = px - u[iu_min]
    f[1] = py - v[iv_min]
    f[2] = u[iu_max] - px
    f[3] = v[iv_max] - py
    f[4] = d
    f[5] = sa
    f[6] = ca
    f[7] = math.log(h)
    f[8] = math.log(w)
    f[9] = math.log(l)
    f[10::2] = u - px
    f[11::2] = v - py
    if not with_jac:
        return f, None

    # dX/db for every corner, shape (8, 3, 7)
    dXdb = np.zeros((8, 3, 7))
    dXdb[:, :, 0] = 0.5 * UNIT_CORNERS[:, 1:2] * R[:, 1]
    dXdb[:, :, 1] = 0.5 * UNIT_CORNERS[:, 2:3] * R[:, 2]
    dXdb[:, :, 2] = 0.5 * UNIT_CORNERS[:, 0:1] * R[:, 0]
    dXdb[:, 0, 3] = dXdb[:, 1, 4] = dXdb[:, 2, 5] = 1.0
    dR = np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])
    dXdb[:, :, 6] = local @ dR.T

    inv_q = 1.0 / q[:, 2:3]
    dudX = (M[0] - u[:, None] * M[2]) * inv_q
    dvdX = (M[1] - v[:, None] * M[2]) * inv_q
    dudb = np.einsum("jk,jkp->jp", dudX, dXdb)
    dvdb = np.einsum("jk,jkp->jp", dvdX, dXdb)

    J = np.zeros((26, 7))
    J[0] = -dudb[iu_min]
    J[1] = -dvdb[iv_min]
    J[2] = dudb[iu_max]
    J[3] = dvdb[iv_max]
    if d > 0:
        J[4, 3:6] = (xc / d, yc / d, zc / d)
    dalpha = np.zeros(7)
    dalpha[6] = 1.0
    if rho2 > 0:
        dalpha[3] = -zc / rho2
        dalpha[5] = xc / rho2
    J[5] = ca * dalpha
    J[6] = -sa * dalpha
    J[7, 0] = 1.0 / h
    J[8, 1] = 1.0 / w
    J[9, 2] = 1.0 / l
    J[10::2] = dudb
    J[11::2] = dvdb
    return f, J


def corner_pixels(y, ctx: TargetContext) -> np.ndarray:
    """Absolute ``(8, 2)`` corner pixel positions decoded from targets."""
    return np.asarray(y, dtype=float)[CORNERS].reshape(8, 2) + np.asarray(ctx.pixel)


# ---------------------------------------------------------------------------
# Support regions


@dataclass(frozen=True)
class SupportRegion:
    """Half-open rectangle of output-grid cells ``[x_min, x_max) x [y_min, y_max)``.

    Cell ``(col, row)`` covers input pixels ``[col, col + 1) * stride``
    horizontally (likewise for rows).
    """

    x_min: int
    y_min: int
    x_max: int
    y_max: int
    owner: int | None = None

    def cells(self):
        for row in range(self.y_min, self.y_max):
            for col in range(self.x_min, self.x_max):
                yield row, col

    @property
    def size(self) -> int:
        return max(0, self.x_max - self.x_min) * max(0, self.y_max - self.y_min)


def _grid_range(center, half, stride):
    if 2.0 * half < stride:
        k = math.floor(center / stride)
        return k, k + 1
    lo = math.floor((center - half) / stride)
    hi = math.ceil((center + half) / stride)
    return lo, max(hi, lo + 1)


def support_region(box2d: Box2D, stride: float = 1.0, owner=None, fraction: float = 0.2) -> SupportRegion:
    """Central rectangle of ``box2d`` scaled by ``fraction`` on the output grid.

    ``stride`` is the input-pixel size of one output cell; the default of 1
    means ``box2d`` is already in output-grid units. A region narrower than a
    cell collapses to the single cell holding the box center.
    """
    cx, cy = box2d.center
    x0, x1 = _grid_range(cx, 0.5 * fraction * box2d.width, stride)
    y0, y1 = _grid_range(cy, 0.5 * fraction * box2d.height, stride)
    return SupportRegion(x0, y0, x1, y1, owner)


def anchor_pixel(row: int, col: int, stride: float = 1.0):
    """Input-image pixel at the center of output cell ``(row, col)``."""
    return ((col + 0.5) * stride, (row + 0.5) * stride)


def assign_support_regions(regions, distances, grid_shape) -> np.ndarray:
    """Owner map of shape ``grid_shape`` (``-1`` = unassigned).

    Where regions overlap the object with the smaller distance wins; equal
    distances go to the lower index.
    """
    owner = np.full(grid_shape, -1, dtype=int)
    rows, cols = grid_shape
    order = sorted(range(len(regions)), key=lambda i: (-distances[i], -i))
    for i in order:
        r = regions[i]
        owner[max(r.y_min, 0):min(r.y_max, rows), max(r.x_min, 0):min(r.x_max, cols)] = i
    return owner

