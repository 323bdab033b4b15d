"""Weighted non-linear least-squares box fitting.

The cost is ``E(b) = sum_i (w_i * (y_i - f_i(b)))**2`` with ``w_i = 1/sigma_i``
and ``f`` the surrogate-target model of :mod:`boxfit3d.targets`. It is
minimised by Levenberg-Marquardt from a closed-form initial estimate, and the
box covariance is the Gauss-Newton inverse ``(J^T J)^-1`` at the optimum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateOrientation, DepthTooSmall, NonpositiveDistance, RankDeficient
from .geometry import Box3D, normalize_angle
from .targets import CORNERS, DIST, LOG_DIMS, TargetVector, model_and_jacobian

N_PARAMS = 7
PARAM_NAMES = ("h", "w", "l", "x", "y", "z", "theta")


@dataclass(frozen=True, eq=False)
class FitProblem:
    """One detection's regressed targets; the weights are ``1 / sigma``."""

    y: TargetVector

    @property
    def weights(self) -> np.ndarray:
        return self.y.weights

    @property
    def context(self):
        return self.y.context


@dataclass(frozen=True, eq=False)
class FitResult:
    box: Box3D
    covariance: np.ndarray | None
    final_cost: float
    iterations: int
    converged: bool
    gradient_norm: float = math.nan
    cost_history: tuple = field(default=())

    @property
    def params(self) -> np.ndarray:
        return self.box.as_array()


def residuals(params, problem: FitProblem):
    """Weighted residuals ``r = w * (y - f(b))`` and ``dr/db`` (26 x 7)."""
    f, Jf = model_and_jacobian(params, problem.context)
    w = problem.weights
    return w * (problem.y.y - f), -w[:, None] * Jf


def cost(params, problem: FitProblem) -> float:
    r, _ = residuals(params, problem)
    return float(r @ r)


# ---------------------------------------------------------------------------
# Initial estimate


def _projected_center_from_corners(corners):
    """Least-squares intersection of the four projected space diagonals.

    Projection preserves incidence, so the image of the 3D center lies on
    the line through every pair of opposite corners ``(j, 7 - j)``.
    """
    A = np.zeros((2, 2))
    rhs = np.zeros(2)
    for j in range(4):
        p, q = corners[j], corners[7 - j]
        dx, dy = q - p
        norm = math.hypot(dx, dy)
        if norm < 1e-9:
            continue
        n = np.array([-dy, dx]) / norm
        nn = np.outer(n, n)
        A += nn
        rhs += nn @ p
    ev = np.linalg.eigvalsh(A)
    if ev[0] < 1e-6 * max(ev[1], 1e-300):
        return None
    return np.linalg.solve(A, rhs)


def _backproject_at_distance(camera, pixel, d):
    """Point on the viewing ray of ``pixel`` at distance ``d`` from the origin."""
    M_inv = np.linalg.inv(camera.P[:, :3])
    a = M_inv @ np.array([pixel[0], pixel[1], 1.0])
    b0 = M_inv @ camera.P[:, 3]
    aa, ab = a @ a, a @ b0
    disc = ab * ab - aa * (b0 @ b0 - d * d)
    lam = (ab + math.sqrt(disc)) / aa if disc > 0 else ab / aa
    return lam * a - b0


def initialize(y: TargetVector, center: str = "corners") -> Box3D:
    """Piecewise closed-form box estimate from regressed targets.

    Dimensions come from the log-size targets and the distance directly. The
    center is placed at that distance along the viewing ray of the object's
    projected center. With ``center="corners"`` (default) the projected
    center is the intersection of the projected space diagonals, which is
    exact for noiseless targets; ``center="box2d"`` uses the 2D box center,
    which is only exact for objects on the optical axis. Either pixel is
    mapped through the inverse intrinsics before scaling to the distance.
    Falls back to the 2D box center if the diagonals are degenerate.
    """
    f = y.y
    s, c = f[5], f[6]
    if math.hypot(s, c) < 1e-6:
        raise DegenerateOrientation(f"orientation targets ({s:.3g}, {c:.3g}) near zero")
    d = f[DIST]
    if not d > 0:
        raise NonpositiveDistance(f"distance target {d:.3g} is not positive")
    ctx = y.context

    pix = None
    if center == "corners":
        pix = _projected_center_from_corners(f[CORNERS].reshape(8, 2) + np.asarray(ctx.pixel))
    elif center != "box2d":
        raise ValueError(f"unknown center mode {center!r}")
    if pix is None:
        pix = y.box2d().center

    xc, yc, zc = _backproject_at_distance(ctx.camera, pix, d)
    theta = math.atan2(s, c) + math.atan2(xc, zc)
    h, w, l = np.exp(f[LOG_DIMS])
    return Box3D(h, w, l, xc, yc, zc, theta)


# ---------------------------------------------------------------------------
# Levenberg-Marquardt


def solve(problem: FitProblem, init: Box3D, *, max_iterations: int = 50, lambda0: float = 1e-3,
          gtol: float = 1e-8, xtol: float = 1e-10, with_covariance: bool = True) -> FitResult:
    """Minimise the weighted cost from ``init`` with Levenberg-Marquardt.

    Damping is Marquardt's ``lambda * diag(J^T J)`` (x10 on reject, /10 on
    accept), which makes the iterates invariant to a common rescaling of the
    weights. Convergence: ``||grad E||_inf / mean(w**2) < gtol`` or an
    accepted step with ``||delta|| < xtol * (1 + ||b||)``. On hitting
    ``max_iterations`` the best iterate is returned with ``converged=False``.
    """
    b = init.as_array()
    r, J = residuals(b, problem)
    E = float(r @ r)
    gscale = float(np.mean(problem.weights ** 2))
    lam = lambda0
    history = [E]
    converged = False
    iterations = 0
    gnorm = math.inf

    for _ in range(max_iterations + 1):
        g = J.T @ r
        gnorm = 2.0 * float(np.max(np.abs(g))) / gscale
        if gnorm < gtol:
            converged = True
            break
        if iterations == max_iterations:
            break
        A = J.T @ J
        diag = np.maximum(np.diag(A), 1e-12 * max(np.max(np.diag(A)), 1e-300))
        accepted = False
        while lam < 1e16:
            try:
                delta = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            b_new = b + delta
            b_new[6] = normalize_angle(b_new[6])
            try:
                if np.any(b_new[:3] <= 0):
                    raise ValueError
                r_new, J_new = residuals(b_new, problem)
            except (DepthTooSmall, ValueError):
                lam *= 10.0
                continue
            E_new = float(r_new @ r_new)
            # Near the optimum E is flat to rounding; then a smaller gradient decides.
            flat = E_new <= E * (1.0 + 1e-13) + 1e-300
            if E_new <= E or (flat and np.max(np.abs(J_new.T @ r_new)) < 0.5 * np.max(np.abs(g))):
                accepted = True
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
        if not accepted:
            # No descent direction left at working precision.
            converged = gnorm < math.sqrt(gtol)
            break
        iterations += 1
        step = float(np.linalg.norm(delta))
        b, r, J, E = b_new, r_new, J_new, E_new
        history.append(E)
        if step < xtol * (1.0 + float(np.linalg.norm(b))):
            gnorm = 2.0 * float(np.max(np.abs(J.T @ r))) / gscale
            converged = True
            break

    cov = None
    if with_covariance:
        try:
            cov = gauss_newton_covariance(J)
        except RankDeficient:
            cov = None
    return FitResult(Box3D.from_array(b), cov, E, iterations, converged, gnorm, tuple(history))


def fit(y: TargetVector, **kwargs) -> FitResult:
    """Initialise and solve in one call."""
    return solve(FitProblem(y), initialize(y), **kwargs)


# ---------------------------------------------------------------------------
# Covariance


def gauss_newton_covariance(jac, rcond: float = 1e-12) -> np.ndarray:
    """``(J^T J)^-1`` via SVD; raises :class:`RankDeficient` below full column rank."""
    jac = np.asarray(jac, dtype=float)
    n = jac.shape[1]
    if jac.shape[0] < n:
        raise RankDeficient(f"{jac.shape[0]} residuals cannot determine {n} parameters")
    _, s, Vt = np.linalg.svd(jac, full_matrices=False)
    if s[-1] <= rcond * s[0]:
        raise RankDeficient(f"singular values {s[-1]:.3g} / {s[0]:.3g} below rcond")
    cov = (Vt.T / s ** 2) @ Vt
    return 0.5 * (cov + cov.T)


def covariance(at: Box3D, problem: FitProblem) -> np.ndarray:
    """Covariance of the fitted box parameters at ``at``.

    Uses the Gaussian maximum-likelihood convention ``(J^T J)^-1`` on the
    weighted residuals, i.e. the inverse of half the Hessian of ``E``.
    """
    _, J = residuals(at.as_array(), problem)
    return gauss_newton_covariance(J)
