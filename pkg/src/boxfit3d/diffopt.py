"""Differentiating through the box fit.

The fitted box ``b_hat(y, sigma)`` is defined implicitly by the stationarity
condition ``grad_b E(b_hat; y, sigma) = 0``; its Jacobians follow from the
implicit function theorem. Combined with the gradient of the 3D IoU and the
Jacobians of a regressor producing ``(y, log sigma)``, this gives the full
chain-rule gradient of the IoU loss with respect to the regressor weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import BoxFitError, EmptyDetections, NotConverged, RankDeficient, ZeroIntersection
from .fitting import FitProblem, FitResult, initialize, residuals, solve
from .geometry import Box3D, iou3d_params, iou_3d
from .targets import N_TARGETS, TargetContext, TargetVector, model_and_jacobian


@dataclass(frozen=True, eq=False)
class ImplicitJacobians:
    db_dy: np.ndarray  # (7, 26)
    db_dsigma: np.ndarray  # (7, 26)


def _second_order_term(params, problem: FitProblem, r, rel_step=1e-5):
    """``sum_i r_i * Hess(r_i)`` by central differences of the analytic Jacobian."""
    ctx = problem.context
    v = -r * problem.weights  # Hess(r_i) = -w_i Hess(f_i)
    S = np.empty((7, 7))
    for k in range(7):
        step = rel_step * max(1.0, abs(params[k]))
        bp, bm = params.copy(), params.copy()
        bp[k] += step
        bm[k] -= step
        dJ = (model_and_jacobian(bp, ctx)[1] - model_and_jacobian(bm, ctx)[1]) / (2.0 * step)
        S[:, k] = dJ.T @ v
    return 0.5 * (S + S.T)


def ift_jacobians(jac, resid, sigma, second_order=None) -> ImplicitJacobians:
    """Implicit Jacobians from the residual Jacobian ``jac = dr/db`` at an optimum.

    With ``r_i = (y_i - f_i(b)) / sigma_i``, differentiating the stationarity
    condition ``J^T r = 0`` gives

    * ``d b/d y = -H^-1 J^T diag(1/sigma)``
    * ``d b/d sigma = -H^-1 J^T diag(-2 r / sigma)``

    where the factor 2 for sigma collects both the residual and the Jacobian
    (``J_i`` is proportional to ``1/sigma_i``). ``H = J^T J`` plus the optional
    ``second_order`` matrix ``sum_i r_i Hess(r_i)``.
    """
    jac = np.asarray(jac, dtype=float)
    resid = np.asarray(resid, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    H = jac.T @ jac
    if second_order is not None:
        H = H + second_order
    s = np.linalg.svd(H, compute_uv=False)
    if s[-1] <= 1e-12 * s[0]:
        raise RankDeficient("normal matrix is singular at the optimum")
    Hinv_JT = np.linalg.solve(H, jac.T)
    db_dy = -Hinv_JT / sigma
    db_dsigma = Hinv_JT * (2.0 * resid / sigma)
    return ImplicitJacobians(db_dy, db_dsigma)


def implicit_jacobians(fit: FitResult, problem: FitProblem, hessian: str = "exact") -> ImplicitJacobians:
    """Jacobians of the fitted box with respect to ``y`` and ``sigma``.

    ``hessian="exact"`` (default) includes the residual-curvature term
    ``sum_i r_i Hess(r_i)``; ``hessian="gauss_newton"`` drops it, i.e. uses
    the pseudo-inverse of ``dr/db``, which is exact only for zero-residual
    fits and is off by O(residual) otherwise.
    """
    if not fit.converged:
        raise NotConverged("implicit Jacobians need a converged fit")
    params = fit.box.as_array()
    r, J = residuals(params, problem)
    extra = None
    if hessian == "exact":
        extra = _second_order_term(params, problem, r)
    elif hessian != "gauss_newton":
        raise ValueError(f"unknown hessian mode {hessian!r}")
    return ift_jacobians(J, r, problem.y.sigma, extra)


# ---------------------------------------------------------------------------
# IoU loss and its gradient


def best_match(box: Box3D, ground_truth: Sequence[Box3D]):
    """Index and IoU of the best-overlapping ground truth (first on ties)."""
    best, best_iou = -1, 0.0
    for g, gt in enumerate(ground_truth):
        v = iou_3d(box, gt)
        if v > best_iou:
            best, best_iou = g, v
    return best, best_iou


def iou_loss(detections: Sequence[Box3D], ground_truth: Sequence[Box3D]) -> float:
    """``1 - mean_d max_g IoU3D(d, g)``."""
    if len(detections) == 0:
        raise EmptyDetections("IoU loss needs at least one detection")
    return 1.0 - sum(best_match(d, ground_truth)[1] for d in detections) / len(detections)


class IoUGradient(NamedTuple):
    grad: np.ndarray
    nonsmooth: bool = False
    zero_intersection: bool = False


def iou3d_grad(a: Box3D, b: Box3D, method: str = "central", step: float = 1e-4,
               tol: float = 1e-3, strict: bool = False) -> IoUGradient:
    """Gradient of ``IoU3D(a, b)`` with respect to the 7 parameters of ``a``.

    ``method="central"`` uses central differences with step
    ``step * max(1, |a_k|)`` and flags the point as nonsmooth where forward
    and backward differences disagree by more than ``10 * tol``.
    ``method="complex"`` is complex-step differentiation through the polygon
    clipping, exact to rounding wherever the clipping topology is locally
    constant. Coincident boxes return a zero gradient flagged nonsmooth.
    Disjoint boxes give a zero gradient with ``zero_intersection`` set, or
    raise :class:`ZeroIntersection` when ``strict``.
    """
    pa, pb = a.as_array().tolist(), b.as_array().tolist()
    f0 = iou3d_params(pa, pb)
    if f0 <= 0:
        if strict:
            raise ZeroIntersection("boxes do not overlap")
        return IoUGradient(np.zeros(7), False, True)
    if f0 >= 1.0 - 1e-12:
        # coincident boxes: the global maximum, where zero is a subgradient
        return IoUGradient(np.zeros(7), True, False)

    grad = np.empty(7)
    nonsmooth = False
    if method == "complex":
        h = 1e-30
        for k in range(7):
            pc = [complex(v) for v in pa]
            pc[k] += 1j * h
            val = iou3d_params(pc, pb)
            grad[k] = val.imag / h if isinstance(val, complex) else 0.0
        return IoUGradient(grad, False, False)
    if method != "central":
        raise ValueError(f"unknown method {method!r}")
    for k in range(7):
        hk = step * max(1.0, abs(pa[k]))
        pp, pm = list(pa), list(pa)
        pp[k] += hk
        pm[k] -= hk
        fp, fm = iou3d_params(pp, pb), iou3d_params(pm, pb)
        grad[k] = (fp - fm) / (2.0 * hk)
        if abs((fp - f0) - (f0 - fm)) / hk > 10.0 * tol:
            nonsmooth = True
    return IoUGradient(grad, nonsmooth, False)


# ---------------------------------------------------------------------------
# Regression losses


def loss_homoscedastic(residuals, sigmas) -> float:
    """Mean over samples of ``sum_k r_k**2 / (2 sigma_k**2) + log sigma_k``.

    ``residuals`` has shape ``(n_samples, n_targets)``; ``sigmas`` is shared.
    """
    r = np.atleast_2d(np.asarray(residuals, dtype=float))
    s = np.asarray(sigmas, dtype=float)
    return float(np.mean(np.sum(r ** 2 / (2.0 * s ** 2) + np.log(s), axis=1)))


def loss_heteroscedastic(residual, sigma):
    """Per-element Gaussian NLL plus an exponential prior on the precision.

    ``r**2 / (2 sigma**2) + log sigma + 1 / (2 sigma**2)``; minimising over
    sigma gives ``sigma**2 = 1 + r**2``.
    """
    r = np.asarray(residual, dtype=float)
    s = np.asarray(sigma, dtype=float)
    out = (r ** 2 + 1.0) / (2.0 * s ** 2) + np.log(s)
    return out if out.ndim else float(out)


def loss_heteroscedastic_grad(residual, log_sigma):
    """Derivatives of :func:`loss_heteroscedastic` w.r.t. the residual and ``log sigma``."""
    r = np.asarray(residual, dtype=float)
    prec = np.exp(-2.0 * np.asarray(log_sigma, dtype=float))
    return r * prec, 1.0 - (r ** 2 + 1.0) * prec


# ---------------------------------------------------------------------------
# Toy regressor and end-to-end gradient


@dataclass(eq=False)
class ToyRegressor:
    """Small map from per-object features to ``(y, log sigma)``.

    ``out = W2 @ act(features) + b2`` with ``act`` the identity or, when
    ``hidden > 0``, ``tanh(W1 @ features + b1)``. The 52 raw outputs are
    de-normalised as ``y = y_offset + y_scale * out[:26]`` and
    ``log sigma = log_sigma_offset + out[26:]``. Only ``params`` is trained.
    """

    n_features: int
    params: np.ndarray
    hidden: int = 0
    y_offset: np.ndarray = field(default_factory=lambda: np.zeros(N_TARGETS))
    y_scale: np.ndarray = field(default_factory=lambda: np.ones(N_TARGETS))
    log_sigma_offset: np.ndarray = field(default_factory=lambda: np.zeros(N_TARGETS))

    @staticmethod
    def param_count(n_features: int, hidden: int = 0) -> int:
        n_in = hidden if hidden else n_features
        first = hidden * (n_features + 1) if hidden else 0
        return first + 2 * N_TARGETS * (n_in + 1)

    @classmethod
    def create(cls, n_features: int, hidden: int = 0, rng=None, scale: float = 0.1, **kwargs):
        rng = np.random.default_rng(rng)
        params = scale * rng.standard_normal(cls.param_count(n_features, hidden))
        return cls(n_features, params, hidden, **kwargs)

    def copy(self, params=None) -> "ToyRegressor":
        return ToyRegressor(self.n_features, np.array(self.params if params is None else params, dtype=float),
                            self.hidden, self.y_offset, self.y_scale, self.log_sigma_offset)

    def _unpack(self):
        F, Hd, O = self.n_features, self.hidden, 2 * N_TARGETS
        p, i = self.params, 0
        W1 = b1 = None
        if Hd:
            W1 = p[i:i + Hd * F].reshape(Hd, F)
            i += Hd * F
            b1 = p[i:i + Hd]
            i += Hd
        n_in = Hd if Hd else F
        W2 = p[i:i + O * n_in].reshape(O, n_in)
        i += O * n_in
        b2 = p[i:i + O]
        return W1, b1, W2, b2

    def _hidden(self, X):
        W1, b1, _, _ = self._unpack()
        return np.tanh(X @ W1.T + b1) if self.hidden else X

    def forward(self, features):
        """Predicted ``(y, log_sigma)``, each of shape ``(n, 26)``."""
        X = np.atleast_2d(np.asarray(features, dtype=float))
        _, _, W2, b2 = self._unpack()
        out = self._hidden(X) @ W2.T + b2
        y = self.y_offset + self.y_scale * out[:, :N_TARGETS]
        return y, self.log_sigma_offset + out[:, N_TARGETS:]

    def backward(self, features, grad_y, grad_log_sigma) -> np.ndarray:
        """Vector-Jacobian product: gradient over ``params`` of ``<grad_y, y> + <grad_log_sigma, log sigma>``."""
        X = np.atleast_2d(np.asarray(features, dtype=float))
        W1, b1, W2, b2 = self._unpack()
        A = self._hidden(X)
        g_out = np.hstack([np.atleast_2d(grad_y) * self.y_scale, np.atleast_2d(grad_log_sigma)])
        parts = []
        if self.hidden:
            g_pre = (g_out @ W2) * (1.0 - A ** 2)
            parts += [(g_pre.T @ X).ravel(), g_pre.sum(axis=0)]
        parts += [(g_out.T @ A).ravel(), g_out.sum(axis=0)]
        return np.concatenate(parts)


@dataclass(frozen=True, eq=False)
class TrainingScene:
    """Ground truth of one image plus the anchor context of each detection."""

    contexts: Sequence[TargetContext]
    ground_truth: Sequence[Box3D]


@dataclass(eq=False)
class EndToEndResult:
    loss: float
    grad: np.ndarray
    boxes: list
    failures: list


def _fit_detection(y, log_sigma, ctx, fit_kwargs):
    tv = TargetVector(y, np.exp(log_sigma), ctx)
    problem = FitProblem(tv)
    return problem, solve(problem, initialize(tv), **fit_kwargs)


def end_to_end_loss(regressor: ToyRegressor, features, scenes: Sequence[TrainingScene], fit_kwargs=None) -> float:
    """IoU loss of the full pipeline (regressor, initialisation, fit)."""
    return end_to_end_grad(regressor, features, scenes, fit_kwargs=fit_kwargs, with_grad=False).loss


def end_to_end_grad(regressor: ToyRegressor, features, scenes: Sequence[TrainingScene],
                    hessian: str = "exact", iou_method: str = "complex", fit_kwargs=None,
                    with_grad: bool = True) -> EndToEndResult:
    """IoU loss over all detections and its gradient over the regressor weights.

    ``features[s]`` holds one row per detection of ``scenes[s]``. Detections
    whose fit fails, does not converge or misses every ground-truth box add
    to the loss but contribute no gradient; they are listed in ``failures``.
    The IoU gradient defaults to complex-step differentiation, since central
    differences straddle face coincidences once fits approach ground truth.
    """
    fit_kwargs = dict(fit_kwargs or {})
    fit_kwargs.setdefault("with_covariance", False)
    n_det = sum(len(s.contexts) for s in scenes)
    if n_det == 0:
        raise EmptyDetections("no detections in the training scenes")
    grad = np.zeros_like(regressor.params)
    total_iou = 0.0
    boxes, failures = [], []
    for s, scene in enumerate(scenes):
        X = np.atleast_2d(features[s])
        Y, LS = regressor.forward(X)
        gY = np.zeros_like(Y)
        gLS = np.zeros_like(LS)
        for d, ctx in enumerate(scene.contexts):
            try:
                problem, fit = _fit_detection(Y[d], LS[d], ctx, fit_kwargs)
            except BoxFitError as exc:
                boxes.append(None)
                failures.append((s, d, exc))
                continue
            boxes.append(fit.box)
            g, best = best_match(fit.box, scene.ground_truth)
            total_iou += best
            if not with_grad:
                continue
            if g < 0:
                failures.append((s, d, ZeroIntersection("no overlapping ground truth")))
                continue
            if not fit.converged:
                failures.append((s, d, NotConverged("fit stopped before convergence")))
                continue
            try:
                jac = implicit_jacobians(fit, problem, hessian=hessian)
            except BoxFitError as exc:
                failures.append((s, d, exc))
                continue
            dL_db = -iou3d_grad(fit.box, scene.ground_truth[g], method=iou_method).grad / n_det
            gY[d] = dL_db @ jac.db_dy
            gLS[d] = (dL_db @ jac.db_dsigma) * problem.y.sigma
        if with_grad:
            grad += regressor.backward(X, gY, gLS)
    return EndToEndResult(1.0 - total_iou / n_det, grad, boxes, failures)
