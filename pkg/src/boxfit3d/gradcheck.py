"""Finite-difference checks of every analytic derivative in the package."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffopt import end_to_end_grad, end_to_end_loss, implicit_jacobians, iou3d_grad
from .fitting import FitProblem, fit, initialize, residuals, solve
from .geometry import Box3D, iou_3d
from .synth import SynthConfig, generate_dataset
from .targets import TargetVector


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tol)

    def __str__(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<34s} max rel err {self.error:.3e}  (tol {self.tol:.0e})"


def _scenes(n, seed, noise_scale=0.3):
    cfg = SynthConfig(n_objects=(1, 3), seed=seed, noise_scale=noise_scale)
    return [tv for s in generate_dataset(cfg, n) for tv in s.noisy]


def check_residual_jacobian(n=100, seed=0, tol=1e-4) -> CheckResult:
    """Analytic ``dr/db`` against central differences (step 1e-6 scaled per parameter)."""
    worst = 0.0
    rng = np.random.default_rng(seed)
    tvs = _scenes(n, seed)[:n]
    for tv in tvs:
        problem = FitProblem(tv)
        b = initialize(tv).as_array() + 0.05 * rng.standard_normal(7) * [0.1, 0.1, 0.1, 1, 1, 1, 1]
        _, J = residuals(b, problem)
        fd = np.empty_like(J)
        for k in range(7):
            h = 1e-6 * max(1.0, abs(b[k]))
            bp, bm = b.copy(), b.copy()
            bp[k] += h
            bm[k] -= h
            fd[:, k] = (residuals(bp, problem)[0] - residuals(bm, problem)[0]) / (2 * h)
        scale = np.max(np.abs(fd), axis=0)
        worst = max(worst, float(np.max(np.abs(J - fd) / np.maximum(scale, 1e-12))))
    return CheckResult("residual Jacobian dr/db", worst, tol)


def check_implicit_jacobians(n=5, seed=1, tol=1e-3, step_y=1e-5, step_sigma=1e-3) -> CheckResult:
    """``db/dy`` and ``db/dsigma`` against re-solving at perturbed inputs."""
    worst = 0.0
    tight = dict(gtol=1e-13, xtol=1e-16, with_covariance=False)
    for tv in _scenes(n, seed)[:n]:
        problem = FitProblem(tv)
        res = solve(problem, initialize(tv), **tight)
        jac = implicit_jacobians(res, problem)
        y, s, ctx = tv.y, tv.sigma, tv.context

        def b_of(yy, ss):
            return fit(TargetVector(yy, ss, ctx), **tight).params

        fdy, fds = np.empty((7, 26)), np.empty((7, 26))
        for i in range(26):
            e = np.zeros(26)
            e[i] = step_y * max(1.0, abs(y[i]))
            fdy[:, i] = (b_of(y + e, s) - b_of(y - e, s)) / (2 * e[i])
            e = np.zeros(26)
            e[i] = step_sigma * s[i]
            fds[:, i] = (b_of(y, s + e) - b_of(y, s - e)) / (2 * e[i])
        for a, b in ((jac.db_dy, fdy), (jac.db_dsigma, fds)):
            worst = max(worst, float(np.linalg.norm(a - b) / np.linalg.norm(b)))
    return CheckResult("implicit db/dy, db/dsigma", worst, tol)


def check_iou_gradient(n=50, seed=2, tol=1e-4) -> CheckResult:
    """Central-difference IoU gradient against complex-step differentiation."""
    rng = np.random.default_rng(seed)
    worst, done = 0.0, 0
    while done < n:
        a = Box3D(*rng.uniform([1, 1, 2, -1, -0.5, 9, -3], [2, 2, 5, 1, 0.5, 11, 3]))
        b = Box3D(*rng.uniform([1, 1, 2, -1, -0.5, 9, -3], [2, 2, 5, 1, 0.5, 11, 3]))
        if iou_3d(a, b) <= 0.05:
            continue
        g = iou3d_grad(a, b)
        if g.nonsmooth:
            continue
        gc = iou3d_grad(a, b, method="complex").grad
        worst = max(worst, float(np.max(np.abs(g.grad - gc)) / max(np.max(np.abs(gc)), 1e-12)))
        done += 1
    return CheckResult("IoU3D gradient", worst, tol)


def check_end_to_end(seed=0, tol=1e-3, eps=1e-6) -> CheckResult:
    """Full chain-rule gradient over regressor weights against pipeline differences."""
    from .training import make_regressor, make_toy_problem, pretrain_method2

    problem, stats = make_toy_problem(2, 3, seed=seed, config=SynthConfig(n_objects=(1, 2), seed=seed))
    reg = make_regressor(problem, stats, seed=seed)
    pretrain_method2(reg, problem, steps=300)
    grad = end_to_end_grad(reg, problem.features, problem.scenes).grad
    tight = dict(gtol=1e-12, xtol=1e-15)
    fd = np.empty_like(grad)
    for k in range(len(fd)):
        p = reg.params.copy()
        p[k] += eps
        lp = end_to_end_loss(reg.copy(p), problem.features, problem.scenes, tight)
        p[k] -= 2 * eps
        lm = end_to_end_loss(reg.copy(p), problem.features, problem.scenes, tight)
        fd[k] = (lp - lm) / (2 * eps)
    return CheckResult("end-to-end dL_IoU/dW", float(np.linalg.norm(grad - fd) / np.linalg.norm(fd)), tol)


def run_all(quick=False, log=print):
    checks = [
        lambda: check_residual_jacobian(20 if quick else 100),
        lambda: check_implicit_jacobians(2 if quick else 5),
        lambda: check_iou_gradient(10 if quick else 50),
        lambda: check_end_to_end(),
    ]
    results = []
    for run in checks:
        res = run()
        log(str(res))
        results.append(res)
    return results
