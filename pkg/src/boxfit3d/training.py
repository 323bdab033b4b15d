"""Toy end-to-end training on synthetic scenes.

A :class:`~boxfit3d.diffopt.ToyRegressor` maps per-object feature vectors
to targets and log standard deviations. It is first fitted with the
heteroscedastic regression loss, then fine-tuned through the box fit with the
3D IoU loss.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffopt import (
    EndToEndResult,
    ToyRegressor,
    TrainingScene,
    end_to_end_grad,
    loss_heteroscedastic,
    loss_heteroscedastic_grad,
)
from .synth import SynthConfig, generate_dataset


class Adam:
    def __init__(self, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params, grad):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass(eq=False)
class ToyProblem:
    features: list  # per scene, (n_objects, n_features)
    scenes: list  # TrainingScene per scene
    targets: list  # per scene, (n_objects, 26) exact targets


def make_toy_problem(n_scenes=5, n_features=8, seed=0, config: SynthConfig | None = None,
                     feature_noise=0.05):
    """Synthetic scenes with features that are a lossy nonlinear view of the targets.

    Features are ``tanh(A @ z) + noise`` with ``z`` the standardised exact
    targets and ``A`` a random ``n_features x 26`` mixing, so an affine
    regressor can only approximate the targets.
    """
    config = config or SynthConfig(n_objects=(1, 3), seed=seed)
    data = generate_dataset(config, n_scenes)
    rng = np.random.default_rng([seed, 1])
    targets = [np.array([tv.y for tv in s.clean]) for s in data]
    allt = np.vstack(targets)
    mean, std = allt.mean(axis=0), allt.std(axis=0) + 1e-3
    A = rng.standard_normal((n_features, allt.shape[1])) / np.sqrt(allt.shape[1])
    features = [np.tanh(((t - mean) / std) @ A.T) + feature_noise * rng.standard_normal((len(t), n_features))
                for t in targets]
    scenes = [TrainingScene(tuple(tv.context for tv in s.clean), tuple(o.box3d for o in s.scene.objects))
              for s in data]
    return ToyProblem(features, scenes, targets), (mean, std)


def make_regressor(problem: ToyProblem, stats, hidden=0, seed=0, scale=0.05) -> ToyRegressor:
    mean, std = stats
    n_features = problem.features[0].shape[1]
    return ToyRegressor.create(n_features, hidden, rng=seed, scale=scale, y_offset=mean, y_scale=std)


def method2_loss_and_grad(reg: ToyRegressor, problem: ToyProblem):
    """Mean heteroscedastic loss over all targets of all objects, and its gradient."""
    n = sum(t.size for t in problem.targets)
    total = 0.0
    grad = np.zeros_like(reg.params)
    for X, T in zip(problem.features, problem.targets):
        Y, LS = reg.forward(X)
        total += float(np.sum(loss_heteroscedastic(Y - T, np.exp(LS))))
        gr, gls = loss_heteroscedastic_grad(Y - T, LS)
        grad += reg.backward(X, gr / n, gls / n)
    return total / n, grad


def pretrain_method2(reg: ToyRegressor, problem: ToyProblem, steps=300, lr=0.02, log=None) -> list:
    opt = Adam(lr)
    history = []
    for it in range(steps):
        loss, grad = method2_loss_and_grad(reg, problem)
        history.append(loss)
        if log and (it % 50 == 0 or it == steps - 1):
            log(f"method2 step {it:4d}  loss {loss:.5f}")
        reg.params = opt.step(reg.params, grad)
    return history


def finetune_method3(reg: ToyRegressor, problem: ToyProblem, steps=100, lr=0.005, log=None) -> list:
    """Adam on the IoU loss; returns the loss before each step and after the last."""
    opt = Adam(lr)
    history = []
    for it in range(steps):
        res: EndToEndResult = end_to_end_grad(reg, problem.features, problem.scenes)
        history.append(res.loss)
        if log and (it % 10 == 0):
            log(f"method3 step {it:4d}  IoU loss {res.loss:.5f}  failures {len(res.failures)}")
        reg.params = opt.step(reg.params, res.grad)
    final = end_to_end_grad(reg, problem.features, problem.scenes, with_grad=False).loss
    history.append(final)
    if log:
        log(f"method3 final      IoU loss {final:.5f}")
    return history
