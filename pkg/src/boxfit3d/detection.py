"""Candidate filtering and the per-image detection pipeline.

candidates -> score threshold -> per-class greedy NMS -> initialise -> fit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BoxFitError, NotConverged
from .fitting import FitProblem, FitResult, initialize, solve
from .geometry import Box2D, Camera, iou_2d
from .targets import N_TARGETS, TargetContext, TargetVector, anchor_pixel


@dataclass(frozen=True, eq=False)
class Candidate:
    label: str
    score: float
    targets: TargetVector
    box2d: Box2D | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if self.box2d is None:
            object.__setattr__(self, "box2d", self.targets.box2d())


@dataclass(frozen=True, eq=False)
class Detection:
    candidate: Candidate
    fit: FitResult

    @property
    def label(self):
        return self.candidate.label

    @property
    def score(self):
        return self.candidate.score

    @property
    def box(self):
        return self.fit.box

    @property
    def box2d(self):
        return self.candidate.box2d

    @property
    def covariance(self):
        return self.fit.covariance


@dataclass(frozen=True, eq=False)
class DensePredictions:
    """Network-style output maps on a grid of ``stride``-pixel cells.

    ``scores`` is ``(n_classes, rows, cols)``; ``y`` and ``sigma`` are
    ``(rows, cols, 26)``. Cell ``(r, c)`` is anchored at input pixel
    ``((c + 0.5) * stride, (r + 0.5) * stride)``.
    """

    scores: np.ndarray
    y: np.ndarray
    sigma: np.ndarray
    camera: Camera
    labels: Sequence[str]
    stride: float = 4.0

    def candidates(self, min_score: float = 0.0):
        """One candidate per (class, cell) with score at least ``min_score``."""
        out = []
        for k, label in enumerate(self.labels):
            rows, cols = np.nonzero(self.scores[k] >= min_score)
            for r, c in zip(rows.tolist(), cols.tolist()):
                ctx = TargetContext(anchor_pixel(r, c, self.stride), self.camera)
                tv = TargetVector(self.y[r, c], self.sigma[r, c], ctx)
                out.append(Candidate(label, float(self.scores[k, r, c]), tv))
        return out


@dataclass
class PipelineConfig:
    score_thresh: float = 0.7
    nms_thresh: float = 0.3
    compute_covariance: bool = True
    max_iterations: int = 50
    center_init: str = "corners"


@dataclass(eq=False)
class PipelineResult:
    detections: list
    failures: list = field(default_factory=list)  # (candidate, exception)


def threshold_candidates(candidates: Sequence[Candidate], min_score: float = 0.7):
    """Keep candidates with ``score >= min_score``."""
    return [c for c in candidates if c.score >= min_score]


def nms(candidates: Sequence[Candidate], iou_threshold: float = 0.3):
    """Greedy per-class non-maximum suppression on the 2D boxes.

    Candidates are visited in descending score (stable for ties); one is
    dropped if its 2D IoU with an already kept candidate of the same class
    exceeds ``iou_threshold``. The output keeps that visiting order.
    """
    order = sorted(range(len(candidates)), key=lambda i: -candidates[i].score)
    kept = []
    by_class = {}
    for i in order:
        cand = candidates[i]
        selected = by_class.setdefault(cand.label, [])
        if all(iou_2d(cand.box2d, other.box2d) <= iou_threshold for other in selected):
            selected.append(cand)
            kept.append(cand)
    return kept


def fit_candidate(cand: Candidate, config: PipelineConfig) -> Detection:
    problem = FitProblem(cand.targets)
    init = initialize(cand.targets, center=config.center_init)
    result = solve(problem, init, max_iterations=config.max_iterations,
                   with_covariance=config.compute_covariance)
    if not result.converged:
        raise NotConverged(f"no convergence after {result.iterations} iterations")
    return Detection(cand, result)


def run_pipeline(predictions, config: PipelineConfig | None = None, map_fn: Callable = map) -> PipelineResult:
    """Threshold, suppress and fit.

    ``predictions`` is either a :class:`DensePredictions` or a sequence of
    :class:`Candidate`. Per-candidate fits are independent; pass e.g. an
    executor's ``map`` as ``map_fn`` to run them concurrently. Candidates
    whose fit raises or does not converge are reported in ``failures``.
    """
    config = config or PipelineConfig()
    if isinstance(predictions, DensePredictions):
        cands = predictions.candidates(config.score_thresh)
    else:
        cands = threshold_candidates(predictions, config.score_thresh)
    cands = nms(cands, config.nms_thresh)

    def attempt(cand):
        try:
            return fit_candidate(cand, config)
        except BoxFitError as exc:
            return exc

    result = PipelineResult([])
    for cand, out in zip(cands, map_fn(attempt, cands)):
        if isinstance(out, Detection):
            result.detections.append(out)
        else:
            result.failures.append((cand, out))
    return result


def dense_from_candidates(shape, labels, camera, stride, placed):
    """Assemble :class:`DensePredictions` from ``{(row, col): (class_idx, score, y, sigma)}``."""
    rows, cols = shape
    scores = np.zeros((len(labels), rows, cols))
    y = np.zeros((rows, cols, N_TARGETS))
    sigma = np.ones((rows, cols, N_TARGETS))
    for (r, c), (k, s, yy, ss) in placed.items():
        scores[k, r, c] = s
        y[r, c] = yy
        sigma[r, c] = ss
    return DensePredictions(scores, y, sigma, camera, tuple(labels), stride)
