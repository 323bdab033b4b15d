"""Detection metrics: AP under 2D / BEV / 3D IoU, AOS and ALP.

Detections and ground truth are given per image as sequences of
:class:`EvalBox`. Matching is greedy in descending score within an image; the
precision-recall curve is accumulated over all images and summarised by
N-point interpolated average precision (11 points by default, 40 optional).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .geometry import Box2D, Box3D, iou_2d, iou_3d, iou_bev

KINDS = ("2d", "bev", "3d", "alp")


@dataclass(frozen=True, eq=False)
class EvalBox:
    """A detection or ground-truth object as seen by the evaluator.

    ``ignore`` marks don't-care ground truth (and detections outside the
    evaluated difficulty); detections matched to them count neither as true
    nor as false positives.
    """

    box2d: Box2D
    box3d: Box3D | None = None
    score: float = 1.0
    label: str = "Car"
    truncated: float = 0.0
    occluded: int = 0
    ignore: bool = False


@dataclass(frozen=True)
class EvalCriterion:
    kind: str = "3d"
    iou_threshold: float = 0.7
    localization_threshold: float = 1.0  # meters, ALP only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"criterion kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError(f"IoU threshold must be in (0, 1], got {self.iou_threshold}")
        if not self.localization_threshold > 0:
            raise ValueError("localization threshold must be positive")

    def score(self, det: EvalBox, gt: EvalBox):
        """``(similarity, passes)`` for one detection / ground-truth pair."""
        if self.kind != "2d" and (det.box3d is None or gt.box3d is None):
            return 0.0, False
        if self.kind == "2d" or self.kind == "alp":
            sim = iou_2d(det.box2d, gt.box2d)
        elif self.kind == "bev":
            sim = iou_bev(det.box3d, gt.box3d)
        else:
            sim = iou_3d(det.box3d, gt.box3d)
        ok = sim >= self.iou_threshold
        if ok and self.kind == "alp":
            ok = float(np.linalg.norm(det.box3d.center - gt.box3d.center)) <= self.localization_threshold
        return sim, ok


@dataclass(eq=False)
class Assignment:
    """Per-image matching. ``status[i]`` is ``"tp"``, ``"fp"`` or ``"ignored"``."""

    status: list
    gt_index: list
    n_gt: int

    @property
    def tp(self):
        return self.status.count("tp")

    @property
    def fp(self):
        return self.status.count("fp")

    @property
    def fn(self):
        return self.n_gt - self.tp


@dataclass(eq=False)
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    ap: float


def match_detections(dets: Sequence[EvalBox], gts: Sequence[EvalBox], criterion: EvalCriterion) -> Assignment:
    """Greedy one-to-one matching of one image's detections to ground truth.

    Detections are visited by descending score (stable). Each takes the
    most similar unmatched, non-ignored ground truth among those passing the
    criterion; failing that, a passing ignored ground truth makes it
    ``"ignored"``; otherwise it is a false positive.
    """
    status = ["fp"] * len(dets)
    gt_index = [-1] * len(dets)
    used = [False] * len(gts)
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    for i in order:
        det = dets[i]
        if det.ignore:
            status[i] = "ignored"
            continue
        best, best_sim, hits_ignored = -1, -math.inf, False
        for g, gt in enumerate(gts):
            if used[g]:
                continue
            sim, ok = criterion.score(det, gt)
            if not ok:
                continue
            if gt.ignore:
                hits_ignored = True
            elif sim > best_sim:
                best, best_sim = g, sim
        if best >= 0:
            used[best] = True
            status[i] = "tp"
            gt_index[i] = best
        elif hits_ignored:
            status[i] = "ignored"
    return Assignment(status, gt_index, sum(not g.ignore for g in gts))


def _per_image(x):
    x = list(x)
    if x and isinstance(x[0], EvalBox):
        return [x]
    return x


def _recall_grid(points):
    if points == 11:
        return np.linspace(0.0, 1.0, 11)
    if points == 40:
        return np.linspace(1.0 / 40.0, 1.0, 40)
    raise ValueError(f"interpolation uses 11 or 40 points, got {points}")


def _interpolated(recall, values, points):
    grid = _recall_grid(points)
    out = np.zeros(len(grid))
    for k, r in enumerate(grid):
        mask = recall >= r - 1e-12
        if np.any(mask):
            out[k] = values[mask].max()
    return float(out.mean())


def _ranked(dets, gts, criterion, weight=None):
    """Score-ranked ``(score, tp, weight)`` rows over all images plus the GT count."""
    dets, gts = _per_image(dets), _per_image(gts)
    if not dets:
        dets = [[] for _ in gts]
    if len(dets) != len(gts):
        raise ValueError(f"{len(dets)} detection images vs {len(gts)} ground-truth images")
    rows, n_gt = [], 0
    for img_dets, img_gts in zip(dets, gts):
        a = match_detections(img_dets, img_gts, criterion)
        n_gt += a.n_gt
        for i, st in enumerate(a.status):
            if st == "ignored":
                continue
            tp = st == "tp"
            wgt = weight(img_dets[i], img_gts[a.gt_index[i]]) if (tp and weight) else float(tp)
            rows.append((img_dets[i].score, tp, wgt))
    rows.sort(key=lambda t: -t[0])
    return rows, n_gt


def _curve(rows, n_gt):
    tp = np.cumsum([float(r[1]) for r in rows]) if rows else np.zeros(0)
    wsum = np.cumsum([r[2] for r in rows]) if rows else np.zeros(0)
    k = np.arange(1, len(rows) + 1)
    recall = tp / n_gt if n_gt else np.zeros(len(rows))
    return recall, tp / k if len(rows) else np.zeros(0), wsum / k if len(rows) else np.zeros(0)


def precision_recall(dets, gts, criterion: EvalCriterion, points: int = 11) -> PRCurve:
    rows, n_gt = _ranked(dets, gts, criterion)
    recall, precision, _ = _curve(rows, n_gt)
    ap = _interpolated(recall, precision, points) if n_gt else 0.0
    return PRCurve(recall, precision, ap)


def average_precision(dets, gts, criterion: EvalCriterion, points: int = 11) -> float:
    """Interpolated AP; ``points`` is 11 (recall 0, 0.1, ..., 1) or 40."""
    return precision_recall(dets, gts, criterion, points).ap


def orientation_similarity(det: EvalBox, gt: EvalBox) -> float:
    """``(1 + cos(delta alpha)) / 2`` for the observation-angle error."""
    da = det.box3d.observation_angle - gt.box3d.observation_angle
    return 0.5 * (1.0 + math.cos(da))


def average_orientation_similarity(dets, gts, iou_threshold: float = 0.7, points: int = 11) -> float:
    """AOS: AP on 2D IoU matching where every true positive is weighted by
    its orientation similarity."""
    rows, n_gt = _ranked(dets, gts, EvalCriterion("2d", iou_threshold), orientation_similarity)
    if not n_gt:
        return 0.0
    recall, _, similarity = _curve(rows, n_gt)
    return _interpolated(recall, similarity, points)


def average_localization_precision(dets, gts, max_dist: float = 1.0, iou_threshold: float = 0.7,
                                   points: int = 11) -> float:
    """AP under the joint criterion 2D IoU >= threshold and center error <= ``max_dist``."""
    return average_precision(dets, gts, EvalCriterion("alp", iou_threshold, max_dist), points)


# ---------------------------------------------------------------------------
# KITTI difficulty levels and class filtering

#: level -> (min 2D box height in px, max occlusion level, max truncation)
DIFFICULTY = {
    "easy": (40.0, 0, 0.15),
    "moderate": (25.0, 1, 0.30),
    "hard": (25.0, 2, 0.50),
}

#: classes treated as don't-care when evaluating the key class
NEIGHBOR_CLASSES = {"Car": ("Van",), "Pedestrian": ("Person_sitting",)}


def select_class(dets, gts, label: str = "Car", difficulty: str | None = None, levels=None):
    """Per-image lists restricted to ``label`` with ignore flags set.

    Ground truth of neighbouring classes, ``DontCare`` regions and objects
    outside the difficulty level are kept as ignored; detections of other
    classes are dropped and those below the level's minimum height ignored.
    """
    levels = levels or DIFFICULTY
    min_h, max_occ, max_trunc = levels[difficulty] if difficulty else (0.0, math.inf, math.inf)
    neighbors = NEIGHBOR_CLASSES.get(label, ())
    out_d, out_g = [], []
    dets, gts = _per_image(dets), _per_image(gts)
    for img_dets, img_gts in zip(dets or [[] for _ in gts], gts):
        g_out = []
        for g in img_gts:
            if g.label == label:
                hard = g.occluded > max_occ or g.truncated > max_trunc or g.box2d.height < min_h
                g_out.append(replace(g, ignore=g.ignore or hard))
            elif g.label in neighbors or g.label == "DontCare":
                g_out.append(replace(g, ignore=True))
        d_out = [replace(d, ignore=d.ignore or d.box2d.height < min_h) for d in img_dets if d.label == label]
        out_d.append(d_out)
        out_g.append(g_out)
    return out_d, out_g
