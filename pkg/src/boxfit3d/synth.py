"""Synthetic scenes for desk-scale experiments.

Objects are sampled in front of a KITTI-like camera, fully visible and not
overlapping each other in the ground plane. For every object an anchor
pixel is drawn from its support region and the surrogate targets are
encoded there, once exactly and once with Gaussian noise of the configured
per-target standard deviation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .detection import Candidate, DensePredictions
from .errors import DepthTooSmall, RejectionOverflow
from .geometry import Box2D, Box3D, Camera, iou_2d, iou_bev, projected_envelope
from .targets import (
    N_TARGETS,
    TARGET_GROUPS,
    TargetContext,
    TargetVector,
    anchor_pixel,
    assign_support_regions,
    encode,
    support_region,
)

#: KITTI object 000000 P2 (left color camera, rectified)
KITTI_P2 = np.array([
    [721.5377, 0.0, 609.5593, 44.85728],
    [0.0, 721.5377, 172.854, 0.2163791],
    [0.0, 0.0, 1.0, 0.002745884],
])

#: mean and std of (h, w, l) in meters
DIMENSION_PRIORS = {
    "Car": ((1.53, 1.63, 3.88), (0.14, 0.10, 0.43)),
    "Pedestrian": ((1.76, 0.66, 0.84), (0.11, 0.14, 0.23)),
    "Cyclist": ((1.74, 0.60, 1.76), (0.09, 0.12, 0.18)),
}

DEFAULT_SIGMA = {"box2d": 2.0, "distance": 0.5, "orientation": 0.05, "dimensions": 0.05, "corners": 2.0}


def sigma_vector(group_sigma) -> np.ndarray:
    """Expand per-group standard deviations to the 26 targets."""
    s = np.empty(N_TARGETS)
    for name, sl in TARGET_GROUPS.items():
        s[sl] = group_sigma[name]
    return s


@dataclass
class SynthConfig:
    n_objects: tuple = (1, 4)
    x_range: tuple = (-12.0, 12.0)
    y_range: tuple = (0.6, 1.0)  # object center height, y down
    z_range: tuple = (6.0, 45.0)
    yaw_range: tuple = (-math.pi, math.pi)
    class_probs: dict = field(default_factory=lambda: {"Car": 1.0})
    dimension_priors: dict = field(default_factory=lambda: dict(DIMENSION_PRIORS))
    noise_sigma: dict = field(default_factory=lambda: dict(DEFAULT_SIGMA))
    noise_scale: float = 1.0
    camera: np.ndarray = field(default_factory=lambda: KITTI_P2.copy())
    image_size: tuple = (1242, 375)  # (width, height)
    stride: float = 4.0
    min_height_px: float = 25.0
    max_iou_2d: float = 0.3
    seed: int = 0

    def __post_init__(self):
        for name in ("n_objects", "x_range", "y_range", "z_range", "yaw_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: {lo} > {hi}")
        if self.n_objects[0] < 0:
            raise ValueError("object count must be non-negative")

    @property
    def sigma(self) -> np.ndarray:
        return sigma_vector(self.noise_sigma)

    @property
    def grid_shape(self):
        w, h = self.image_size
        return math.ceil(h / self.stride), math.ceil(w / self.stride)


@dataclass(frozen=True, eq=False)
class SceneObject:
    label: str
    box3d: Box3D
    box2d: Box2D


@dataclass(frozen=True, eq=False)
class Scene:
    camera: Camera
    objects: tuple
    image_size: tuple = (1242, 375)


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    scene: Scene
    clean: tuple  # TargetVector per object, exact encoding
    noisy: tuple  # same anchors and sigma, with noise added


def _sample_object(rng, config: SynthConfig, camera, placed, max_tries=1000):
    labels = list(config.class_probs)
    probs = np.array([config.class_probs[k] for k in labels], dtype=float)
    w_img, h_img = config.image_size
    for _ in range(max_tries):
        label = labels[rng.choice(len(labels), p=probs / probs.sum())]
        mean, std = config.dimension_priors[label]
        dims = np.maximum(rng.normal(mean, std), 0.25 * np.asarray(mean))
        box = Box3D(*dims, rng.uniform(*config.x_range), rng.uniform(*config.y_range),
                    rng.uniform(*config.z_range), rng.uniform(*config.yaw_range))
        try:
            env = projected_envelope(camera, box)
        except DepthTooSmall:
            continue
        if env.x1 < 0 or env.y1 < 0 or env.x2 > w_img or env.y2 > h_img:
            continue
        if env.height < config.min_height_px:
            continue
        if any(iou_bev(box, o.box3d) > 0 or iou_2d(env, o.box2d) > config.max_iou_2d for o in placed):
            continue
        return SceneObject(label, box, env)
    raise RejectionOverflow(f"could not place a valid object in {max_tries} tries")


def generate_scene(config: SynthConfig, rng=None) -> SyntheticScene:
    """Sample one scene; ``rng`` defaults to a generator seeded by ``config.seed``."""
    rng = np.random.default_rng(config.seed if rng is None else rng)
    camera = Camera(config.camera)
    n = int(rng.integers(config.n_objects[0], config.n_objects[1] + 1))
    objects = []
    for _ in range(n):
        objects.append(_sample_object(rng, config, camera, objects))

    sigma = config.sigma
    clean, noisy = [], []
    rows, cols = config.grid_shape
    for obj in objects:
        region = support_region(obj.box2d, config.stride)
        r = int(rng.integers(max(region.y_min, 0), min(region.y_max, rows)))
        c = int(rng.integers(max(region.x_min, 0), min(region.x_max, cols)))
        ctx = TargetContext(anchor_pixel(r, c, config.stride), camera)
        f = encode(obj.box3d, obj.box2d, ctx)
        clean.append(TargetVector(f, sigma, ctx))
        noisy.append(TargetVector(f + config.noise_scale * sigma * rng.standard_normal(N_TARGETS), sigma, ctx))
    return SyntheticScene(Scene(camera, tuple(objects), tuple(config.image_size)), tuple(clean), tuple(noisy))


def generate_dataset(config: SynthConfig, n_scenes: int):
    """``n_scenes`` scenes, each from its own child stream of ``config.seed``."""
    streams = np.random.SeedSequence(config.seed).spawn(n_scenes)
    return [generate_scene(config, np.random.default_rng(s)) for s in streams]


def dense_predictions(synth: SyntheticScene, config: SynthConfig, noisy: bool = False, rng=None,
                      score: float = 0.9) -> DensePredictions:
    """Network-style output maps: every support-region cell carries its owner's targets.

    Overlapping support regions go to the closer object. With ``noisy``
    each cell gets an independent noise draw.
    """
    rng = np.random.default_rng(rng)
    scene = synth.scene
    labels = sorted({o.label for o in scene.objects}) or ["Car"]
    rows, cols = config.grid_shape
    regions = [support_region(o.box2d, config.stride, owner=i) for i, o in enumerate(scene.objects)]
    dists = [float(np.linalg.norm(o.box3d.center)) for o in scene.objects]
    owner = assign_support_regions(regions, dists, (rows, cols))
    sigma = config.sigma
    scores = np.zeros((len(labels), rows, cols))
    y = np.zeros((rows, cols, N_TARGETS))
    s = np.ones((rows, cols, N_TARGETS))
    for r, c in zip(*np.nonzero(owner >= 0)):
        obj = scene.objects[owner[r, c]]
        ctx = TargetContext(anchor_pixel(r, c, config.stride), scene.camera)
        f = encode(obj.box3d, obj.box2d, ctx)
        if noisy:
            f = f + config.noise_scale * sigma * rng.standard_normal(N_TARGETS)
        scores[labels.index(obj.label), r, c] = score
        y[r, c] = f
        s[r, c] = sigma
    return DensePredictions(scores, y, s, scene.camera, tuple(labels), config.stride)


def candidate_list(synth: SyntheticScene, config: SynthConfig, noisy: bool = False, rng=None,
                   n_background: int = 0):
    """Candidates from :func:`dense_predictions` plus low-score background cells."""
    rng = np.random.default_rng(rng)
    dense = dense_predictions(synth, config, noisy, rng)
    cands = dense.candidates(min_score=1e-9)
    for _ in range(n_background if synth.clean else 0):
        tv = synth.clean[int(rng.integers(len(synth.clean)))]
        cands.append(Candidate(synth.scene.objects[0].label, float(rng.uniform(0.0, 0.5)), tv))
    return cands
