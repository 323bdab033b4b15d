"""Monocular 3D bounding-box fitting from image-domain surrogate targets."""
from .detection import Candidate, Detection, DensePredictions, PipelineConfig, nms, run_pipeline
from .diffopt import (
    ImplicitJacobians,
    ToyRegressor,
    end_to_end_grad,
    implicit_jacobians,
    iou3d_grad,
    iou_loss,
    loss_heteroscedastic,
    loss_homoscedastic,
)
from .errors import *  # noqa: F401,F403
from .fitting import FitProblem, FitResult, covariance, fit, initialize, solve
from .geometry import Box2D, Box3D, Camera, box_corners, iou_2d, iou_3d, iou_bev, project_points
from .metrics import EvalBox, EvalCriterion, average_orientation_similarity, average_precision
from .synth import SynthConfig, generate_dataset, generate_scene
from .targets import TargetContext, TargetVector, encode, support_region

__version__ = "0.1.0"
