"""Landmark-guided 3D morphable face fitting with self-consistency losses."""
from facefit.errors import (
    DegenerateLandmarks,
    DimensionMismatch,
    FaceFitError,
    NonFiniteLoss,
)
from facefit.kernels import BACKEND
from facefit.model import (
    FaceModel,
    FaceParams,
    landmarks_of,
    load_model,
    make_synthetic_model,
    save_model,
    synthesize_shape,
)
from facefit.pose import (
    LandmarkObservation,
    PoseTransform,
    decompose,
    project,
    solve_pose,
    umeyama_similarity,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DegenerateLandmarks",
    "DimensionMismatch",
    "FaceFitError",
    "FaceModel",
    "FaceParams",
    "LandmarkObservation",
    "NonFiniteLoss",
    "PoseTransform",
    "decompose",
    "landmarks_of",
    "load_model",
    "make_synthetic_model",
    "project",
    "save_model",
    "solve_pose",
    "synthesize_shape",
    "umeyama_similarity",
]
