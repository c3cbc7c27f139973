"""Semantic Gaussians with spherical-harmonic semantics for voxel scene completion."""

from .config import FitConfig, config_from_text, config_to_text, read_config, write_config
from .errors import DivergenceError, InvalidInputError, SphereError, SphereIOError, UnsupportedDegreeError
from .fit import FitResult, ParamVector, Problem, check_gradient, finite_diff_check, fit
from .gaussians import SemanticGaussian, VoxelGrid, build_covariance, quat_to_rotation, splat
from .harmonics import ShProjection, eval_ssh, expand_semantics, orth_loss, sh_basis
from .heads import fuse, gauss_predict, voxel_head
from .io import SceneFile, read_gaussians, read_scene, write_gaussians, write_scene
from .losses import align_loss, ce_loss, lovasz_loss, scal_loss, total_loss
from .metrics import MetricsReport, compute_metrics
from .pipeline import build_problem, run_pipeline
from .scene import AnchorSet, GaussianHead, TpvPlanes, init_gaussians, select_anchors, similarity_map, tpv_pool
from .synth import gen_features, gen_scene

__version__ = "0.1.0"

__all__ = [
    "AnchorSet",
    "DivergenceError",
    "FitConfig",
    "FitResult",
    "GaussianHead",
    "InvalidInputError",
    "MetricsReport",
    "ParamVector",
    "Problem",
    "SceneFile",
    "SemanticGaussian",
    "ShProjection",
    "SphereError",
    "SphereIOError",
    "TpvPlanes",
    "UnsupportedDegreeError",
    "VoxelGrid",
    "align_loss",
    "build_covariance",
    "build_problem",
    "ce_loss",
    "check_gradient",
    "compute_metrics",
    "config_from_text",
    "config_to_text",
    "eval_ssh",
    "expand_semantics",
    "finite_diff_check",
    "fit",
    "fuse",
    "gauss_predict",
    "gen_features",
    "gen_scene",
    "init_gaussians",
    "lovasz_loss",
    "orth_loss",
    "quat_to_rotation",
    "read_config",
    "read_gaussians",
    "read_scene",
    "run_pipeline",
    "scal_loss",
    "select_anchors",
    "sh_basis",
    "similarity_map",
    "splat",
    "total_loss",
    "tpv_pool",
    "voxel_head",
    "write_config",
    "write_gaussians",
    "write_scene",
]
