"""Occlusion-aware memory retrieval for consistent scene generation.

Per-patch uncertainty scoring, greedy maximum-coverage frame selection and
the usual retrieval baselines, evaluated against a ray-cast synthetic world.
"""

__version__ = "0.1.0"

from .geometry import (
    CameraPose,
    Ray,
    align_trajectory,
    cycle_trajectory,
    interpolate_trajectory,
    look_at,
    pixel_ray,
    plucker_map,
    rotation_error,
    translation_error,
)
from .metrics import coverage_stats, psnr, revisit_consistency, ssim
from .retrieval import (
    CoverageSelector,
    MemoryBank,
    SelectionResult,
    select_fov,
    select_greedy_coverage,
    select_greedy_multi_target,
    select_random,
    select_surfel,
    select_temporal,
    select_topk_mean,
)
from .scorer import (
    PatchFeaturizer,
    ScoringCNN,
    assemble_features,
    oracle_confidence,
    score,
    train_scorer,
    uncertainty_loss,
)
from .warp import Reconstruction, patch_mse_grid, warp_reconstruct
from .world import Frame, Scene, build_scene, cast_ray, render, visibility_fraction

__all__ = [
    "CameraPose",
    "CoverageSelector",
    "Frame",
    "MemoryBank",
    "PatchFeaturizer",
    "Ray",
    "Reconstruction",
    "Scene",
    "ScoringCNN",
    "SelectionResult",
    "align_trajectory",
    "assemble_features",
    "build_scene",
    "cast_ray",
    "coverage_stats",
    "cycle_trajectory",
    "interpolate_trajectory",
    "look_at",
    "oracle_confidence",
    "patch_mse_grid",
    "pixel_ray",
    "plucker_map",
    "psnr",
    "render",
    "revisit_consistency",
    "rotation_error",
    "score",
    "select_fov",
    "select_greedy_coverage",
    "select_greedy_multi_target",
    "select_random",
    "select_surfel",
    "select_temporal",
    "select_topk_mean",
    "ssim",
    "train_scorer",
    "translation_error",
    "uncertainty_loss",
    "visibility_fraction",
    "warp_reconstruct",
]
