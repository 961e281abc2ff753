"""Cascade Patchmatch multi-view stereo.

Estimates per-view depth maps from posed images by iterating randomized
hypothesis search with adaptive propagation and cost evaluation across a
three-stage coarse-to-fine cascade, then filters and fuses the depth maps
into a point cloud.
"""

from .coeffs import CoefficientSet, load_coefficients, save_coefficients
from .fusion import FilterParams, FusedCloud, fuse, geometric_filter, photometric_filter, read_ply, write_ply
from .geometry import CameraModel, RelativePose, read_camera_file, relative_pose, write_camera_file
from .harness import CloudMetrics, SyntheticScene, error_cdf, eval_clouds, parse_scene_text, render
from .hypothesis import StageConfig, default_stage_configs
from .imgio import read_image, read_pfm, write_image, write_pfm
from .pipeline import DepthResult, PipelineConfig, refine, run_cascade

__version__ = "0.1.0"

__all__ = [
    "CameraModel",
    "RelativePose",
    "relative_pose",
    "read_camera_file",
    "write_camera_file",
    "CoefficientSet",
    "load_coefficients",
    "save_coefficients",
    "StageConfig",
    "default_stage_configs",
    "PipelineConfig",
    "DepthResult",
    "run_cascade",
    "refine",
    "FilterParams",
    "FusedCloud",
    "photometric_filter",
    "geometric_filter",
    "fuse",
    "read_ply",
    "write_ply",
    "SyntheticScene",
    "CloudMetrics",
    "render",
    "parse_scene_text",
    "eval_clouds",
    "error_cdf",
    "read_pfm",
    "write_pfm",
    "read_image",
    "write_image",
    "__version__",
]
