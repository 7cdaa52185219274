"""Underwater stereo reconstruction: enhancement, rectification, graph-cut stereo, meshing."""

__version__ = "0.1.0"

from .depth import CameraRig, DepthMap, SurfaceMesh, build_mesh, triangulate_depth  # noqa: E402
from .gcstereo import DisparityMap, StereoEnergyParams, solve_disparity  # noqa: E402
from .imgcore import ColorSpace, RasterImage, load_image, save_image  # noqa: E402
from .pipeline import PipelineConfig, StageError, run_pipeline  # noqa: E402
from .synth import SceneKind, SyntheticScene, degrade_scene, generate_scene  # noqa: E402

__all__ = [
    "CameraRig",
    "ColorSpace",
    "DepthMap",
    "DisparityMap",
    "PipelineConfig",
    "RasterImage",
    "SceneKind",
    "StageError",
    "StereoEnergyParams",
    "SurfaceMesh",
    "SyntheticScene",
    "build_mesh",
    "degrade_scene",
    "generate_scene",
    "load_image",
    "run_pipeline",
    "save_image",
    "solve_disparity",
    "triangulate_depth",
]
