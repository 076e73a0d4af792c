"""Cascade radial-voting 6DoF pose estimation on synthetic point clouds."""
from .config import (
    ExperimentConfig,
    IcpConfig,
    NoiseModel,
    PipelineParams,
    RunConfig,
    SceneConfig,
    VotingConfig,
)
from .errors import RadialPoseError
from .geometry import (
    CameraIntrinsics,
    NormalizationRecord,
    PointCloud,
    RigidTransform,
    apply_transform,
    depth_to_cloud,
    farthest_point_sample,
    recenter_normalize,
)
from .keypoints import KeypointSet, RadiiMatrix, bbox_corner_keypoints, fps_keypoints, gt_radii
from .metrics import add_metric, add_s_metric, auc, miou, vcs
from .pipeline import PosePipeline, RunReport, run_cascade, run_parallel
from .pose import fit_rigid, icp_refine
from .simulator import Scene, make_model, synth_scene
from .voting import Accumulator3D, estimate_keypoints, new_accumulator

__version__ = "0.1.0"

__all__ = [
    "Accumulator3D",
    "CameraIntrinsics",
    "ExperimentConfig",
    "IcpConfig",
    "KeypointSet",
    "NoiseModel",
    "NormalizationRecord",
    "PipelineParams",
    "PointCloud",
    "PosePipeline",
    "RadialPoseError",
    "RadiiMatrix",
    "RigidTransform",
    "RunConfig",
    "RunReport",
    "Scene",
    "SceneConfig",
    "VotingConfig",
    "add_metric",
    "add_s_metric",
    "apply_transform",
    "auc",
    "bbox_corner_keypoints",
    "depth_to_cloud",
    "estimate_keypoints",
    "farthest_point_sample",
    "fit_rigid",
    "fps_keypoints",
    "gt_radii",
    "icp_refine",
    "make_model",
    "miou",
    "new_accumulator",
    "recenter_normalize",
    "run_cascade",
    "run_parallel",
    "synth_scene",
    "vcs",
]
