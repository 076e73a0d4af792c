"""Pose Estimation FastMCP Server"""
import logging
from typing import Optional

import numpy as np
from fastmcp import FastMCP
from scipy.special import erf

from .config import NoiseModel, PipelineParams, SceneConfig, resolve_log_level
from .errors import RadialPoseError
from .fileio import save_scene
from .geometry import PointCloud, RigidTransform
from .keypoints import gt_radii
from .metrics import add_decision, add_metric, add_s_metric, vcs
from .pipeline import PosePipeline
from .simulator import build_object, oracle_regressor, scene_from_config

logger = logging.getLogger(__name__)

mcp = FastMCP("Pose Estimation Service")


def _scene(shape: str, seed: int, clutter: float, occlusion: float, sensor_sigma: float, K: int = 3):
    recipe = SceneConfig(
        shape=shape,
        clutter_fraction=clutter,
        occlusion_fraction=occlusion,
        sensor_sigma=sensor_sigma,
    )
    model, keypoints = build_object(recipe, K)
    return recipe, model, keypoints, scene_from_config(recipe, model, keypoints, seed)


def synthesize_scene(
    shape: str = "blobby",
    seed: int = 0,
    clutter: float = 0.0,
    occlusion: float = 0.0,
    sensor_sigma: float = 0.0,
    output_path: Optional[str] = None,
) -> dict:
    """Synthesize a labelled scene with a random ground-truth pose

    Args:
        shape: sphere, box, torus or blobby
        seed: scene seed
        clutter: clutter fraction of the scene in [0, 1)
        occlusion: occluded fraction of the object
        sensor_sigma: sensor noise std-dev in scene units
        output_path: optional .ply path; a .json sidecar is written next to it

    Returns:
        Scene size, ground-truth pose and object diameter
    """
    try:
        recipe, _, keypoints, scene = _scene(shape, seed, clutter, occlusion, sensor_sigma)
        if output_path:
            save_scene(scene, output_path, recipe=recipe.to_dict())
    except RadialPoseError as e:
        return e.to_dict()
    except OSError as e:
        return {"error": "io_error", "message": str(e)}
    return {
        "shape": shape,
        "seed": seed,
        "points": len(scene),
        "foreground": int(np.count_nonzero(scene.labels == 1)),
        "gt_pose": scene.gt_pose.to_dict(),
        "diameter": keypoints.diameter,
        "output_path": output_path,
    }


def estimate_pose(
    architecture: str = "cascade",
    shape: str = "blobby",
    seed: int = 0,
    clutter: float = 0.5,
    seg_flip: float = 0.0,
    sigma: float = 0.0,
    outliers: float = 0.0,
    M: int = 256,
    rho: float = 0.02,
    use_icp: bool = False,
) -> dict:
    """Run the cascade or parallel pipeline on a synthetic scene

    Args:
        architecture: cascade or parallel
        shape: object shape of the scene
        seed: scene and oracle seed
        clutter: clutter fraction of the scene
        seg_flip: segmentation label flip rate
        sigma: radius noise std-dev in normalized units
        outliers: share of radii replaced by garbage
        M: number of voters
        rho: voxel edge in normalized units
        use_icp: refine the pose with ICP

    Returns:
        Estimated pose and the run report
    """
    try:
        params = PipelineParams(M=M, rho=rho, use_icp=use_icp)
        _, model, keypoints, scene = _scene(shape, seed, clutter, 0.0, 0.0, params.K)
        noise = NoiseModel(gaussian_sigma=sigma, outlier_fraction=outliers, rng_seed=seed)
        T_est, report = PosePipeline(architecture, params, model, keypoints).run(scene, seg_flip, noise)
    except RadialPoseError as e:
        logger.warning(f"estimate_pose failed: {e.code}: {e.message}")
        return e.to_dict()
    return {"pose": T_est.to_dict(), "report": report.to_dict()}


def evaluate_pose(
    pose: dict,
    shape: str = "blobby",
    seed: int = 0,
    clutter: float = 0.5,
    symmetric: bool = False,
) -> dict:
    """Score a pose against the ground truth of a synthetic scene

    Args:
        pose: {"rotation": 3x3 rows, "translation": [x, y, z]}
        shape: object shape of the scene
        seed: scene seed
        clutter: clutter fraction the scene was synthesized with
        symmetric: decide with ADD-S instead of ADD

    Returns:
        ADD, ADD-S, diameter and the 10%-of-diameter decision
    """
    try:
        T_est = RigidTransform.from_dict(pose)
        _, model, keypoints, scene = _scene(shape, seed, clutter, 0.0, 0.0)
    except RadialPoseError as e:
        return e.to_dict()
    except (KeyError, TypeError, ValueError) as e:
        return {"error": "argument_error", "message": f"invalid pose: {e}"}
    add = add_metric(model, scene.gt_pose, T_est)
    add_s = add_s_metric(model, scene.gt_pose, T_est)
    return {
        "add": add,
        "add_s": add_s,
        "diameter": keypoints.diameter,
        "success": add_decision(add_s if symmetric else add, keypoints.diameter),
    }


def vote_confidence(sigma: float, rho: float, entries: int = 10000, seed: int = 0) -> dict:
    """Empirical vote confidence of the oracle regressor against its closed form

    Args:
        sigma: radius noise std-dev
        rho: voxel edge; a radius within rho of ground truth counts as correct
        entries: number of sampled radii
        seed: oracle seed

    Returns:
        Empirical VCS and erf(rho / (sigma * sqrt(2)))
    """
    if entries < 1 or rho <= 0 or sigma <= 0:
        return {"error": "argument_error", "message": "entries, rho and sigma must be positive"}
    rng = np.random.default_rng(seed)
    points = PointCloud(rng.uniform(-1.0, 1.0, size=(entries, 3)))
    # far enough that no noisy radius is clamped at 0
    keypoint = np.array([[4.0, 0.0, 0.0]])
    try:
        estimated = oracle_regressor(points, keypoint, NoiseModel(gaussian_sigma=sigma, rng_seed=seed))
        score, stats = vcs(estimated, gt_radii(points, keypoint), rho)
    except RadialPoseError as e:
        return e.to_dict()
    return {
        "sigma": sigma,
        "rho": rho,
        "entries": stats.total,
        "vcs": score,
        "expected": float(erf(rho / (sigma * np.sqrt(2.0)))),
    }


for _tool in (synthesize_scene, estimate_pose, evaluate_pose, vote_confidence):
    mcp.tool()(_tool)


if __name__ == "__main__":
    logging.basicConfig(level=resolve_log_level())
    # Run MCP server
    mcp.run()
