"""
Cascade and parallel keypoint-voting pipelines driven by the oracles.

Both architectures share the same seeds for every stage, so a cascade run and
a parallel run on the same scene with the same noise seed see the same point
budget, the same segmentation, the same voters and the same per-point noise
draws. They differ only in what the regressor knows about each voter:

- cascade: the regressor only ever sees predicted-foreground points, so it
  treats every voter as object surface (GT radius + noise);
- parallel: the regressor runs over the whole scene and emits garbage for true
  background points, and those rows reach the vote whenever the segmenter
  mislabels them as foreground.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np

from .config import NoiseModel, PipelineParams
from .errors import DegenerateSceneError, PipelineError
from .geometry import PointCloud, RigidTransform, random_downsample, weighted_downsample
from .keypoints import KeypointSet, RadiiMatrix, gt_radii
from .losses import bce_loss
from .metrics import (
    add_decision,
    add_metric,
    add_s_metric,
    miou,
    vcs,
    vcs_per_keypoint,
)
from .pose import FIT_METHODS, run_icp
from .simulator import Scene, oracle_probabilities, oracle_regressor, oracle_segmenter
from .voting import estimate_keypoints

logger = logging.getLogger(__name__)

ARCHITECTURES = ("cascade", "parallel")


@dataclass
class RunReport:
    """Everything a single pipeline run measured."""

    architecture: str
    scene_points: int
    predicted_foreground: int
    votes: int
    vcs: float
    vcs_correct: int
    vcs_total: int
    vcs_per_keypoint: List[float]
    keypoint_errors: List[float]
    peak_scores: List[int]
    miou: float
    bce: float
    add: float
    add_s: float
    diameter: float
    success: bool
    icp_iterations: int = 0
    icp_rms: float | None = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def stage_seeds(rng_seed: int) -> Tuple[int, int, int, int]:
    """Independent seeds for (scene budget, segmenter, voter sampling, regressor)."""
    state = np.random.SeedSequence(rng_seed).generate_state(4)
    return tuple(int(s) for s in state)  # type: ignore[return-value]


class PosePipeline:
    """
    One pipeline architecture bound to a model, its keypoints and run params.

    Usage:
        pipeline = PosePipeline("cascade", params, model, keypoints)
        T_est, report = pipeline.run(scene, seg_flip=0.05, noise=noise)
    """

    def __init__(
        self,
        architecture: str,
        params: PipelineParams,
        model: PointCloud,
        keypoints: KeypointSet,
    ):
        if architecture not in ARCHITECTURES:
            raise PipelineError(f"unknown architecture {architecture!r}")
        self.architecture = architecture
        self.params = params
        self.model = model
        self.keypoints = keypoints
        self._fit = FIT_METHODS[params.fit_method]
        self.voting = params.voting
        self.bounds = self.voting.bounds()

        logger.debug(
            f"PosePipeline initialized: architecture={architecture}, N={params.N}, "
            f"M={params.M}, rho={params.rho}, K={len(keypoints)}, icp={params.use_icp}"
        )

    def run(self, scene: Scene, seg_flip: float, noise: NoiseModel) -> Tuple[RigidTransform, RunReport]:
        budget_seed, seg_seed, vote_seed, reg_seed = stage_seeds(noise.rng_seed)

        if len(scene) > self.params.N:
            try:
                scene = scene.subset(random_downsample(len(scene), self.params.N, budget_seed))
            except DegenerateSceneError as e:
                raise PipelineError(f"scene budget N={self.params.N} leaves too little foreground: {e}") from e

        predicted = oracle_segmenter(scene, seg_flip, seg_seed)
        candidates = np.flatnonzero(predicted == 1)
        if candidates.size < 3:
            raise PipelineError(f"only {candidates.size} predicted foreground points")
        probabilities = oracle_probabilities(scene, seg_flip, seg_seed)

        m = min(self.params.M, candidates.size)
        if self.params.sampling == "probability":
            picked = weighted_downsample(probabilities[candidates], m, vote_seed)
        else:
            picked = random_downsample(candidates.size, m, vote_seed)
        voter_idx = candidates[picked]

        # rows are drawn for every scene point so both architectures share per-point noise
        regressor_labels = predicted if self.architecture == "cascade" else scene.labels
        all_radii = oracle_regressor(
            scene.cloud.with_labels(regressor_labels), scene.scene_keypoints, noise.with_seed(reg_seed)
        )
        radii = RadiiMatrix(all_radii.values[voter_idx])
        voters = scene.cloud.subset(voter_idx)
        truth = gt_radii(voters, scene.scene_keypoints)
        score, stats = vcs(radii, truth, self.voting.rho)

        estimates = estimate_keypoints(voters, radii, self.voting.rho, self.bounds, self.voting.max_voxels)
        record = scene.normalization
        est_kps = record.invert(np.array([e.position for e in estimates]))
        gt_kps = scene.gt_pose.apply(self.keypoints.keypoints)
        T_est = self._fit(self.keypoints.keypoints, est_kps)

        icp_iterations, icp_rms = 0, None
        if self.params.use_icp:
            observed = PointCloud(record.invert(scene.cloud.points[candidates]))
            result = run_icp(self.model, observed, T_est, self.params.icp.max_iters, self.params.icp.tol)
            T_est, icp_iterations, icp_rms = result.transform, result.iterations, result.rms

        add = add_metric(self.model, scene.gt_pose, T_est)
        add_s = add_s_metric(self.model, scene.gt_pose, T_est)
        decisive = add_s if self.params.symmetric else add
        report = RunReport(
            architecture=self.architecture,
            scene_points=len(scene),
            predicted_foreground=int(candidates.size),
            votes=int(m),
            vcs=score,
            vcs_correct=stats.correct,
            vcs_total=stats.total,
            vcs_per_keypoint=[float(v) for v in vcs_per_keypoint(radii, truth, self.voting.rho)],
            keypoint_errors=[float(v) for v in np.linalg.norm(est_kps - gt_kps, axis=1)],
            peak_scores=[e.score for e in estimates],
            miou=miou(predicted, scene.labels),
            bce=bce_loss(probabilities, scene.labels),
            add=add,
            add_s=add_s,
            diameter=self.keypoints.diameter,
            success=add_decision(decisive, self.keypoints.diameter),
            icp_iterations=icp_iterations,
            icp_rms=icp_rms,
        )
        logger.debug(
            f"{self.architecture} run: vcs={score:.3f}, add={add:.4g}, success={report.success}"
        )
        return T_est, report


def run_cascade(
    scene: Scene,
    params: PipelineParams,
    seg_flip: float,
    noise: NoiseModel,
    model: PointCloud,
    keypoints: KeypointSet,
) -> Tuple[RigidTransform, RunReport]:
    """Segment, keep predicted foreground, sample M voters, regress, vote, fit."""
    return PosePipeline("cascade", params, model, keypoints).run(scene, seg_flip, noise)


def run_parallel(
    scene: Scene,
    params: PipelineParams,
    seg_flip: float,
    noise: NoiseModel,
    model: PointCloud,
    keypoints: KeypointSet,
) -> Tuple[RigidTransform, RunReport]:
    """Regress the whole scene jointly with segmentation, then vote with the predicted foreground."""
    return PosePipeline("parallel", params, model, keypoints).run(scene, seg_flip, noise)
