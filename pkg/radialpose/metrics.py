"""Pose, vote and segmentation metrics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from .errors import ArgumentError
from .geometry import PointCloud, RigidTransform
from .keypoints import RadiiMatrix

ADD_THRESHOLD_RATIO = 0.1
AUC_MAX_THRESHOLD = 0.10
AUC_STEPS = 1000


@dataclass(frozen=True)
class VoteStats:
    total: int
    correct: int
    rho: float

    def __post_init__(self):
        if self.total < 1 or not 0 <= self.correct <= self.total:
            raise ArgumentError(f"invalid vote stats: {self.correct}/{self.total}")


def add_metric(model: PointCloud, T_gt: RigidTransform, T_est: RigidTransform) -> float:
    """Mean distance between matched model points under the two poses."""
    return float(np.mean(np.linalg.norm(T_gt.apply(model.points) - T_est.apply(model.points), axis=1)))


def add_s_metric(model: PointCloud, T_gt: RigidTransform, T_est: RigidTransform) -> float:
    """Mean distance from each GT-posed point to the closest estimate-posed point."""
    dists, _ = cKDTree(T_est.apply(model.points)).query(T_gt.apply(model.points), k=1)
    return float(np.mean(dists))


def add_or_add_s(model: PointCloud, T_gt: RigidTransform, T_est: RigidTransform, symmetric: bool) -> float:
    """ADD(S): ADD-S for symmetric objects, ADD otherwise."""
    return add_s_metric(model, T_gt, T_est) if symmetric else add_metric(model, T_gt, T_est)


def add_decision(value: float, diameter: float) -> bool:
    """Correct when within 10% of the diameter (inclusive)."""
    if not diameter > 0:
        raise ArgumentError(f"diameter must be positive, got {diameter}")
    return bool(value <= ADD_THRESHOLD_RATIO * diameter)


def accuracy_curve(
    values: Sequence[float], max_threshold: float = AUC_MAX_THRESHOLD, steps: int = AUC_STEPS
) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Thresholds uniform on [0, max_threshold] and the fraction of values at or below each."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ArgumentError("accuracy curve needs at least one value")
    if np.any(v < 0):
        raise ArgumentError("metric values must be >= 0")
    if not max_threshold > 0:
        raise ArgumentError("max_threshold must be positive")
    if steps < 2:
        raise ArgumentError("steps must be >= 2")
    thresholds = np.linspace(0.0, max_threshold, steps)
    ordered = np.sort(v)
    accuracy = np.searchsorted(ordered, thresholds, side="right") / v.size
    return thresholds, accuracy


def auc(values: Sequence[float], max_threshold: float = AUC_MAX_THRESHOLD, steps: int = AUC_STEPS) -> float:
    """Trapezoidal area under the accuracy curve, normalised to [0, 1]."""
    thresholds, accuracy = accuracy_curve(values, max_threshold, steps)
    area = float(np.sum((accuracy[1:] + accuracy[:-1]) * np.diff(thresholds)) / 2.0)
    return area / max_threshold


def vcs(estimated: RadiiMatrix, gt: RadiiMatrix, rho: float) -> Tuple[float, VoteStats]:
    """Share of radii within rho of ground truth."""
    if not rho > 0:
        raise ArgumentError(f"rho must be positive, got {rho}")
    if estimated.shape != gt.shape:
        raise ArgumentError(f"radii shapes differ: {estimated.shape} vs {gt.shape}")
    correct = int(np.count_nonzero(np.abs(estimated.values - gt.values) <= rho))
    stats = VoteStats(total=int(gt.values.size), correct=correct, rho=rho)
    return correct / stats.total, stats


def vcs_per_keypoint(estimated: RadiiMatrix, gt: RadiiMatrix, rho: float) -> NDArray[np.float64]:
    if estimated.shape != gt.shape:
        raise ArgumentError(f"radii shapes differ: {estimated.shape} vs {gt.shape}")
    return np.mean(np.abs(estimated.values - gt.values) <= rho, axis=0)


def miou(predicted: Sequence[int], gt: Sequence[int]) -> float:
    """
    Mean IoU over background (0) and foreground (1). A class absent from both
    prediction and GT scores 1.
    """
    p = np.asarray(predicted, dtype=np.int64).reshape(-1)
    g = np.asarray(gt, dtype=np.int64).reshape(-1)
    if p.shape != g.shape:
        raise ArgumentError(f"{p.size} predicted labels but {g.size} GT labels")
    if not (np.isin(p, (0, 1)).all() and np.isin(g, (0, 1)).all()):
        raise ArgumentError("labels must be 0 or 1")
    ious = []
    for cls in (0, 1):
        inter = np.count_nonzero((p == cls) & (g == cls))
        union = np.count_nonzero((p == cls) | (g == cls))
        ious.append(1.0 if union == 0 else inter / union)
    return float(np.mean(ious))
