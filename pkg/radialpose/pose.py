"""
Pose recovery from keypoint correspondences and ICP refinement.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .config import IcpConfig
from .errors import ArgumentError, DegenerateInputError
from .geometry import PointCloud, Points, RigidTransform, as_points, orthonormalize
from .keypoints import COLLINEAR_AREA, triangle_area

logger = logging.getLogger(__name__)


def _check_correspondences(object_pts: Any, scene_pts: Any) -> tuple[Points, Points]:
    A, B = as_points(object_pts), as_points(scene_pts)
    if A.shape != B.shape:
        raise ArgumentError(f"correspondence sets differ in shape: {A.shape} vs {B.shape}")
    if A.shape[0] < 3:
        raise ArgumentError(f"need at least 3 correspondences, got {A.shape[0]}")
    if max_triangle_area(A) < COLLINEAR_AREA:
        raise DegenerateInputError("object points are collinear")
    return A, B


def max_triangle_area(points: Points) -> float:
    """Area of the triangle spanned by a far pair and the point farthest from their line."""
    p0 = points[0]
    p1 = points[int(np.argmax(np.linalg.norm(points - p0, axis=1)))]
    axis = p1 - p0
    length = np.linalg.norm(axis)
    if length == 0.0:
        return 0.0
    offsets = points - p0
    off_line = np.linalg.norm(np.cross(offsets, axis / length), axis=1)
    return triangle_area(p0, p1, points[int(np.argmax(off_line))])


def fit_rigid(object_pts: Any, scene_pts: Any) -> RigidTransform:
    """
    Least-squares rigid transform mapping object points onto scene points
    (SVD / Kabsch). A reflection is corrected by flipping the direction of the
    smallest singular value.

    Raises:
        ArgumentError: fewer than 3 correspondences
        DegenerateInputError: collinear object points
    """
    A, B = _check_correspondences(object_pts, scene_pts)
    ca, cb = A.mean(axis=0), B.mean(axis=0)
    H = (A - ca).T @ (B - cb)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = orthonormalize(Vt.T @ np.diag([1.0, 1.0, d]) @ U.T)
    return RigidTransform(R, cb - R @ ca)


def fit_rigid_horn(object_pts: Any, scene_pts: Any) -> RigidTransform:
    """Same minimiser as fit_rigid via Horn's unit-quaternion eigenproblem."""
    A, B = _check_correspondences(object_pts, scene_pts)
    ca, cb = A.mean(axis=0), B.mean(axis=0)
    S = (A - ca).T @ (B - cb)
    (sxx, sxy, sxz), (syx, syy, syz), (szx, szy, szz) = S
    N = np.array([
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ])
    _, vecs = np.linalg.eigh(N)
    w, x, y, z = vecs[:, -1]
    R = orthonormalize(Rotation.from_quat([x, y, z, w]).as_matrix())
    return RigidTransform(R, cb - R @ ca)


FIT_METHODS = {"svd": fit_rigid, "horn": fit_rigid_horn}


def correspondence_rms(model_pts: Points, tree: cKDTree, T: RigidTransform) -> float:
    dists, _ = tree.query(T.apply(model_pts), k=1)
    return float(np.sqrt(np.mean(dists * dists)))


@dataclass(frozen=True, eq=False)
class IcpResult:
    transform: RigidTransform
    rms: float
    initial_rms: float
    iterations: int


def run_icp(
    model: PointCloud,
    scene_foreground: PointCloud,
    T0: RigidTransform,
    max_iters: int = 20,
    tol: float = 1e-6,
) -> IcpResult:
    """
    Point-to-point ICP from ``T0``.

    Each iteration matches every transformed model point to its nearest scene
    point and refits. A candidate is only accepted when it lowers the
    correspondence RMS, so the result never scores worse than ``T0``.
    Iteration stops when the accepted improvement drops below ``tol``.
    """
    if max_iters < 0:
        raise ArgumentError("max_iters must be >= 0")
    model_pts = model.points
    scene_pts = scene_foreground.points
    tree = cKDTree(scene_pts)
    T = T0
    rms = initial = correspondence_rms(model_pts, tree, T0)
    iterations = 0
    for it in range(max_iters):
        _, idx = tree.query(T.apply(model_pts), k=1)
        candidate = fit_rigid(model_pts, scene_pts[idx])
        cand_rms = correspondence_rms(model_pts, tree, candidate)
        iterations = it + 1
        if cand_rms >= rms:
            logger.debug(f"ICP iteration {it}: candidate rms {cand_rms:.3e} rejected")
            break
        improvement = rms - cand_rms
        T, rms = candidate, cand_rms
        logger.debug(f"ICP iteration {it}: rms {rms:.3e}")
        if improvement < tol:
            break
    return IcpResult(T, rms, initial, iterations)


def icp_refine(
    model: PointCloud,
    scene_foreground: PointCloud,
    T0: RigidTransform,
    max_iters: int = IcpConfig.max_iters,
    tol: float = IcpConfig.tol,
) -> RigidTransform:
    return run_icp(model, scene_foreground, T0, max_iters, tol).transform
