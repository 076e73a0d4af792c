"""Object-frame keypoints and ground-truth radii."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.distance import pdist

from .errors import ArgumentError, DegenerateInputError
from .geometry import PointCloud, Points, as_points, farthest_point_sample

logger = logging.getLogger(__name__)

EXACT_DIAMETER_LIMIT = 5000
DIAMETER_FPS_SUBSET = 32
COLLINEAR_AREA = 1e-9


def triangle_area(a: Any, b: Any, c: Any) -> float:
    return 0.5 * float(np.linalg.norm(np.cross(np.subtract(b, a), np.subtract(c, a))))


def model_diameter(model: PointCloud) -> float:
    """
    Largest pairwise distance of the model cloud.

    Exact up to EXACT_DIAMETER_LIMIT points; beyond that the maximum over an
    FPS subset of DIAMETER_FPS_SUBSET points.
    """
    pts = model.points
    if len(pts) < 2:
        return 0.0
    if len(pts) > EXACT_DIAMETER_LIMIT:
        pts = pts[farthest_point_sample(model, DIAMETER_FPS_SUBSET, 0)]
    return float(pdist(pts).max())


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """K >= 3 distinct object-frame keypoints plus the object diameter."""

    keypoints: Points
    diameter: float

    def __post_init__(self):
        kps = as_points(self.keypoints).copy()
        if kps.shape[0] < 3:
            raise ArgumentError(f"need at least 3 keypoints, got {kps.shape[0]}")
        if np.min(pdist(kps)) <= 0.0:
            raise DegenerateInputError("keypoints must be pairwise distinct")
        if not self.diameter > 0:
            raise ArgumentError(f"diameter must be positive, got {self.diameter}")
        kps.setflags(write=False)
        object.__setattr__(self, "keypoints", kps)

    def __len__(self) -> int:
        return int(self.keypoints.shape[0])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "keypoints": [[float(v) for v in row] for row in self.keypoints],
            "diameter": float(self.diameter),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "KeypointSet":
        return cls(np.asarray(data["keypoints"], dtype=np.float64), float(data["diameter"]))


def bbox_corner_keypoints(model: PointCloud) -> KeypointSet:
    """The 8 corners of the model's axis-aligned bounding box."""
    lo = model.points.min(axis=0)
    hi = model.points.max(axis=0)
    if np.any(hi - lo <= 0.0):
        raise DegenerateInputError("bounding box has zero extent along at least one axis")
    corners = np.array(
        [[(hi if bit else lo)[axis] for axis, bit in enumerate(bits)]
         for bits in np.ndindex(2, 2, 2)],
        dtype=np.float64,
    )
    return KeypointSet(corners, model_diameter(model))


def fps_keypoints(model: PointCloud, K: int) -> KeypointSet:
    """
    K model points picked by farthest point sampling, seeded at the point
    farthest from the centroid.

    If the third pick is collinear with the first two it is replaced by the
    farthest point off their line, and sampling continues from those three.
    """
    if K < 3:
        raise ArgumentError(f"K must be >= 3, got {K}")
    pts = model.points
    if K > len(pts):
        raise ArgumentError(f"cannot pick {K} keypoints from {len(pts)} model points")
    seed = int(np.argmax(np.linalg.norm(pts - pts.mean(axis=0), axis=1)))
    picks = farthest_point_sample(model, K, seed)
    first, second = int(picks[0]), int(picks[1])
    if triangle_area(pts[first], pts[second], pts[picks[2]]) < COLLINEAR_AREA:
        logger.warning(f"Skipping collinear keypoint candidate {int(picks[2])}")
        on_line = 0.5 * np.linalg.norm(np.cross(pts[second] - pts[first], pts - pts[first]), axis=1) < COLLINEAR_AREA
        if on_line.all():
            raise DegenerateInputError("model has too few distinct non-collinear points for keypoints")
        third = int(farthest_point_sample(model, 3, [first, second], exclude=on_line)[2])
        picks = farthest_point_sample(model, K, [first, second, third])
    return KeypointSet(pts[picks], model_diameter(model))


@dataclass(frozen=True, eq=False)
class RadiiMatrix:
    """M x K nonnegative radial distances."""

    values: NDArray[np.float64]

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ArgumentError(f"radii must be an M x K matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ArgumentError("radii must be finite and >= 0")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]


def gt_radii(foreground: PointCloud, scene_keypoints: Sequence[Any] | Points) -> RadiiMatrix:
    """values[m, i] = ||p_m - k_i||"""
    kps = as_points(scene_keypoints)
    diff = foreground.points[:, None, :] - kps[None, :, :]
    return RadiiMatrix(np.linalg.norm(diff, axis=2))
