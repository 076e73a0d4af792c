"""
Core 3D types and point-cloud preprocessing.

Points are carried as ``(N, 3)`` float64 arrays; a single point is a ``(3,)``
array. All value types here are frozen and never mutated after construction,
so they can be shared freely between concurrent pipeline runs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple, TypeAlias

import numpy as np
from numpy.typing import NDArray

from .errors import ArgumentError, DegenerateInputError, EmptyCloudError

Point3: TypeAlias = NDArray[np.float64]  # (3,)
Points: TypeAlias = NDArray[np.float64]  # (N, 3)
Mat3: TypeAlias = NDArray[np.float64]    # (3, 3)

ORTHONORMAL_TOL = 1e-9


def as_points(points: Any) -> Points:
    """Convert array-like input to a contiguous (N, 3) float64 array."""
    arr = np.ascontiguousarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ArgumentError(f"expected points of shape (N, 3), got {arr.shape}")
    return arr


def as_point(point: Any) -> Point3:
    arr = np.asarray(point, dtype=np.float64).reshape(-1)
    if arr.size != 3:
        raise ArgumentError(f"expected a 3-vector, got shape {np.shape(point)}")
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """
    Ordered 3D points with optional per-point labels.

    Labels use 0 for background and 1 for foreground.
    """

    points: Points
    labels: Optional[NDArray[np.int64]] = None

    def __post_init__(self):
        pts = as_points(self.points)
        if pts.shape[0] < 1:
            raise EmptyCloudError("point cloud must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise ArgumentError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if labels.shape[0] != pts.shape[0]:
                raise ArgumentError(
                    f"labels length {labels.shape[0]} does not match {pts.shape[0]} points"
                )
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def subset(self, indices: Sequence[int] | NDArray[np.int64]) -> "PointCloud":
        idx = np.asarray(indices, dtype=np.int64)
        labels = None if self.labels is None else self.labels[idx]
        return PointCloud(self.points[idx], labels)

    def with_labels(self, labels: Optional[Sequence[int] | NDArray[np.int64]]) -> "PointCloud":
        return PointCloud(self.points, labels)

    def foreground(self) -> "PointCloud":
        """Points labelled 1; the whole cloud when unlabelled."""
        if self.labels is None:
            return self
        idx = np.flatnonzero(self.labels == 1)
        if idx.size == 0:
            raise EmptyCloudError("cloud has no foreground points")
        return self.subset(idx)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rigid motion p -> R p + t."""

    rotation: Mat3
    translation: Point3

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64)
        t = as_point(self.translation).copy()
        if R.shape != (3, 3):
            raise ArgumentError(f"rotation must be 3x3, got {R.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ArgumentError("transform entries must be finite")
        if np.linalg.norm(R.T @ R - np.eye(3)) > ORTHONORMAL_TOL:
            raise ArgumentError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHONORMAL_TOL:
            raise ArgumentError("rotation determinant must be +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: Any) -> Points:
        return as_points(points) @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self ∘ other: apply ``other`` first."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def as_matrix(self) -> NDArray[np.float64]:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def to_dict(self) -> Dict[str, Any]:
        """Row-major rotation plus translation."""
        return {
            "rotation": [float(v) for v in self.rotation.reshape(-1)],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RigidTransform":
        return cls(np.asarray(data["rotation"], dtype=np.float64).reshape(3, 3), data["translation"])


def orthonormalize(R: Mat3) -> Mat3:
    """Closest proper rotation to ``R`` in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    return U @ D @ Vt


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ArgumentError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")


@dataclass(frozen=True, eq=False)
class NormalizationRecord:
    """Recentering and scaling applied to a scene; invertible exactly."""

    center: Point3
    scale: float

    def __post_init__(self):
        c = as_point(self.center).copy()
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        if not self.scale > 0:
            raise ArgumentError(f"normalization scale must be positive, got {self.scale}")

    def apply(self, points: Any) -> Points:
        return (as_points(points) - self.center) / self.scale

    def invert(self, points: Any) -> Points:
        return as_points(points) * self.scale + self.center

    def to_dict(self) -> Dict[str, Any]:
        return {"center": [float(v) for v in self.center], "scale": float(self.scale)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NormalizationRecord":
        return cls(data["center"], float(data["scale"]))


def apply_transform(cloud: PointCloud, T: RigidTransform) -> PointCloud:
    """Move every point by ``T``; labels are carried along."""
    return PointCloud(T.apply(cloud.points), cloud.labels)


def recenter_normalize(cloud: PointCloud) -> Tuple[PointCloud, NormalizationRecord]:
    """
    Recenter on the bounding-box midpoint and divide by the largest absolute
    coordinate, so every output coordinate lies in [-1, 1].

    Raises:
        DegenerateInputError: all points coincide
    """
    pts = cloud.points
    center = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
    centered = pts - center
    scale = float(np.abs(centered).max())
    if scale <= 0.0:
        raise DegenerateInputError("cannot normalize a cloud whose points all coincide")
    record = NormalizationRecord(center, scale)
    return PointCloud(centered / scale, cloud.labels), record


def depth_to_cloud(depth: Any, K: CameraIntrinsics) -> PointCloud:
    """
    Back-project a metric depth map through pinhole intrinsics.

    Pixel (u, v) is column u, row v. Zero depth marks an invalid pixel.
    """
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim != 2:
        raise ArgumentError(f"depth map must be 2D, got shape {d.shape}")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ArgumentError("depth values must be finite and >= 0")
    v, u = np.nonzero(d > 0)
    if u.size == 0:
        raise EmptyCloudError("depth map has no valid pixels")
    z = d[v, u]
    x = (u - K.cx) * z / K.fx
    y = (v - K.cy) * z / K.fy
    return PointCloud(np.column_stack([x, y, z]))


def farthest_point_sample(
    cloud: PointCloud,
    n: int,
    seed_index: int | Sequence[int] = 0,
    exclude: Optional[Any] = None,
) -> NDArray[np.int64]:
    """
    Greedy farthest point sampling.

    The first picks are ``seed_index`` (one index or a sequence); every later
    pick maximises the minimum distance to the picks so far, ties going to the
    lowest index. Points flagged in the boolean mask ``exclude`` are never
    picked after the seeds.
    """
    pts = cloud.points
    total = pts.shape[0]
    seeds = np.atleast_1d(np.asarray(seed_index, dtype=np.int64))
    if seeds.ndim != 1 or seeds.size == 0:
        raise ArgumentError("seed_index must be an index or a non-empty sequence of indices")
    if np.any(seeds < 0) or np.any(seeds >= total):
        raise ArgumentError(f"seed_index {seed_index} out of range")
    banned = np.zeros(total, dtype=bool) if exclude is None else np.asarray(exclude, dtype=bool).copy()
    if banned.shape != (total,):
        raise ArgumentError(f"exclude must be a mask of {total} entries, got shape {banned.shape}")
    banned[seeds] = True
    available = seeds.size + int(np.count_nonzero(~banned))
    if not seeds.size <= n <= available:
        raise ArgumentError(f"cannot sample {n} points from a cloud of {total} ({available} selectable)")
    picks = np.empty(n, dtype=np.int64)
    picks[: seeds.size] = seeds
    min_dist = np.min(np.linalg.norm(pts[None, :, :] - pts[seeds][:, None, :], axis=2), axis=0)
    min_dist[banned] = -np.inf
    for k in range(seeds.size, n):
        # argmax returns the first maximum: lowest index wins ties
        nxt = int(np.argmax(min_dist))
        picks[k] = nxt
        min_dist = np.minimum(min_dist, np.linalg.norm(pts - pts[nxt], axis=1))
        min_dist[nxt] = -np.inf
    return picks


def random_downsample(cloud: PointCloud | int, n: int, rng_seed: int) -> NDArray[np.int64]:
    """``n`` distinct indices drawn uniformly without replacement."""
    total = cloud if isinstance(cloud, int) else len(cloud)
    if not 0 <= n <= total:
        raise ArgumentError(f"cannot draw {n} indices from {total} points")
    rng = np.random.default_rng(rng_seed)
    return np.sort(rng.choice(total, size=n, replace=False)).astype(np.int64)


def weighted_downsample(weights: Any, n: int, rng_seed: int) -> NDArray[np.int64]:
    """
    ``n`` distinct indices drawn without replacement with probability
    proportional to ``weights`` (e.g. foreground probabilities).
    """
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ArgumentError("weights must be finite and >= 0")
    positive = int(np.count_nonzero(w))
    if not 0 <= n <= positive:
        raise ArgumentError(f"cannot draw {n} indices from {positive} positively weighted points")
    rng = np.random.default_rng(rng_seed)
    return np.sort(rng.choice(w.size, size=n, replace=False, p=w / w.sum())).astype(np.int64)


def bounding_diagonal(points: Any) -> float:
    pts = as_points(points)
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
