"""
Synthetic scenes and oracle stand-ins for the segmentation and regression
networks.

The oracles start from ground truth and inject controlled errors: label flips
for segmentation, Gaussian noise / outliers / garbage for the radii. Every draw
comes from a ``numpy.random.default_rng`` seeded explicitly, so a scene or an
oracle output is reproducible from its seed alone.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.transform import Rotation

from .config import MODEL_SHAPES, NoiseModel, SceneConfig
from .errors import ArgumentError, DegenerateSceneError
from .geometry import (
    NormalizationRecord,
    PointCloud,
    Points,
    RigidTransform,
    as_points,
    orthonormalize,
    recenter_normalize,
)
from .keypoints import KeypointSet, RadiiMatrix, bbox_corner_keypoints, fps_keypoints, gt_radii

logger = logging.getLogger(__name__)

DEFAULT_WORK_EXTENT = 0.3
BOX_HALF_EXTENTS = np.array([1.0, 0.7, 0.5])
TORUS_RADII = (0.7, 0.3)


@dataclass(frozen=True, eq=False)
class Scene:
    """
    A labelled, normalized scene with its ground truth.

    ``source_index`` holds, per scene point, the model point it came from, or
    -1 for clutter.
    """

    cloud: PointCloud
    gt_pose: RigidTransform
    model_id: str
    scene_keypoints: Points
    normalization: NormalizationRecord
    source_index: NDArray[np.int64]

    def __post_init__(self):
        if self.cloud.labels is None:
            raise ArgumentError("scene cloud must be labelled")
        if np.count_nonzero(self.cloud.labels == 1) < 3:
            raise DegenerateSceneError("scene needs at least 3 foreground points")
        object.__setattr__(self, "scene_keypoints", as_points(self.scene_keypoints))
        object.__setattr__(self, "source_index", np.asarray(self.source_index, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.cloud)

    @property
    def labels(self) -> NDArray[np.int64]:
        return self.cloud.labels  # type: ignore[return-value]

    def subset(self, indices: Any) -> "Scene":
        idx = np.asarray(indices, dtype=np.int64)
        return Scene(
            self.cloud.subset(idx),
            self.gt_pose,
            self.model_id,
            self.scene_keypoints,
            self.normalization,
            self.source_index[idx],
        )

    def metadata(self) -> Dict[str, Any]:
        return {
            "model_id": self.model_id,
            "gt_pose": self.gt_pose.to_dict(),
            "scene_keypoints": [[float(v) for v in row] for row in self.scene_keypoints],
            "normalization": self.normalization.to_dict(),
        }


def _unit_vectors(rng: np.random.Generator, n: int) -> Points:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _box_surface(rng: np.random.Generator, n: int, half: NDArray[np.float64]) -> Points:
    hx, hy, hz = half
    areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
    faces = rng.choice(6, size=n, p=areas / areas.sum())
    pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
    axis = faces // 2
    sign = np.where(faces % 2 == 0, -1.0, 1.0)
    pts[np.arange(n), axis] = sign * half[axis]
    return pts


def _torus_surface(rng: np.random.Generator, n: int, major: float, minor: float) -> Points:
    out = []
    have = 0
    while have < n:
        u = rng.uniform(0.0, 2 * np.pi, size=2 * n)
        v = rng.uniform(0.0, 2 * np.pi, size=2 * n)
        # area element is proportional to (major + minor cos v)
        keep = rng.uniform(0.0, major + minor, size=2 * n) < major + minor * np.cos(v)
        u, v = u[keep], v[keep]
        ring = major + minor * np.cos(v)
        out.append(np.column_stack([ring * np.cos(u), ring * np.sin(u), minor * np.sin(v)]))
        have += int(keep.sum())
    return np.concatenate(out)[:n]


def _blobby_surface(rng: np.random.Generator, n: int) -> Points:
    d = _unit_vectors(rng, n)
    # star-shaped and asymmetric; the radial factor stays within [0.45, 1.5]
    f = 1.0 + 0.35 * d[:, 0] + 0.2 * d[:, 1] * d[:, 2] + 0.15 * d[:, 2] ** 2
    return d * f[:, None]


def make_model(shape: str, n: int, rng_seed: int, size: float = 1.0) -> PointCloud:
    """
    ``n`` points on the surface of a synthetic object of characteristic
    radius ``size`` (sphere radius, box half-length, torus outer radius).
    """
    if shape not in MODEL_SHAPES:
        raise ArgumentError(f"unknown shape {shape!r}; expected one of {MODEL_SHAPES}")
    if n < 100:
        raise ArgumentError(f"model needs at least 100 points, got {n}")
    if not size > 0:
        raise ArgumentError("size must be positive")
    rng = np.random.default_rng(rng_seed)
    if shape == "sphere":
        pts = _unit_vectors(rng, n)
    elif shape == "box":
        pts = _box_surface(rng, n, BOX_HALF_EXTENTS)
    elif shape == "torus":
        pts = _torus_surface(rng, n, *TORUS_RADII)
    else:
        pts = _blobby_surface(rng, n)
    return PointCloud(pts * size)


def random_rotation(rng: np.random.Generator) -> NDArray[np.float64]:
    """Uniform on SO(3): a normalized 4D Gaussian read as a unit quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return orthonormalize(Rotation.from_quat(q).as_matrix())


def synth_scene(
    model: PointCloud,
    keypoints: KeypointSet,
    clutter_fraction: float,
    occlusion_fraction: float,
    sensor_sigma: float,
    rng_seed: int,
    work_extent: float = DEFAULT_WORK_EXTENT,
    model_id: str = "model",
) -> Scene:
    """
    Pose the model at random inside the work volume, cut away
    ``occlusion_fraction`` of it behind a random plane, add uniform clutter so
    the foreground makes up ``1 - clutter_fraction`` of the scene, add sensor
    noise, and normalize.

    Raises:
        DegenerateSceneError: fewer than 3 foreground points survive
    """
    if not 0.0 <= clutter_fraction < 1.0:
        raise ArgumentError(f"clutter_fraction must be in [0, 1), got {clutter_fraction}")
    if not 0.0 <= occlusion_fraction < 0.9:
        raise ArgumentError(f"occlusion_fraction must be in [0, 0.9), got {occlusion_fraction}")
    if sensor_sigma < 0:
        raise ArgumentError("sensor_sigma must be >= 0")
    rng = np.random.default_rng(rng_seed)

    pose = RigidTransform(random_rotation(rng), rng.uniform(-work_extent / 2, work_extent / 2, size=3))
    posed = pose.apply(model.points)
    source = np.arange(len(model), dtype=np.int64)

    normal = _unit_vectors(rng, 1)[0]
    removed = int(round(occlusion_fraction * len(posed)))
    if removed > 0:
        side = (posed - posed.mean(axis=0)) @ normal
        keep = np.sort(np.argsort(side, kind="stable")[removed:])
        posed, source = posed[keep], source[keep]
    if len(posed) < 3:
        raise DegenerateSceneError(f"occlusion left {len(posed)} foreground points")

    n_clutter = int(round(len(posed) * clutter_fraction / (1.0 - clutter_fraction)))
    clutter = rng.uniform(-work_extent, work_extent, size=(n_clutter, 3))
    points = np.concatenate([posed, clutter])
    labels = np.concatenate([np.ones(len(posed), dtype=np.int64), np.zeros(n_clutter, dtype=np.int64)])
    source = np.concatenate([source, np.full(n_clutter, -1, dtype=np.int64)])
    if sensor_sigma > 0:
        points = points + rng.normal(0.0, sensor_sigma, size=points.shape)

    normalized, record = recenter_normalize(PointCloud(points, labels))
    scene_kps = record.apply(pose.apply(keypoints.keypoints))
    logger.debug(
        f"Synthesized scene seed={rng_seed}: {len(posed)} foreground, {n_clutter} clutter, "
        f"scale={record.scale:.4f}"
    )
    return Scene(normalized, pose, model_id, scene_kps, record, source)


def oracle_segmenter(scene: Scene, flip_rate: float, rng_seed: int) -> NDArray[np.int64]:
    """GT labels with each one flipped independently with probability ``flip_rate``."""
    return _segment(scene, flip_rate, rng_seed)[0]


def oracle_probabilities(scene: Scene, flip_rate: float, rng_seed: int) -> NDArray[np.float64]:
    """
    Foreground probabilities consistent with oracle_segmenter: with the same
    seed, ``probabilities > 0.5`` reproduces its labels exactly.
    """
    return _segment(scene, flip_rate, rng_seed)[1]


def _segment(scene: Scene, flip_rate: float, rng_seed: int) -> Tuple[NDArray[np.int64], NDArray[np.float64]]:
    if not 0.0 <= flip_rate < 0.5:
        raise ArgumentError(f"flip_rate must be in [0, 0.5), got {flip_rate}")
    rng = np.random.default_rng(rng_seed)
    n = len(scene)
    flips = rng.random(n) < flip_rate
    predicted = np.where(flips, 1 - scene.labels, scene.labels).astype(np.int64)
    confidence = np.nextafter(rng.uniform(0.5, 1.0, size=n), 1.0)
    probabilities = np.where(predicted == 1, confidence, 1.0 - confidence)
    return predicted, probabilities


def oracle_regressor(points: PointCloud, scene_keypoints: Any, noise: NoiseModel) -> RadiiMatrix:
    """
    GT radii plus Gaussian noise for foreground rows, with ``outlier_fraction``
    of those entries swapped for uniform garbage; background rows are garbage
    throughout. Negative radii are clamped to 0.
    """
    rng = np.random.default_rng(noise.rng_seed)
    exact = gt_radii(points, scene_keypoints).values
    shape = exact.shape
    eps = rng.normal(0.0, noise.gaussian_sigma, size=shape)
    outlier = rng.random(shape) < noise.outlier_fraction
    garbage = rng.uniform(*noise.outlier_range, size=shape)
    if points.labels is None:
        foreground = np.ones(shape[0], dtype=bool)
    else:
        foreground = points.labels == 1
    est = np.where(foreground[:, None], np.where(outlier, garbage, exact + eps), garbage)
    return RadiiMatrix(np.maximum(est, 0.0))


def oracle_offsets(
    points: PointCloud,
    scene_keypoints: Any,
    noise: NoiseModel,
    bounds: Tuple[Any, Any],
) -> NDArray[np.float64]:
    """
    M x K x 3 offsets for offset voting: GT offset plus isotropic Gaussian noise;
    outliers and background rows point at a uniform location inside ``bounds``.
    """
    rng = np.random.default_rng(noise.rng_seed)
    kps = as_points(scene_keypoints)
    pts = points.points
    exact = kps[None, :, :] - pts[:, None, :]
    M, K = exact.shape[:2]
    eps = rng.normal(0.0, noise.gaussian_sigma, size=exact.shape)
    outlier = rng.random((M, K)) < noise.outlier_fraction
    lower, upper = (np.asarray(b, dtype=np.float64) for b in bounds)
    garbage = rng.uniform(lower, upper, size=exact.shape) - pts[:, None, :]
    if points.labels is None:
        foreground = np.ones(M, dtype=bool)
    else:
        foreground = points.labels == 1
    good = foreground[:, None] & ~outlier
    return np.where(good[:, :, None], exact + eps, garbage)


def build_object(config: SceneConfig, K: int = 3, rng_seed: int = 0) -> Tuple[PointCloud, KeypointSet]:
    """Model cloud and its keypoints for a scene recipe (``K`` is ignored for bbox corners)."""
    model = make_model(config.shape, config.model_points, rng_seed, config.model_size)
    if config.keypoint_scheme == "bbox":
        keypoints = bbox_corner_keypoints(model)
    else:
        keypoints = fps_keypoints(model, K)
    return model, keypoints


def scene_from_config(
    config: SceneConfig,
    model: PointCloud,
    keypoints: KeypointSet,
    rng_seed: int,
) -> Scene:
    return synth_scene(
        model,
        keypoints,
        config.clutter_fraction,
        config.occlusion_fraction,
        config.sensor_sigma,
        rng_seed,
        work_extent=config.work_extent,
        model_id=config.shape,
    )
