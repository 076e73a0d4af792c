"""
Configuration dataclasses.

Every tunable of the pipeline and of the experiment runner lives here as a
frozen dataclass that validates itself on construction. JSON configs map onto
these classes through ``from_dict``; unknown keys are rejected so a typo in an
archived config never silently falls back to a default.
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Mapping, Optional, Tuple, Type, TypeVar

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError

logger = logging.getLogger(__name__)

T = TypeVar("T")

LOG_LEVEL_ENV = "RADIALPOSE_LOG_LEVEL"
WORKERS_ENV = "RADIALPOSE_WORKERS"

# Diagonal of the normalized scene box [-1, 1]^3.
NORMALIZED_DIAGONAL = 2.0 * math.sqrt(3.0)


def _build(cls: Type[T], data: Mapping[str, Any]) -> T:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{cls.__name__}: unknown keys {unknown}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"{cls.__name__}: {e}") from e


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


@dataclass(frozen=True)
class VotingConfig:
    """Accumulator resolution and size limits (normalized scene units)."""

    rho: float = 0.005
    max_voxels: int = 512**3
    bounds_margin: float = 0.25

    def __post_init__(self):
        _require(self.rho > 0, f"rho must be positive, got {self.rho}")
        _require(self.max_voxels >= 1, "max_voxels must be >= 1")
        _require(self.bounds_margin >= 0, "bounds_margin must be >= 0")

    def bounds(self) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Accumulator box [-1 - margin, 1 + margin]^3 around the normalized scene."""
        return np.full(3, -1.0 - self.bounds_margin), np.full(3, 1.0 + self.bounds_margin)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "VotingConfig":
        return _build(cls, data)


@dataclass(frozen=True)
class IcpConfig:
    max_iters: int = 20
    tol: float = 1e-6

    def __post_init__(self):
        _require(self.max_iters >= 0, "max_iters must be >= 0")
        _require(self.tol >= 0, "tol must be >= 0")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "IcpConfig":
        return _build(cls, data)


@dataclass(frozen=True)
class NoiseModel:
    """
    Error model of the oracle radii regressor.

    Args:
        gaussian_sigma: std-dev of the additive radius noise, in the units of
            the points handed to the regressor
        outlier_fraction: share of foreground entries replaced by garbage
        outlier_range: (low, high) of the uniform garbage distribution
        rng_seed: seed for all draws
    """

    gaussian_sigma: float = 0.0
    outlier_fraction: float = 0.0
    outlier_range: Tuple[float, float] = (0.0, NORMALIZED_DIAGONAL)
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "outlier_range", tuple(float(v) for v in self.outlier_range))
        _require(self.gaussian_sigma >= 0, "gaussian_sigma must be >= 0")
        _require(0.0 <= self.outlier_fraction < 1.0, "outlier_fraction must be in [0, 1)")
        _require(len(self.outlier_range) == 2, "outlier_range must be (low, high)")
        low, high = self.outlier_range
        _require(low < high, f"outlier_range low must be < high, got {self.outlier_range}")

    def with_seed(self, rng_seed: int) -> "NoiseModel":
        return NoiseModel(self.gaussian_sigma, self.outlier_fraction, self.outlier_range, rng_seed)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["outlier_range"] = list(self.outlier_range)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "NoiseModel":
        return _build(cls, data)


@dataclass(frozen=True)
class PipelineParams:
    """Sizing and switches of one pipeline run."""

    N: int = 2**15
    M: int = 2**10
    K: int = 3
    rho: float = 0.005
    use_icp: bool = False
    fit_method: str = "svd"
    sampling: str = "uniform"
    symmetric: bool = False
    bounds_margin: float = 0.25
    max_voxels: int = 512**3
    icp: IcpConfig = field(default_factory=IcpConfig)

    def __post_init__(self):
        if isinstance(self.icp, Mapping):
            object.__setattr__(self, "icp", IcpConfig.from_dict(self.icp))
        _require(self.K >= 3, f"K must be >= 3, got {self.K}")
        _require(self.N > 0 and self.M > 0, "N and M must be positive")
        _require(self.M <= self.N, f"M ({self.M}) must not exceed N ({self.N})")
        _require(self.rho > 0, "rho must be positive")
        _require(self.fit_method in ("svd", "horn"), f"unknown fit_method {self.fit_method!r}")
        _require(self.sampling in ("uniform", "probability"), f"unknown sampling {self.sampling!r}")

    @property
    def voting(self) -> VotingConfig:
        return VotingConfig(rho=self.rho, max_voxels=self.max_voxels, bounds_margin=self.bounds_margin)

    def replace(self, **changes: Any) -> "PipelineParams":
        data = self.to_dict()
        data.update(changes)
        return PipelineParams.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["icp"] = self.icp.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PipelineParams":
        return _build(cls, data)


MODEL_SHAPES = ("sphere", "box", "torus", "blobby")


@dataclass(frozen=True)
class SceneConfig:
    """
    Synthetic scene recipe.

    The work volume is a cube of half-extent ``work_extent`` (scene units)
    centred at the origin; GT translations and clutter are drawn inside it.
    """

    shape: str = "blobby"
    model_points: int = 1024
    model_size: float = 0.1
    keypoint_scheme: str = "fps"
    clutter_fraction: float = 0.0
    occlusion_fraction: float = 0.0
    sensor_sigma: float = 0.0
    work_extent: float = 0.3

    def __post_init__(self):
        _require(self.shape in MODEL_SHAPES, f"unknown shape {self.shape!r}")
        _require(self.model_points >= 100, "model_points must be >= 100")
        _require(self.model_size > 0, "model_size must be positive")
        _require(self.keypoint_scheme in ("fps", "bbox"), f"unknown keypoint_scheme {self.keypoint_scheme!r}")
        _require(0.0 <= self.clutter_fraction < 1.0, "clutter_fraction must be in [0, 1)")
        _require(0.0 <= self.occlusion_fraction < 0.9, "occlusion_fraction must be in [0, 0.9)")
        _require(self.sensor_sigma >= 0, "sensor_sigma must be >= 0")
        _require(self.work_extent > 0, "work_extent must be positive")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SceneConfig":
        return _build(cls, data)


EXPERIMENT_KINDS = ("cascade-vs-parallel", "votes-ablation", "loss-ablation")
LOSS_KEYS = ("rows", "steps", "lr", "noise_scale", "threshold")


@dataclass(frozen=True)
class ExperimentConfig:
    """
    One experiment family run.

    ``grid`` maps the swept variable to its values: ``M`` for votes-ablation,
    ``architecture`` for cascade-vs-parallel, ``loss_kind`` for loss-ablation.
    ``loss`` holds the toy-fit settings (rows, steps, lr, noise_scale,
    threshold) used by loss-ablation.
    """

    kind: str
    output_dir: str
    seeds: Tuple[int, ...]
    grid: Dict[str, Tuple[Any, ...]] = field(default_factory=dict)
    scene: SceneConfig = field(default_factory=SceneConfig)
    params: PipelineParams = field(default_factory=PipelineParams)
    noise: NoiseModel = field(default_factory=NoiseModel)
    seg_flip: float = 0.0
    loss: Dict[str, Any] = field(default_factory=dict)
    workers: Optional[int] = None

    def __post_init__(self):
        _require(self.kind in EXPERIMENT_KINDS, f"unknown experiment kind {self.kind!r}")
        _require(bool(self.output_dir), "output_dir is required")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        _require(len(self.seeds) > 0, "seed list must not be empty")
        _require(len(set(self.seeds)) == len(self.seeds), "seeds must be distinct")
        for key, cls in (("scene", SceneConfig), ("params", PipelineParams), ("noise", NoiseModel)):
            value = getattr(self, key)
            if isinstance(value, Mapping):
                object.__setattr__(self, key, cls.from_dict(value))
        grid = {k: tuple(v) for k, v in dict(self.grid).items()}
        object.__setattr__(self, "grid", grid)
        _require(0.0 <= self.seg_flip < 0.5, "seg_flip must be in [0, 0.5)")
        if self.workers is None:
            object.__setattr__(self, "workers", int(os.getenv(WORKERS_ENV, "1")))
        _require(self.workers >= 1, "workers must be >= 1")
        self._validate_grid()

    def _validate_grid(self) -> None:
        if self.kind == "votes-ablation":
            values = self.grid.get("M", ())
            _require(len(values) > 0, "votes-ablation needs a non-empty grid.M")
            for m in values:
                _require(isinstance(m, int) and 0 < m <= self.params.N, f"invalid M value {m!r}")
        elif self.kind == "cascade-vs-parallel":
            values = self.grid.get("architecture", ("cascade", "parallel"))
            _require(len(values) > 0, "cascade-vs-parallel needs a non-empty grid.architecture")
            for a in values:
                _require(a in ("cascade", "parallel"), f"invalid architecture {a!r}")
            self.grid["architecture"] = tuple(values)
        elif self.kind == "loss-ablation":
            values = self.grid.get("loss_kind", ("residual", "combined"))
            _require(len(values) > 0, "loss-ablation needs a non-empty grid.loss_kind")
            for k in values:
                _require(k in ("residual", "combined"), f"invalid loss_kind {k!r}")
            self.grid["loss_kind"] = tuple(values)
            unknown = sorted(set(self.loss) - set(LOSS_KEYS))
            _require(not unknown, f"unknown loss keys {unknown}")
            steps = self.loss.get("steps", 400)
            rows = self.loss.get("rows", 8)
            _require(isinstance(steps, int) and steps >= 1, "loss.steps must be an int >= 1")
            _require(isinstance(rows, int) and rows >= 1, "loss.rows must be an int >= 1")
            _require(self.loss.get("lr", 1.0) > 0, "loss.lr must be positive")
            _require(self.loss.get("noise_scale", 0.1) >= 0, "loss.noise_scale must be >= 0")
            _require(self.loss.get("threshold", 1e-3) > 0, "loss.threshold must be positive")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "output_dir": self.output_dir,
            "seeds": list(self.seeds),
            "grid": {k: list(v) for k, v in self.grid.items()},
            "scene": self.scene.to_dict(),
            "params": self.params.to_dict(),
            "noise": self.noise.to_dict(),
            "seg_flip": self.seg_flip,
            "loss": dict(self.loss),
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        for required in ("kind", "output_dir", "seeds"):
            if required not in data:
                raise ConfigError(f"ExperimentConfig: missing required key {required!r}")
        return _build(cls, data)


def resolve_log_level(flag: Optional[str] = None) -> int:
    """Flag beats environment beats INFO."""
    name = (flag or os.getenv(LOG_LEVEL_ENV) or "INFO").upper()
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        raise ConfigError(f"unknown log level {name!r}")
    return level


@dataclass(frozen=True)
class RunConfig:
    """Settings of a single CLI pipeline run (synth / run / eval / demo-voting)."""

    seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    params: PipelineParams = field(default_factory=PipelineParams)
    noise: NoiseModel = field(default_factory=NoiseModel)
    seg_flip: float = 0.0

    def __post_init__(self):
        for key, cls in (("scene", SceneConfig), ("params", PipelineParams), ("noise", NoiseModel)):
            value = getattr(self, key)
            if isinstance(value, Mapping):
                object.__setattr__(self, key, cls.from_dict(value))
        _require(0.0 <= self.seg_flip < 0.5, "seg_flip must be in [0, 0.5)")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "scene": self.scene.to_dict(),
            "params": self.params.to_dict(),
            "noise": self.noise.to_dict(),
            "seg_flip": self.seg_flip,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        return _build(cls, data)


def merge_overrides(data: Mapping[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Nested merge of CLI overrides into config data; ``None`` values are skipped."""
    merged = dict(data)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, Mapping):
            merged[key] = merge_overrides(merged.get(key) or {}, value)
        else:
            merged[key] = value
    return merged
