"""
Voxel accumulator and vote casting.

Counts are stored z-major, as an array of shape ``(nz, ny, nx)``, so the
C-order linear index is ``(iz * ny + iy) * nx + ix`` and ``argmax`` breaks ties
towards the lowest linear index.

A radial vote increments every voxel whose centre c satisfies
``| ||c - voter|| - radius | <= rho / 2``. Rasterisation only visits the
columns of the sphere's bounding box and, per column, the z-ranges the shell can
reach (plus one voxel of slack on each end); every candidate then goes through
the same membership test as :func:`shell_mask`, so the result is identical to a
full-grid scan.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from .errors import ArgumentError, EmptyAccumulatorError, ResourceError
from .geometry import Point3, PointCloud, as_point, as_points
from .keypoints import RadiiMatrix

logger = logging.getLogger(__name__)

DEFAULT_MAX_VOXELS = 512**3
DUMP_MAGIC = b"RPAC"
_HEADER = struct.Struct("<4s3q4d")


@dataclass(eq=False)
class Accumulator3D:
    """Dense voxel grid of vote counts. Single-writer; combine copies with merge()."""

    origin: Point3
    dims: Tuple[int, int, int]
    rho: float
    counts: NDArray[np.int64]

    def __post_init__(self):
        self.origin = as_point(self.origin)
        self.dims = tuple(int(d) for d in self.dims)  # type: ignore[assignment]
        if self.rho <= 0:
            raise ArgumentError(f"rho must be positive, got {self.rho}")
        if any(d < 1 for d in self.dims):
            raise ArgumentError(f"dims must be >= 1, got {self.dims}")
        nx, ny, nz = self.dims
        if self.counts.shape != (nz, ny, nx):
            raise ArgumentError(f"counts shape {self.counts.shape} does not match dims {self.dims}")

    def axis_centers(self, axis: int) -> NDArray[np.float64]:
        """Voxel-centre coordinates along x (0), y (1) or z (2)."""
        return self.origin[axis] + (np.arange(self.dims[axis]) + 0.5) * self.rho

    def voxel_of(self, point: Any) -> Optional[Tuple[int, int, int]]:
        """(ix, iy, iz) of the voxel containing ``point``, or None outside the grid."""
        idx = np.floor((as_point(point) - self.origin) / self.rho)
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.dims)):
            return None
        return int(idx[0]), int(idx[1]), int(idx[2])

    def voxel_center(self, ix: int, iy: int, iz: int) -> Point3:
        return self.origin + (np.array([ix, iy, iz], dtype=np.float64) + 0.5) * self.rho

    def count_at(self, ix: int, iy: int, iz: int) -> int:
        return int(self.counts[iz, iy, ix])

    def total(self) -> int:
        return int(self.counts.sum())

    def same_grid(self, other: "Accumulator3D") -> bool:
        return (
            self.dims == other.dims
            and self.rho == other.rho
            and np.array_equal(self.origin, other.origin)
        )

    def empty_like(self) -> "Accumulator3D":
        return Accumulator3D(self.origin.copy(), self.dims, self.rho, np.zeros_like(self.counts))


@dataclass(frozen=True, eq=False)
class KeypointEstimate:
    position: Point3
    score: int
    keypoint_index: int
    votes: int = 0


def new_accumulator(
    lower: Any, upper: Any, rho: float, max_voxels: int = DEFAULT_MAX_VOXELS
) -> Accumulator3D:
    """
    Zeroed grid covering [lower, upper] with cubic voxels of edge ``rho``.

    Raises:
        ResourceError: the grid would exceed ``max_voxels``
    """
    lo, hi = as_point(lower), as_point(upper)
    if not np.all(hi > lo):
        raise ArgumentError("upper must exceed lower on every axis")
    if not rho > 0:
        raise ArgumentError(f"rho must be positive, got {rho}")
    dims = tuple(max(1, int(math.ceil(e / rho))) for e in (hi - lo))
    voxels = dims[0] * dims[1] * dims[2]
    if voxels > max_voxels:
        raise ResourceError(
            f"accumulator of {dims} = {voxels} voxels exceeds the cap of {max_voxels}",
            voxels=voxels,
            max_voxels=max_voxels,
        )
    nx, ny, nz = dims
    return Accumulator3D(lo, dims, float(rho), np.zeros((nz, ny, nx), dtype=np.int64))


def _in_shell(dx, dy, dz, radius: float, half: float):
    return np.abs(np.sqrt(dx * dx + dy * dy + dz * dz) - radius) <= half


def shell_mask(acc: Accumulator3D, voter: Any, radius: float) -> NDArray[np.bool_]:
    """Full-grid shell membership, shape (nz, ny, nx)."""
    v = as_point(voter)
    dx = (acc.axis_centers(0) - v[0])[None, None, :]
    dy = (acc.axis_centers(1) - v[1])[None, :, None]
    dz = (acc.axis_centers(2) - v[2])[:, None, None]
    return _in_shell(dx, dy, dz, float(radius), acc.rho / 2)


def _index_window(center: float, reach: float, origin: float, rho: float, n: int) -> Tuple[int, int]:
    start = math.floor((center - reach - origin) / rho - 0.5) - 1
    stop = math.ceil((center + reach - origin) / rho - 0.5) + 1
    return max(start, 0), min(stop, n - 1)


def _expand_ranges(starts: NDArray[np.int64], stops: NDArray[np.int64]) -> Tuple[NDArray, NDArray]:
    """Flatten inclusive [start, stop] ranges into (owner, value) pairs."""
    lengths = stops - starts + 1
    total = int(lengths.sum())
    owner = np.repeat(np.arange(lengths.size), lengths)
    offsets = np.arange(total) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    return owner, np.repeat(starts, lengths) + offsets


def cast_radial_vote(acc: Accumulator3D, voter: Any, radius: float) -> int:
    """
    Increment the one-voxel-thick spherical shell of ``radius`` around
    ``voter``. Voxels outside the grid are skipped.

    Returns:
        Number of voxels incremented
    """
    if radius < 0:
        raise ArgumentError(f"radius must be >= 0, got {radius}")
    v = as_point(voter)
    radius = float(radius)
    rho = acc.rho
    half = rho / 2
    reach = radius + half
    nx, ny, nz = acc.dims

    i0, i1 = _index_window(v[0], reach, acc.origin[0], rho, nx)
    j0, j1 = _index_window(v[1], reach, acc.origin[1], rho, ny)
    if i1 < i0 or j1 < j0:
        return 0

    dx = acc.axis_centers(0)[i0:i1 + 1] - v[0]
    dy = acc.axis_centers(1)[j0:j1 + 1] - v[1]
    zc = acc.axis_centers(2)
    dxy2 = (dx * dx)[:, None] + (dy * dy)[None, :]
    ci, cj = np.nonzero(dxy2 <= reach * reach + rho * rho)
    if ci.size == 0:
        return 0
    d2 = dxy2[ci, cj]

    def frac(z):
        return (z - acc.origin[2]) / rho - 0.5

    outer = np.sqrt(np.maximum(reach * reach - d2, 0.0))
    inner_r = radius - half
    inner_sq = inner_r * inner_r - d2 if inner_r > 0 else np.full_like(d2, -1.0)
    split = inner_sq > 0
    inner = np.sqrt(np.where(split, inner_sq, 0.0))
    kmid = int(np.searchsorted(zc, v[2], side="left"))

    # columns whose shell crosses the voter's height: one merged range
    m_start = np.ceil(frac(v[2] - outer)).astype(np.int64) - 1
    m_stop = np.floor(frac(v[2] + outer)).astype(np.int64) + 1
    # columns that pierce the inner sphere: separate lower and upper caps
    lo_stop = np.minimum(np.floor(frac(v[2] - inner)).astype(np.int64) + 1, kmid - 1)
    up_start = np.maximum(np.ceil(frac(v[2] + inner)).astype(np.int64) - 1, kmid)

    col = np.concatenate([np.flatnonzero(~split), np.flatnonzero(split), np.flatnonzero(split)])
    starts = np.concatenate([m_start[~split], m_start[split], up_start[split]])
    stops = np.concatenate([m_stop[~split], lo_stop[split], m_stop[split]])
    starts = np.maximum(starts, 0)
    stops = np.minimum(stops, nz - 1)
    keep = stops >= starts
    if not np.any(keep):
        return 0
    owner, kz = _expand_ranges(starts[keep], stops[keep])
    owner = col[keep][owner]
    ii, jj = ci[owner], cj[owner]

    hit = _in_shell(dx[ii], dy[jj], zc[kz] - v[2], radius, half)
    if not np.any(hit):
        return 0
    acc.counts[kz[hit], jj[hit] + j0, ii[hit] + i0] += 1
    return int(np.count_nonzero(hit))


def cast_radial_votes(acc: Accumulator3D, voters: Any, radii: Iterable[float]) -> int:
    """Cast one radial vote per (voter, radius) pair; returns voxels incremented."""
    total = 0
    for voter, radius in zip(as_points(voters), radii):
        total += cast_radial_vote(acc, voter, float(radius))
    return total


def cast_offset_vote(acc: Accumulator3D, voter: Any, offset: Any) -> bool:
    """Increment the voxel containing voter + offset; False when it falls outside."""
    idx = acc.voxel_of(as_point(voter) + as_point(offset))
    if idx is None:
        return False
    ix, iy, iz = idx
    acc.counts[iz, iy, ix] += 1
    return True


def extract_peak(acc: Accumulator3D, keypoint_index: int = 0, votes: int = 0) -> KeypointEstimate:
    """
    Global maximum refined to the count-weighted centroid of its 3x3x3
    neighbourhood (clipped at the grid border).
    """
    flat = int(np.argmax(acc.counts))
    iz, iy, ix = np.unravel_index(flat, acc.counts.shape)
    score = int(acc.counts[iz, iy, ix])
    if score <= 0:
        raise EmptyAccumulatorError("accumulator holds no votes")
    nx, ny, nz = acc.dims
    zs = slice(max(iz - 1, 0), min(iz + 2, nz))
    ys = slice(max(iy - 1, 0), min(iy + 2, ny))
    xs = slice(max(ix - 1, 0), min(ix + 2, nx))
    block = acc.counts[zs, ys, xs].astype(np.float64)
    cz = acc.axis_centers(2)[zs][:, None, None]
    cy = acc.axis_centers(1)[ys][None, :, None]
    cx = acc.axis_centers(0)[xs][None, None, :]
    weight = block.sum()
    position = np.array([
        float((block * cx).sum() / weight),
        float((block * cy).sum() / weight),
        float((block * cz).sum() / weight),
    ])
    return KeypointEstimate(position, score, keypoint_index, votes)


def merge(a: Accumulator3D, b: Accumulator3D) -> Accumulator3D:
    if not a.same_grid(b):
        raise ArgumentError("cannot merge accumulators with different grids")
    return Accumulator3D(a.origin.copy(), a.dims, a.rho, a.counts + b.counts)


def merge_all(accumulators: Sequence[Accumulator3D]) -> Accumulator3D:
    if not accumulators:
        raise ArgumentError("nothing to merge")
    out = accumulators[0].empty_like()
    for acc in accumulators:
        out = merge(out, acc)
    return out


def cast_radial_votes_partitioned(
    template: Accumulator3D, voters: Any, radii: Any, partitions: int
) -> Accumulator3D:
    """
    Split the votes into ``partitions`` contiguous chunks, cast each into a
    private accumulator and merge. Equal to sequential casting.
    """
    if partitions < 1:
        raise ArgumentError("partitions must be >= 1")
    pts = as_points(voters)
    r = np.asarray(radii, dtype=np.float64).reshape(-1)
    parts = []
    for idx in np.array_split(np.arange(len(pts)), partitions):
        acc = template.empty_like()
        cast_radial_votes(acc, pts[idx], r[idx])
        parts.append(acc)
    return merge_all(parts)


def _check_bounds(bounds: Tuple[Any, Any]) -> Tuple[Point3, Point3]:
    lower, upper = bounds
    return as_point(lower), as_point(upper)


def estimate_keypoints(
    points: PointCloud,
    radii: RadiiMatrix,
    rho: float,
    bounds: Tuple[Any, Any],
    max_voxels: int = DEFAULT_MAX_VOXELS,
) -> List[KeypointEstimate]:
    """
    Radial voting: one fresh accumulator per keypoint column, every point casts
    a sphere of its regressed radius, the peak is the estimate.
    """
    M, K = radii.shape
    if len(points) != M:
        raise ArgumentError(f"{len(points)} voters but radii has {M} rows")
    lower, upper = _check_bounds(bounds)
    estimates = []
    for i in range(K):
        acc = new_accumulator(lower, upper, rho, max_voxels)
        cast = cast_radial_votes(acc, points.points, radii.values[:, i])
        logger.debug(f"Keypoint {i}: {M} radial votes, {cast} voxels incremented")
        estimates.append(extract_peak(acc, keypoint_index=i, votes=M))
    return estimates


def estimate_keypoints_offset(
    points: PointCloud,
    offsets: Any,
    rho: float,
    bounds: Tuple[Any, Any],
    max_voxels: int = DEFAULT_MAX_VOXELS,
) -> List[KeypointEstimate]:
    """Offset voting: ``offsets`` is M x K x 3, each entry votes for one voxel."""
    off = np.asarray(offsets, dtype=np.float64)
    if off.ndim != 3 or off.shape[0] != len(points) or off.shape[2] != 3:
        raise ArgumentError(f"offsets must be M x K x 3 with M={len(points)}, got {off.shape}")
    lower, upper = _check_bounds(bounds)
    estimates = []
    for i in range(off.shape[1]):
        acc = new_accumulator(lower, upper, rho, max_voxels)
        for voter, vec in zip(points.points, off[:, i, :]):
            cast_offset_vote(acc, voter, vec)
        estimates.append(extract_peak(acc, keypoint_index=i, votes=len(points)))
    return estimates


def dump_accumulator(acc: Accumulator3D, path: str | Path) -> None:
    """Little-endian header (magic, dims, origin, rho) followed by int64 counts, z-major."""
    header = _HEADER.pack(DUMP_MAGIC, *acc.dims, *(float(v) for v in acc.origin), float(acc.rho))
    with open(path, "wb") as f:
        f.write(header)
        f.write(acc.counts.astype("<i8").tobytes(order="C"))


def load_accumulator(path: str | Path) -> Accumulator3D:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ArgumentError("accumulator dump is truncated")
    magic, nx, ny, nz, ox, oy, oz, rho = _HEADER.unpack_from(data)
    if magic != DUMP_MAGIC:
        raise ArgumentError("not an accumulator dump")
    counts = np.frombuffer(data, dtype="<i8", offset=_HEADER.size)
    if counts.size != nx * ny * nz:
        raise ArgumentError("accumulator dump is truncated")
    return Accumulator3D(
        np.array([ox, oy, oz]), (nx, ny, nz), rho, counts.astype(np.int64).reshape(nz, ny, nx)
    )
