"""Single-frame imaging operator: forward projection and exact adjoint.

The forward map takes a voxel image to per-channel data samples in
three linear stages: spherical-delay accumulation onto fast-time bins
(distance-weighted, linearly interpolated), a central temporal
difference (one-sided at the ends of the window), and a constant
acoustic scale 1 / (4 pi c0**2). The adjoint applies the exact
transposes in reverse order, reusing the same interpolation weights,
so <forward(x), y> == <x, adjoint(y)> to rounding.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import FramePose, ScanGeometry, VoxelGrid, pose_for_frame

# Channel-to-voxel distances below spacing / SINGULAR_DISTANCE_FACTOR
# make the 1/distance weight blow up; such geometries are rejected.
SINGULAR_DISTANCE_FACTOR = 10.0


class SingularGeometryError(ValueError):
    """A channel sits (nearly) on top of a voxel node."""


class StabilityWarning(UserWarning):
    """Sampling marches farther than one voxel per time step."""


@functools.lru_cache(maxsize=8)
def grid_positions(grid: VoxelGrid) -> np.ndarray:
    """Cached read-only (N, 3) node coordinates for a grid."""
    pos = np.ascontiguousarray(grid.positions())
    pos.setflags(write=False)
    return pos


@dataclass(frozen=True)
class FrameImage:
    """Voxel values for one imaging frame, flattened x-fastest."""

    grid: VoxelGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.shape != (self.grid.n_voxels,):
            raise ValueError(
                f"values must have shape ({self.grid.n_voxels},), got {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("image values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: VoxelGrid) -> "FrameImage":
        return cls(grid, np.zeros(grid.n_voxels))

    @classmethod
    def from_volume(cls, grid: VoxelGrid, volume: np.ndarray) -> "FrameImage":
        """Build from an (nx, ny, nz) volume array."""
        volume = np.asarray(volume)
        if volume.shape != grid.dims:
            raise ValueError(f"volume shape {volume.shape} != grid dims {grid.dims}")
        return cls(grid, volume.transpose(2, 1, 0).ravel())

    def as_volume(self) -> np.ndarray:
        """Reshape to (nx, ny, nz) with volume[ix, iy, iz] indexing."""
        nx, ny, nz = self.grid.dims
        return self.values.reshape(nz, ny, nx).transpose(2, 1, 0)


@dataclass(frozen=True)
class FrameData:
    """Sampled channel data for one frame.

    ``values`` is flattened channel-major: ``values[q * P + p]`` is
    channel q, fast-time sample p. ``truncation_fraction`` is the share
    of absolute interpolation weight that fell outside the sampling
    window during simulation (0 when not produced by ``forward``).
    """

    values: np.ndarray = field(repr=False)
    channel_count: int = 0
    sample_count: int = 0
    truncation_fraction: float = 0.0

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        q, p = int(self.channel_count), int(self.sample_count)
        if q < 1 or p < 1:
            raise ValueError(f"need channel_count >= 1 and sample_count >= 1, got {q}, {p}")
        if v.shape != (q * p,):
            raise ValueError(f"values must have shape ({q * p},), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("data values must be finite")
        if not 0.0 <= self.truncation_fraction <= 1.0:
            raise ValueError(f"truncation_fraction outside [0, 1]: {self.truncation_fraction}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "channel_count", q)
        object.__setattr__(self, "sample_count", p)
        object.__setattr__(self, "truncation_fraction", float(self.truncation_fraction))

    def traces(self) -> np.ndarray:
        """View of the data as a (channel_count, sample_count) array."""
        return self.values.reshape(self.channel_count, self.sample_count)


def _time_derivative(s: np.ndarray, dt: float) -> np.ndarray:
    """Central difference along axis 1, first-order one-sided at the ends."""
    g = np.empty_like(s)
    g[:, 1:-1] = (s[:, 2:] - s[:, :-2]) / (2.0 * dt)
    g[:, 0] = (s[:, 1] - s[:, 0]) / dt
    g[:, -1] = (s[:, -1] - s[:, -2]) / dt
    return g


def _time_derivative_transpose(y: np.ndarray, dt: float) -> np.ndarray:
    """Exact transpose of :func:`_time_derivative`."""
    h = np.zeros_like(y)
    half = y[:, 1:-1] / (2.0 * dt)
    h[:, :-2] -= half
    h[:, 2:] += half
    h[:, 0] -= y[:, 0] / dt
    h[:, 1] += y[:, 0] / dt
    h[:, -2] -= y[:, -1] / dt
    h[:, -1] += y[:, -1] / dt
    return h


def _check_pose(pose: FramePose, geometry: ScanGeometry):
    if pose.channel_count != geometry.channels_per_frame:
        raise ValueError(
            f"pose has {pose.channel_count} channels, geometry expects "
            f"{geometry.channels_per_frame}"
        )


def _warn_if_unstable(geometry: ScanGeometry, grid: VoxelGrid):
    step = geometry.sound_speed * geometry.sample_interval
    if step > grid.spacing * (1.0 + 1e-12):
        warnings.warn(
            f"sound travels {step:.3e} m per sample but voxels are only "
            f"{grid.spacing:.3e} m wide; delay interpolation will skip voxel "
            f"shells, refine the time sampling or coarsen the grid",
            StabilityWarning,
            stacklevel=3,
        )


def forward(image: FrameImage, pose: FramePose, geometry: ScanGeometry) -> FrameData:
    """Project a frame image to channel data for one gantry pose.

    Returns a :class:`FrameData` whose ``truncation_fraction`` reports
    how much absolute interpolation weight fell outside the
    ``sample_count`` fast-time window.

    Raises
    ------
    SingularGeometryError
        If any channel lies within spacing / 10 of a voxel node.
    """
    _check_pose(pose, geometry)
    grid = image.grid
    _warn_if_unstable(geometry, grid)
    c0 = geometry.sound_speed
    dt = geometry.sample_interval
    ds = grid.spacing
    s, kept, dropped, singular = kernels.spread(
        image.values,
        grid_positions(grid),
        pose.positions,
        1.0 / (c0 * dt),
        ds**3,
        ds / SINGULAR_DISTANCE_FACTOR,
        geometry.sample_count,
    )
    if singular:
        raise SingularGeometryError(
            f"a channel lies within {ds / SINGULAR_DISTANCE_FACTOR:.3e} m of a voxel node"
        )
    g = _time_derivative(s, dt)
    g *= 1.0 / (4.0 * math.pi * c0**2)
    total = kept + dropped
    fraction = dropped / total if total > 0.0 else 0.0
    return FrameData(g.ravel(), pose.channel_count, geometry.sample_count, fraction)


def adjoint(
    data: FrameData, pose: FramePose, geometry: ScanGeometry, grid: VoxelGrid
) -> FrameImage:
    """Exact transpose of :func:`forward` applied to channel data."""
    _check_pose(pose, geometry)
    if data.channel_count != pose.channel_count or data.sample_count != geometry.sample_count:
        raise ValueError(
            f"data is {data.channel_count} x {data.sample_count}, geometry expects "
            f"{pose.channel_count} x {geometry.sample_count}"
        )
    c0 = geometry.sound_speed
    dt = geometry.sample_interval
    ds = grid.spacing
    y = data.traces() * (1.0 / (4.0 * math.pi * c0**2))
    h = _time_derivative_transpose(y, dt)
    f, singular = kernels.gather(
        np.ascontiguousarray(h),
        grid_positions(grid),
        pose.positions,
        1.0 / (c0 * dt),
        ds**3,
        ds / SINGULAR_DISTANCE_FACTOR,
        1,
    )
    if singular:
        raise SingularGeometryError(
            f"a channel lies within {ds / SINGULAR_DISTANCE_FACTOR:.3e} m of a voxel node"
        )
    return FrameImage(grid, f)


def estimate_operator_norm(
    geometry: ScanGeometry,
    grid: VoxelGrid,
    frames=(0,),
    iterations: int = 30,
    seed: int = 0,
) -> float:
    """Largest eigenvalue of sum_k H_k^T H_k over ``frames``, by power iteration.

    The estimate is a Rayleigh quotient of the summed normal operator, so
    it approaches the true value from below as ``iterations`` grows.
    Deterministic for a fixed seed.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("frames must not be empty")
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    rng = np.random.default_rng(seed)
    poses = [pose_for_frame(geometry, k) for k in frames]
    x = rng.standard_normal(grid.n_voxels)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(iterations):
        image = FrameImage(grid, x)
        y = np.zeros(grid.n_voxels)
        for pose in poses:
            y += adjoint(forward(image, pose, geometry), pose, geometry, grid).values
        estimate = float(x @ y)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        x = y / norm
    return estimate
