"""Universal back-projection baseline and speed-of-sound calibration.

A one-shot analytic reconstruction for (quasi-)static content: each
channel's trace p(t) is filtered to b(t) = 2 p(t) - 2 t dp/dt and
back-projected onto the voxel grid along spherical shells with uniform
channel weights. A sweep over candidate sound speeds scores each
volume's sharpness; the sharpest volume marks the suggested speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import VoxelGrid, pose_for_frame
from .operator import FrameImage, _time_derivative, grid_positions
from .phantoms import MeasurementSet


@dataclass(frozen=True)
class SosSweepReport:
    """Outcome of a speed-of-sound sweep.

    ``volumes`` holds one reconstruction per candidate speed;
    ``sharpness`` the per-speed score; ``suggested_speed`` the argmax.
    ``volume_paths`` is filled in when volumes are written to disk.
    """

    speeds: tuple[float, ...]
    volumes: tuple[FrameImage, ...]
    sharpness: tuple[float, ...]
    suggested_speed: float
    volume_paths: tuple[str, ...] | None = None

    def __post_init__(self):
        speeds = tuple(float(s) for s in self.speeds)
        if len(speeds) < 2:
            raise ValueError("a sweep needs at least 2 speeds")
        if any(b <= a for a, b in zip(speeds, speeds[1:])):
            raise ValueError("speeds must be strictly increasing")
        if not (len(self.volumes) == len(self.sharpness) == len(speeds)):
            raise ValueError("speeds, volumes, and sharpness must align")
        object.__setattr__(self, "speeds", speeds)
        object.__setattr__(self, "volumes", tuple(self.volumes))
        object.__setattr__(self, "sharpness", tuple(float(s) for s in self.sharpness))


def ubp_reconstruct(
    data: MeasurementSet, frames, grid: VoxelGrid, c0: float
) -> FrameImage:
    """Back-project selected frames into one static volume.

    For every voxel, the filtered datum 2 p - 2 t dp/dt is linearly
    interpolated at the voxel's time of flight for each channel of each
    selected frame, summed with uniform weights, and normalized by the
    total channel count. Times of flight outside the sampling window
    contribute zero.
    """
    frames = [int(k) for k in frames]
    if not frames:
        raise ValueError("frames must not be empty")
    if c0 <= 0:
        raise ValueError(f"c0 must be > 0, got {c0}")
    geometry = data.geometry
    dt = geometry.sample_interval
    p_count = geometry.sample_count
    tau = (np.arange(p_count) + 1.0) * dt
    accum = np.zeros(grid.n_voxels)
    total_channels = 0
    positions = grid_positions(grid)
    for k in frames:
        if not 0 <= k < geometry.frame_count:
            raise ValueError(f"frame index {k} outside [0, {geometry.frame_count})")
        traces = data.frame(k).traces()
        filtered = 2.0 * traces - 2.0 * tau[None, :] * _time_derivative(traces, dt)
        pose = pose_for_frame(geometry, k)
        # Unit weights and a zero guard distance: back-projection has no
        # 1/distance factor to protect.
        part, _ = kernels.gather(
            np.ascontiguousarray(filtered),
            positions,
            pose.positions,
            1.0 / (c0 * dt),
            1.0,
            0.0,
            0,
        )
        accum += part
        total_channels += pose.channel_count
    return FrameImage(grid, accum / total_channels)


def sharpness_score(volume: FrameImage) -> float:
    """Mean squared spatial gradient of the volume.

    A focused reconstruction concentrates amplitude into steep, narrow
    structures and scores high; defocusing smears the same signal into
    shallow arcs and scores low. Zero for a flat volume.
    """
    vol = volume.as_volume()
    spacing = volume.grid.spacing
    grads = np.gradient(vol, spacing, edge_order=1)
    total = sum(float((g**2).sum()) for g in grads)
    return total / vol.size


def sos_sweep(data: MeasurementSet, frames, grid: VoxelGrid, speeds) -> SosSweepReport:
    """Reconstruct at each candidate speed and score sharpness."""
    speeds = [float(s) for s in speeds]
    if len(speeds) < 2:
        raise ValueError("a sweep needs at least 2 speeds")
    if any(b <= a for a, b in zip(speeds, speeds[1:])):
        raise ValueError("speeds must be strictly increasing (no duplicates)")
    volumes = []
    scores = []
    for c0 in speeds:
        vol = ubp_reconstruct(data, frames, grid, c0)
        volumes.append(vol)
        scores.append(sharpness_score(vol))
    best = int(np.argmax(scores))
    return SosSweepReport(
        tuple(speeds), tuple(volumes), tuple(scores), speeds[best]
    )
