"""Voxel grid and rotating-gantry scan geometry.

The scanner's rotation axis is the z-axis and the chamber center is the
coordinate origin. Grids are usually built centered on the origin
(:meth:`VoxelGrid.centered`) so that arc radii are measured from the
center of the imaged volume. All lengths are meters, angles radians,
times seconds. Frame indices are 0-based throughout the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TRITOM_RADIUS = 0.065            # central element to chamber center
TRITOM_ELEMENTS = 96
TRITOM_SOUND_SPEED = 1495.0
TRITOM_SAMPLE_COUNT = 2048
TRITOM_SAMPLE_INTERVAL = 3.2e-8  # 31.25 MHz
TRITOM_FRAME_PERIOD = 0.1        # 10 Hz laser repetition rate

# Arc azimuths for 1, 2 (90 deg apart) and 4 (45 deg apart) views per frame.
VIEW_AZIMUTHS = {
    1: (0.0,),
    2: (0.0, math.pi / 2),
    4: (0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4),
}


@dataclass(frozen=True)
class VoxelGrid:
    """Uniform Cartesian grid of expansion-function nodes.

    Voxels are ordered lexicographically with x fastest:
    ``n = ix + nx * (iy + ny * iz)``.
    """

    origin: tuple[float, float, float]
    spacing: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        if self.spacing <= 0:
            raise ValueError(f"spacing must be > 0, got {self.spacing}")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"all dims must be >= 1, got {self.dims}")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", float(self.spacing))

    @classmethod
    def centered(cls, dims, spacing) -> "VoxelGrid":
        """Grid whose node cloud is centered on the scanner origin."""
        dims = tuple(int(d) for d in dims)
        origin = tuple(-(d - 1) / 2 * spacing for d in dims)
        return cls(origin, spacing, dims)

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.origin) + (np.asarray(self.dims) - 1) / 2 * self.spacing

    def positions(self) -> np.ndarray:
        """Node coordinates, shape (N, 3), x-fastest order."""
        nx, ny, nz = self.dims
        ax = self.origin[0] + self.spacing * np.arange(nx)
        ay = self.origin[1] + self.spacing * np.arange(ny)
        az = self.origin[2] + self.spacing * np.arange(nz)
        zz, yy, xx = np.meshgrid(az, ay, ax, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])

    def voxel_index(self, ix: int, iy: int, iz: int) -> int:
        nx, ny, nz = self.dims
        if not (0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz):
            raise ValueError(f"voxel ({ix}, {iy}, {iz}) outside grid dims {self.dims}")
        return ix + nx * (iy + ny * iz)


@dataclass(frozen=True)
class TransducerArc:
    """Vertical arc of point-like elements on a circle about the origin.

    ``polar_angles`` are elevations from the horizontal (xy) plane; the
    arc lies in the vertical plane at azimuth ``azimuth_offset``.
    """

    radius: float
    polar_angles: tuple[float, ...]
    azimuth_offset: float = 0.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"radius must be > 0, got {self.radius}")
        angles = tuple(float(a) for a in self.polar_angles)
        if len(angles) == 0:
            raise ValueError("arc needs at least one element")
        if any(b <= a for a, b in zip(angles, angles[1:])):
            raise ValueError("polar_angles must be strictly increasing")
        object.__setattr__(self, "polar_angles", angles)
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "azimuth_offset", float(self.azimuth_offset))

    @property
    def element_count(self) -> int:
        return len(self.polar_angles)

    def base_positions(self) -> np.ndarray:
        """Element coordinates at frame 0, shape (element_count, 3)."""
        theta = np.asarray(self.polar_angles)
        phi = self.azimuth_offset
        return self.radius * np.column_stack(
            [np.cos(theta) * math.cos(phi), np.cos(theta) * math.sin(phi), np.sin(theta)]
        )


def build_arc(radius, count, polar_span=math.pi / 2, azimuth_offset=0.0) -> TransducerArc:
    """Build an arc of ``count`` elements spread uniformly in elevation.

    Elements cover ``[-polar_span/2, +polar_span/2]`` endpoint-inclusive,
    centered on the horizontal plane; a single element sits exactly on it.
    """
    if radius <= 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if not 0 < polar_span <= math.pi:
        raise ValueError(f"polar_span must be in (0, pi], got {polar_span}")
    if count == 1:
        angles = np.array([0.0])
    else:
        angles = np.linspace(-polar_span / 2, polar_span / 2, count)
    return TransducerArc(radius, tuple(angles), azimuth_offset)


@dataclass(frozen=True)
class ScanGeometry:
    """Sequential rotating-gantry acquisition: arcs, rotation, sampling.

    ``frame_period`` is wall-clock metadata only; reconstruction depends
    on frame indices alone.
    """

    arcs: tuple[TransducerArc, ...]
    angular_step: float
    frame_count: int
    sound_speed: float = TRITOM_SOUND_SPEED
    sample_count: int = TRITOM_SAMPLE_COUNT
    sample_interval: float = TRITOM_SAMPLE_INTERVAL
    frame_period: float = TRITOM_FRAME_PERIOD

    def __post_init__(self):
        object.__setattr__(self, "arcs", tuple(self.arcs))
        if self.frame_count < 1:
            raise ValueError(f"frame_count must be >= 1, got {self.frame_count}")
        if self.sound_speed <= 0:
            raise ValueError(f"sound_speed must be > 0, got {self.sound_speed}")
        if self.sample_count < 2:
            raise ValueError(f"sample_count must be >= 2, got {self.sample_count}")
        if self.sample_interval <= 0:
            raise ValueError(f"sample_interval must be > 0, got {self.sample_interval}")
        n = len(self.arcs)
        if n not in VIEW_AZIMUTHS:
            raise ValueError(f"supported view counts are 1, 2, 4; got {n} arcs")
        expected = VIEW_AZIMUTHS[n]
        offsets = tuple(a.azimuth_offset for a in self.arcs)
        if any(abs(o - e) > 1e-9 for o, e in zip(offsets, expected)):
            raise ValueError(
                f"{n}-view azimuth offsets must be {tuple(round(e, 6) for e in expected)}, "
                f"got {tuple(round(o, 6) for o in offsets)}"
            )

    @property
    def views_per_frame(self) -> int:
        return len(self.arcs)

    @property
    def channels_per_frame(self) -> int:
        return sum(a.element_count for a in self.arcs)

    @property
    def samples_per_frame(self) -> int:
        return self.channels_per_frame * self.sample_count

    def base_positions(self) -> np.ndarray:
        """Frame-0 channel positions, arcs concatenated in order, (Q, 3)."""
        return np.vstack([a.base_positions() for a in self.arcs])


@dataclass(frozen=True)
class FramePose:
    """Channel positions for one imaging frame: the base arcs rotated
    about z by ``frame_index * angular_step``."""

    frame_index: int
    positions: np.ndarray = field(repr=False)

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must have shape (Q, 3), got {pos.shape}")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def channel_count(self) -> int:
        return self.positions.shape[0]


def rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def pose_for_frame(geometry: ScanGeometry, k: int) -> FramePose:
    """Channel positions at frame ``k`` (0-based, ``0 <= k < frame_count``)."""
    if not 0 <= k < geometry.frame_count:
        raise ValueError(f"frame index {k} outside [0, {geometry.frame_count})")
    rot = rotation_z(k * geometry.angular_step)
    return FramePose(k, geometry.base_positions() @ rot.T)


def standard_geometry(
    views=1,
    *,
    frame_count=360,
    angular_step=math.radians(1.0),
    radius=TRITOM_RADIUS,
    elements_per_arc=TRITOM_ELEMENTS,
    polar_span=math.pi / 2,
    sound_speed=TRITOM_SOUND_SPEED,
    sample_count=TRITOM_SAMPLE_COUNT,
    sample_interval=TRITOM_SAMPLE_INTERVAL,
    frame_period=TRITOM_FRAME_PERIOD,
) -> ScanGeometry:
    """Scanner-like geometry with 1, 2, or 4 identical arcs per frame."""
    if views not in VIEW_AZIMUTHS:
        raise ValueError(f"views must be one of {sorted(VIEW_AZIMUTHS)}, got {views}")
    arcs = tuple(
        build_arc(radius, elements_per_arc, polar_span, az) for az in VIEW_AZIMUTHS[views]
    )
    return ScanGeometry(
        arcs=arcs,
        angular_step=angular_step,
        frame_count=frame_count,
        sound_speed=sound_speed,
        sample_count=sample_count,
        sample_interval=sample_interval,
        frame_period=frame_period,
    )
