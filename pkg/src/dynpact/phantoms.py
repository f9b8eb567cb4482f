"""Dynamic test objects and synthetic measurement generation.

Two families: an exactly rank-4 piecewise-constant phantom (static ring
plus three discs with distinct smooth time courses) and a smooth "blob"
phantom (bounding ellipsoid, four inner blobs with wash-in/wash-out
dynamics, and two curved tubes carrying a traveling front). Structure
layouts are specified in box-normalized coordinates, so reduced-size
grids reproduce the same scene. Generation is fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import ScanGeometry, VoxelGrid, pose_for_frame
from .operator import FrameData, FrameImage, forward


@dataclass(frozen=True)
class DynamicImage:
    """A space-time image: one length-N voxel vector per frame.

    ``frames`` has shape (N, K); column k is imaging frame k.
    """

    grid: VoxelGrid
    frames: np.ndarray = field(repr=False)

    def __post_init__(self):
        f = np.ascontiguousarray(self.frames, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] != self.grid.n_voxels:
            raise ValueError(
                f"frames must have shape ({self.grid.n_voxels}, K), got {f.shape}"
            )
        if f.shape[1] < 1:
            raise ValueError("need at least one frame")
        if not np.all(np.isfinite(f)):
            raise ValueError("frame values must be finite")
        f.setflags(write=False)
        object.__setattr__(self, "frames", f)

    @property
    def frame_count(self) -> int:
        return self.frames.shape[1]

    @property
    def n_voxels(self) -> int:
        return self.frames.shape[0]

    def frame(self, k: int) -> FrameImage:
        if not 0 <= k < self.frame_count:
            raise ValueError(f"frame index {k} outside [0, {self.frame_count})")
        return FrameImage(self.grid, self.frames[:, k])


@dataclass(frozen=True)
class MeasurementSet:
    """Per-frame channel data for a full scan.

    ``noise_description`` records how noise was added (percent level,
    seed, resulting std); None for noiseless data.
    """

    geometry: ScanGeometry
    frames: tuple[FrameData, ...]
    noise_description: dict | None = None

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) != self.geometry.frame_count:
            raise ValueError(
                f"got {len(frames)} data frames for {self.geometry.frame_count} poses"
            )
        q = self.geometry.channels_per_frame
        p = self.geometry.sample_count
        for k, fr in enumerate(frames):
            if fr.channel_count != q or fr.sample_count != p:
                raise ValueError(
                    f"frame {k} is {fr.channel_count} x {fr.sample_count}, "
                    f"geometry expects {q} x {p}"
                )
        object.__setattr__(self, "frames", frames)

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    def frame(self, k: int) -> FrameData:
        return self.frames[k]

    def max_abs(self) -> float:
        """Largest absolute sample over all frames."""
        return max(float(np.max(np.abs(fr.values))) for fr in self.frames)

    def squared_norm(self) -> float:
        """Sum of squared samples over all frames (squared Frobenius)."""
        return float(sum(fr.values @ fr.values for fr in self.frames))


@dataclass(frozen=True)
class TimeActivityCurve:
    """A single voxel's value across frames."""

    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.shape[0] < 1:
            raise ValueError(f"values must be a nonempty vector, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("curve values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]


def _normalized_axes(grid: VoxelGrid):
    """Per-axis voxel coordinates scaled to [-1, 1] over the grid box."""
    out = []
    for d, o in zip(grid.dims, grid.origin):
        half = (d - 1) / 2 * grid.spacing
        centers = o + grid.spacing * np.arange(d)
        mid = o + half
        out.append((centers - mid) / half if half > 0 else np.zeros(d))
    return out


def _flatten_volume(vol: np.ndarray) -> np.ndarray:
    """(nx, ny, nz) array -> x-fastest flat vector."""
    return vol.transpose(2, 1, 0).ravel()


def _logistic(t, center, width):
    return 1.0 / (1.0 + np.exp(-(t - center) / width))


def make_rank4_phantom(
    dims=(40, 40, 3), frame_count: int = 360, spacing: float = 4e-4
) -> DynamicImage:
    """Exactly rank-4 dynamic phantom: ring plus three discs.

    Four disjoint indicator regions, constant along z: a static
    background ring and three interior discs whose time courses are a
    ramp, a raised cosine, and a delayed sigmoid. Every voxel row of
    the space-time matrix is a verbatim copy of its region's curve, so
    the matrix rank is exactly 4.
    """
    if frame_count < 4:
        raise ValueError(f"need at least 4 frames for rank 4, got {frame_count}")
    grid = VoxelGrid.centered(dims, spacing)
    nx, ny, nz = grid.dims
    ax, ay, _ = _normalized_axes(grid)
    xg, yg = np.meshgrid(ax, ay, indexing="ij")
    rho = np.hypot(xg, yg)

    masks = [
        (rho >= 0.62) & (rho <= 0.85),
        np.hypot(xg + 0.30, yg - 0.25) <= 0.18,
        np.hypot(xg - 0.32, yg - 0.20) <= 0.16,
        np.hypot(xg, yg + 0.33) <= 0.20,
    ]
    for i, m in enumerate(masks):
        if not m.any():
            raise ValueError(
                f"region {i + 1} is empty at dims {dims}; grid too coarse for rank 4"
            )

    t = np.arange(frame_count) / (frame_count - 1)
    curves = [
        np.full(frame_count, 0.8),
        0.2 + 0.8 * t,
        0.1 + 0.4 * (1.0 - np.cos(2.0 * np.pi * t)),
        _logistic(t, 0.6, 0.07),
    ]

    frames = np.zeros((grid.n_voxels, frame_count))
    for mask2d, curve in zip(masks, curves):
        mask = _flatten_volume(np.broadcast_to(mask2d[:, :, None], (nx, ny, nz)))
        frames[mask] = curve
    return DynamicImage(grid, frames)


def _bezier_points(p0, p1, bulge, samples):
    """Quadratic Bezier from p0 to p1 with offset control point, (S, 3)."""
    tau = np.linspace(0.0, 1.0, samples)[:, None]
    ctrl = (p0 + p1) / 2 + bulge
    return (1 - tau) ** 2 * p0 + 2 * tau * (1 - tau) * ctrl + tau**2 * p1


def _tube_fields(points, radius, normalized_xyz, chunk=65536):
    """Distance-based tube membership over voxels.

    Returns (profile, tau) arrays over the flat voxel set: a smooth
    radial bump in [0, 1] and the curve parameter of the nearest curve
    sample (0 where the profile is 0).
    """
    n = normalized_xyz.shape[0]
    samples = points.shape[0]
    tau_axis = np.linspace(0.0, 1.0, samples)
    profile = np.zeros(n)
    tau = np.zeros(n)
    lo = points.min(axis=0) - 1.5 * radius
    hi = points.max(axis=0) + 1.5 * radius
    candidate = np.all((normalized_xyz >= lo) & (normalized_xyz <= hi), axis=1)
    idx = np.flatnonzero(candidate)
    for start in range(0, idx.size, chunk):
        sel = idx[start : start + chunk]
        d2 = ((normalized_xyz[sel, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        nearest = np.argmin(d2, axis=1)
        dist = np.sqrt(d2[np.arange(sel.size), nearest])
        inside = dist <= radius
        r = dist[inside] / radius
        profile[sel[inside]] = (1.0 - r**2) ** 2
        tau[sel[inside]] = tau_axis[nearest[inside]]
    return profile, tau


def make_blob_phantom(
    dims=(100, 100, 75), frame_count: int = 360, spacing: float = 4e-4, peak: float = 1.0
) -> DynamicImage:
    """Smooth dynamic phantom: bounding ellipsoid, four blobs, two tubes.

    Blobs 1 and 3 wash out while 2 and 4 wash in; blob 4's rise starts
    only after 301/360 of the sequence. Curved tubes connect blob 1 to 2
    and 3 to 4, each carrying a front that travels from the washing-out
    blob to the washing-in one. Voxel values are sums of
    (spatial profile x structure time course), normalized so the global
    maximum equals ``peak``. All time courses are nonnegative, bounded
    by ``peak``, and change by at most 16 * peak / frame_count between
    consecutive frames.
    """
    if frame_count < 2:
        raise ValueError(f"need at least 2 frames, got {frame_count}")
    if peak <= 0:
        raise ValueError(f"peak must be > 0, got {peak}")
    grid = VoxelGrid.centered(dims, spacing)
    ax, ay, az = _normalized_axes(grid)
    xg, yg, zg = np.meshgrid(ax, ay, az, indexing="ij")
    xyz = np.column_stack(
        [_flatten_volume(xg), _flatten_volume(yg), _flatten_volume(zg)]
    )
    t = np.arange(frame_count) / (frame_count - 1)

    def radial_bump(center, semi_axis):
        rho2 = ((xyz - center) ** 2).sum(axis=1) / semi_axis**2
        prof = np.zeros(xyz.shape[0])
        inside = rho2 <= 1.0
        prof[inside] = (1.0 - rho2[inside]) ** 2
        return prof

    contributions = []

    # Static bounding ellipsoid, low intensity.
    bound = radial_bump(np.zeros(3), 0.92)
    contributions.append((0.12 * bound, np.ones(frame_count)))

    # Rise of blob 4 must stay negligible through 301/360 of the scan.
    blob_specs = [
        (np.array([-0.45, 0.38, 0.26]), 1.0 - 0.85 * _logistic(t, 0.30, 0.05)),
        (np.array([0.45, 0.38, 0.26]), 0.10 + 0.90 * _logistic(t, 0.45, 0.05)),
        (np.array([-0.45, -0.38, -0.26]), 1.0 - 0.85 * _logistic(t, 0.60, 0.05)),
        (np.array([0.45, -0.38, -0.26]), 0.05 + 0.95 * _logistic(t, 0.92, 0.018)),
    ]
    centers = [c for c, _ in blob_specs]
    for center, curve in blob_specs:
        contributions.append((radial_bump(center, 0.20), curve))

    tube_specs = [
        (centers[0], centers[1], np.array([0.0, 0.22, 0.34]), 0.32, 0.55),
        (centers[2], centers[3], np.array([0.0, -0.22, -0.34]), 0.62, 0.88),
    ]
    for p0, p1, bulge, t_start, t_end in tube_specs:
        # Stop the tube at the blob boundaries so blob-center time
        # courses stay pure (blob 4's must not rise before its time).
        unit = (p1 - p0) / np.linalg.norm(p1 - p0)
        ends = (p0 + 0.14 * unit, p1 - 0.14 * unit)
        profile, tau = _tube_fields(_bezier_points(ends[0], ends[1], bulge, 160), 0.07, xyz)
        arrival = t_start + tau[:, None] * (t_end - t_start)
        lit = profile > 0
        frames_part = np.zeros((xyz.shape[0], frame_count))
        frames_part[lit] = (
            0.6 * profile[lit, None] * _logistic(t[None, :], arrival[lit], 0.04)
        )
        contributions.append(frames_part)

    frames = np.zeros((xyz.shape[0], frame_count))
    for item in contributions:
        if isinstance(item, tuple):
            prof, curve = item
            lit = prof > 0
            frames[lit] += prof[lit, None] * curve[None, :]
        else:
            frames += item
    top = frames.max()
    if top <= 0:
        raise ValueError(f"phantom came out empty at dims {dims}")
    frames *= peak / top
    return DynamicImage(grid, frames)


def make_point_phantom(
    dims=(20, 20, 3),
    frame_count=1,
    *,
    spacing=4e-4,
    position=(0.0, 0.0, 0.0),
) -> DynamicImage:
    """Static single-voxel absorber for calibration runs.

    ``position`` is in meters relative to the grid center; the voxel
    nearest that point carries amplitude 1 in every frame.
    """
    grid = VoxelGrid.centered(dims, spacing)
    coords = grid.positions()
    target = np.asarray(position, dtype=np.float64)
    nearest = int(np.argmin(np.sum((coords - target) ** 2, axis=1)))
    frames = np.zeros((int(np.prod(dims)), frame_count))
    frames[nearest, :] = 1.0
    return DynamicImage(grid, frames)


def blob_phantom_centers(grid: VoxelGrid) -> list[tuple[int, int, int]]:
    """Voxel indices nearest the four blob centers on the given grid."""
    out = []
    for cx, cy, cz in (
        (-0.45, 0.38, 0.26),
        (0.45, 0.38, 0.26),
        (-0.45, -0.38, -0.26),
        (0.45, -0.38, -0.26),
    ):
        idx = []
        for frac, d in zip((cx, cy, cz), grid.dims):
            idx.append(int(round((frac + 1.0) / 2.0 * (d - 1))))
        out.append(tuple(idx))
    return out


def simulate_measurements(phantom: DynamicImage, geometry: ScanGeometry) -> MeasurementSet:
    """Noiseless forward simulation: data frame k is the projection of
    phantom frame k at gantry pose k."""
    if phantom.frame_count != geometry.frame_count:
        raise ValueError(
            f"phantom has {phantom.frame_count} frames, geometry "
            f"{geometry.frame_count}"
        )
    frames = []
    for k in range(geometry.frame_count):
        pose = pose_for_frame(geometry, k)
        frames.append(forward(phantom.frame(k), pose, geometry))
    return MeasurementSet(geometry, tuple(frames))


def add_noise(data: MeasurementSet, percent: float, seed: int = 0) -> MeasurementSet:
    """Add i.i.d. Gaussian noise with std = (percent/100) * max |data|.

    The reference maximum is the input's largest absolute sample (use
    noiseless data as input). percent = 0 returns the input unchanged.
    Never mutates its input; reproducible for a fixed seed.
    """
    if percent < 0:
        raise ValueError(f"percent must be >= 0, got {percent}")
    if percent == 0:
        return MeasurementSet(
            data.geometry, data.frames, {"percent": 0.0, "seed": int(seed), "std": 0.0}
        )
    std = (percent / 100.0) * data.max_abs()
    rng = np.random.default_rng(seed)
    noisy = []
    for fr in data.frames:
        noise = rng.normal(0.0, std, size=fr.values.shape)
        noisy.append(
            FrameData(
                fr.values + noise, fr.channel_count, fr.sample_count, fr.truncation_fraction
            )
        )
    description = {
        "percent": float(percent),
        "seed": int(seed),
        "std": float(std),
        "reference_max_abs": float(std / (percent / 100.0)),
    }
    return MeasurementSet(data.geometry, tuple(noisy), description)


def extract_tac(image, voxel) -> TimeActivityCurve:
    """Time course of one voxel (ix, iy, iz) across all frames.

    Accepts a DynamicImage or a FactoredImage (which must carry a grid).
    """
    ix, iy, iz = (int(v) for v in voxel)
    if isinstance(image, DynamicImage):
        n = image.grid.voxel_index(ix, iy, iz)
        values = image.frames[n, :]
    else:
        if image.grid is None:
            raise ValueError("factored image has no grid; cannot resolve a voxel index")
        n = image.grid.voxel_index(ix, iy, iz)
        values = (image.u[n] * image.s) @ image.v.T
    return TimeActivityCurve(np.array(values), f"voxel ({ix}, {iy}, {iz})")
