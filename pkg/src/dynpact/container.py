"""Binary array container and domain-object persistence.

One file = magic "DPCT", a little-endian uint32 format version, a
little-endian uint32 header length, a JSON header (shapes, dtype,
units, ordering, provenance, object kind), then the raw little-endian
float payload. Write-then-read returns bit-identical data. Multi-array
objects (factored images) concatenate their payloads and record each
shape in the header.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .geometry import ScanGeometry, TransducerArc, VoxelGrid
from .lowrank import FactoredImage
from .operator import FrameData, FrameImage
from .phantoms import DynamicImage, MeasurementSet

MAGIC = b"DPCT"
FORMAT_VERSION = 1

_DTYPES = {"float64": "<f8", "float32": "<f4"}

VOXEL_ORDERING = "voxel lexicographic, x fastest"
TRACE_ORDERING = "channel-major then time, sample index fastest"


class ContainerError(IOError):
    """Malformed or inconsistent container file."""


def _encode_header(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_container(path, header: dict, payloads) -> None:
    """Write one container: JSON header plus concatenated float arrays.

    ``header`` must carry a "dtype" of float64 or float32; every
    payload is stored in that type, little-endian.
    """
    dtype = header.get("dtype", "float64")
    if dtype not in _DTYPES:
        raise ValueError(f"dtype must be one of {sorted(_DTYPES)}, got {dtype!r}")
    blob = _encode_header(header)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for arr in payloads:
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes())


def read_container(path) -> tuple[dict, np.ndarray]:
    """Read a container; returns (header, flat payload vector)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ContainerError(f"{path}: bad magic {magic!r}")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version > FORMAT_VERSION:
            raise ContainerError(f"{path}: unsupported format version {version}")
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ContainerError(f"{path}: unreadable header: {exc}") from exc
        payload = fh.read()
    dtype = header.get("dtype", "float64")
    if dtype not in _DTYPES:
        raise ContainerError(f"{path}: unknown dtype {dtype!r}")
    flat = np.frombuffer(payload, dtype=_DTYPES[dtype])
    expected = sum(int(np.prod(s)) for s in _header_shapes(header))
    if flat.size != expected:
        raise ContainerError(
            f"{path}: payload holds {flat.size} values, header promises {expected}"
        )
    return header, flat


def _header_shapes(header: dict) -> list[tuple[int, ...]]:
    if "shapes" in header:
        return [tuple(int(d) for d in s) for s in header["shapes"]]
    return [tuple(int(d) for d in header["shape"])]


def _split_payload(header: dict, flat: np.ndarray) -> list[np.ndarray]:
    out = []
    offset = 0
    for shape in _header_shapes(header):
        size = int(np.prod(shape))
        out.append(flat[offset : offset + size].reshape(shape).astype(np.float64))
        offset += size
    return out


def write_array(path, array, *, kind="array", units="", ordering="", provenance=None,
                dtype="float64", extra=None) -> None:
    array = np.asarray(array)
    header = {
        "kind": kind,
        "shape": list(array.shape),
        "dtype": dtype,
        "units": units,
        "ordering": ordering,
        "provenance": provenance or {},
    }
    if extra:
        header.update(extra)
    write_container(path, header, [array])


def read_array(path) -> tuple[np.ndarray, dict]:
    header, flat = read_container(path)
    return _split_payload(header, flat)[0], header


def grid_header(grid: VoxelGrid) -> dict:
    return {"origin": list(grid.origin), "spacing": grid.spacing, "dims": list(grid.dims)}


def grid_from_header(d: dict) -> VoxelGrid:
    return VoxelGrid(tuple(d["origin"]), float(d["spacing"]), tuple(d["dims"]))


def geometry_header(geometry: ScanGeometry) -> dict:
    return {
        "arcs": [
            {
                "radius": a.radius,
                "polar_angles": list(a.polar_angles),
                "azimuth_offset": a.azimuth_offset,
            }
            for a in geometry.arcs
        ],
        "angular_step": geometry.angular_step,
        "frame_count": geometry.frame_count,
        "sound_speed": geometry.sound_speed,
        "sample_count": geometry.sample_count,
        "sample_interval": geometry.sample_interval,
        "frame_period": geometry.frame_period,
    }


def geometry_from_header(d: dict) -> ScanGeometry:
    arcs = tuple(
        TransducerArc(a["radius"], tuple(a["polar_angles"]), a["azimuth_offset"])
        for a in d["arcs"]
    )
    return ScanGeometry(
        arcs=arcs,
        angular_step=float(d["angular_step"]),
        frame_count=int(d["frame_count"]),
        sound_speed=float(d["sound_speed"]),
        sample_count=int(d["sample_count"]),
        sample_interval=float(d["sample_interval"]),
        frame_period=float(d["frame_period"]),
    )


def write_dynamic_image(path, image: DynamicImage, provenance=None) -> None:
    header = {
        "kind": "dynamic-image",
        "shape": list(image.frames.shape),
        "dtype": "float64",
        "units": "Pa",
        "ordering": f"{VOXEL_ORDERING}; columns are frames",
        "grid": grid_header(image.grid),
        "provenance": provenance or {},
    }
    write_container(path, header, [image.frames])


def read_dynamic_image(path) -> DynamicImage:
    header, flat = read_container(path)
    if header.get("kind") != "dynamic-image":
        raise ContainerError(f"{path}: expected a dynamic-image, got {header.get('kind')!r}")
    return DynamicImage(grid_from_header(header["grid"]), _split_payload(header, flat)[0])


def write_frame_image(path, image: FrameImage, provenance=None) -> None:
    header = {
        "kind": "frame-image",
        "shape": [image.values.shape[0]],
        "dtype": "float64",
        "units": "Pa",
        "ordering": VOXEL_ORDERING,
        "grid": grid_header(image.grid),
        "provenance": provenance or {},
    }
    write_container(path, header, [image.values])


def read_frame_image(path) -> FrameImage:
    header, flat = read_container(path)
    if header.get("kind") != "frame-image":
        raise ContainerError(f"{path}: expected a frame-image, got {header.get('kind')!r}")
    return FrameImage(grid_from_header(header["grid"]), _split_payload(header, flat)[0])


def write_measurement_set(path, data: MeasurementSet, provenance=None) -> None:
    stacked = np.stack([fr.values for fr in data.frames])
    header = {
        "kind": "measurement-set",
        "shape": list(stacked.shape),
        "dtype": "float64",
        "units": "arb",
        "ordering": f"rows are frames; within a row: {TRACE_ORDERING}",
        "geometry": geometry_header(data.geometry),
        "noise": data.noise_description,
        "truncation_fractions": [fr.truncation_fraction for fr in data.frames],
        "provenance": provenance or {},
    }
    write_container(path, header, [stacked])


def read_measurement_set(path) -> MeasurementSet:
    header, flat = read_container(path)
    if header.get("kind") != "measurement-set":
        raise ContainerError(
            f"{path}: expected a measurement-set, got {header.get('kind')!r}"
        )
    geometry = geometry_from_header(header["geometry"])
    stacked = _split_payload(header, flat)[0]
    fractions = header.get("truncation_fractions") or [0.0] * stacked.shape[0]
    frames = tuple(
        FrameData(
            row,
            geometry.channels_per_frame,
            geometry.sample_count,
            float(frac),
        )
        for row, frac in zip(stacked, fractions)
    )
    return MeasurementSet(geometry, frames, header.get("noise"))


def write_factored_image(path, image: FactoredImage, provenance=None) -> None:
    header = {
        "kind": "factored-image",
        "shapes": [list(image.u.shape), list(image.s.shape), list(image.v.shape)],
        "factors": ["u", "s", "v"],
        "dtype": "float64",
        "units": "Pa",
        "ordering": f"u rows: {VOXEL_ORDERING}; v rows: frames",
        "grid": None if image.grid is None else grid_header(image.grid),
        "provenance": provenance or {},
    }
    write_container(path, header, [image.u, image.s, image.v])


def read_factored_image(path) -> FactoredImage:
    header, flat = read_container(path)
    if header.get("kind") != "factored-image":
        raise ContainerError(
            f"{path}: expected a factored-image, got {header.get('kind')!r}"
        )
    u, s, v = _split_payload(header, flat)
    grid = None if header.get("grid") is None else grid_from_header(header["grid"])
    return FactoredImage(u, s, v, grid)
