"""Experiment configuration: JSON schema, validation, and builders.

A config file is one JSON object with sections: "study", "phantom",
"geometry", "noise", "solver", "output", plus optional input paths.
``validate_config`` collects every problem at once so a user fixes a
bad file in one pass. Builders translate validated sections into the
domain objects the compute modules take.
"""

from __future__ import annotations

import hashlib
import json
import math

from .geometry import VIEW_AZIMUTHS, standard_geometry
from .phantoms import make_blob_phantom, make_point_phantom, make_rank4_phantom
from .solver import FISTA_VARIANTS, SolverConfig

SCHEMA_VERSION = 1

STUDY_KINDS = (
    "inverse-crime",
    "views-sweep",
    "noise-sweep",
    "kappa-sweep",
    "ubp-calibration",
)
PHANTOM_KINDS = ("rank4", "blob", "point")


class ConfigError(ValueError):
    """Configuration file failed validation; .errors lists the problems."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "study": "inverse-crime",
    "phantom": {
        "kind": "rank4",
        "dims": [20, 20, 3],
        "frame_count": 60,
        "spacing": 4e-4,
        "position": [0.0, 0.0, 0.0],
    },
    "geometry": {
        "views": 4,
        "angular_step_deg": 6.0,
        "radius": 0.013,
        "elements_per_arc": 16,
        "polar_span_deg": 90.0,
        "sound_speed": 1495.0,
        "sample_count": 320,
        "sample_interval": 4e-8,
        "frame_period": 0.1,
    },
    "noise": {"percent": 0.0, "seed": 0},
    "solver": {
        "r_max": 4,
        "epsilon": 1e-12,
        "gamma": 0.0,
        "lam": 0.0,
        "eta": "auto",
        "subsets": 1,
        "max_iterations": 1500,
        "seed": 0,
        "fista_variant": "standard",
        "track_full_fidelity": False,
        "audit_ranks": False,
    },
    "output": ".",
}


def _merge(base, override):
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path) -> dict:
    """Read, default-fill, and validate one config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: not valid JSON: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: top level must be a JSON object"])
    cfg = _merge(DEFAULTS, raw)
    errors = validate_config(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def _check_number(errors, section, key, value, *, minimum=None, integer=False,
                  exclusive=False):
    if integer and not isinstance(value, int):
        errors.append(f"{section}.{key} must be an integer, got {value!r}")
        return
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        errors.append(f"{section}.{key} must be a number, got {value!r}")
        return
    if not math.isfinite(value):
        errors.append(f"{section}.{key} must be finite, got {value!r}")
        return
    if minimum is not None:
        if exclusive and value <= minimum:
            errors.append(f"{section}.{key} must be > {minimum}, got {value}")
        elif not exclusive and value < minimum:
            errors.append(f"{section}.{key} must be >= {minimum}, got {value}")


def validate_config(cfg: dict) -> list[str]:
    """Return every validation problem; empty list means the config is usable."""
    errors: list[str] = []
    if cfg.get("schema_version") != SCHEMA_VERSION:
        errors.append(
            f"schema_version must be {SCHEMA_VERSION}, got {cfg.get('schema_version')!r}"
        )
    if cfg.get("study") not in STUDY_KINDS:
        errors.append(f"study must be one of {STUDY_KINDS}, got {cfg.get('study')!r}")

    ph = cfg.get("phantom", {})
    if ph.get("kind") not in PHANTOM_KINDS:
        errors.append(f"phantom.kind must be one of {PHANTOM_KINDS}, got {ph.get('kind')!r}")
    dims = ph.get("dims")
    if (not isinstance(dims, (list, tuple)) or len(dims) != 3
            or not all(isinstance(d, int) and d >= 1 for d in dims)):
        errors.append(f"phantom.dims must be three positive integers, got {dims!r}")
    _check_number(errors, "phantom", "frame_count", ph.get("frame_count"),
                  minimum=1, integer=True)
    _check_number(errors, "phantom", "spacing", ph.get("spacing"), minimum=0.0,
                  exclusive=True)
    pos = ph.get("position", [0.0, 0.0, 0.0])
    if not isinstance(pos, (list, tuple)) or len(pos) != 3:
        errors.append(f"phantom.position must be three coordinates, got {pos!r}")

    geo = cfg.get("geometry", {})
    if geo.get("views") not in VIEW_AZIMUTHS:
        errors.append(
            f"geometry.views must be one of {sorted(VIEW_AZIMUTHS)}, got {geo.get('views')!r}"
        )
    _check_number(errors, "geometry", "angular_step_deg", geo.get("angular_step_deg"))
    _check_number(errors, "geometry", "radius", geo.get("radius"), minimum=0.0,
                  exclusive=True)
    _check_number(errors, "geometry", "elements_per_arc", geo.get("elements_per_arc"),
                  minimum=1, integer=True)
    _check_number(errors, "geometry", "polar_span_deg", geo.get("polar_span_deg"),
                  minimum=0.0)
    _check_number(errors, "geometry", "sound_speed", geo.get("sound_speed"),
                  minimum=0.0, exclusive=True)
    _check_number(errors, "geometry", "sample_count", geo.get("sample_count"),
                  minimum=2, integer=True)
    _check_number(errors, "geometry", "sample_interval", geo.get("sample_interval"),
                  minimum=0.0, exclusive=True)
    _check_number(errors, "geometry", "frame_period", geo.get("frame_period"),
                  minimum=0.0, exclusive=True)

    noise = cfg.get("noise", {})
    _check_number(errors, "noise", "percent", noise.get("percent"), minimum=0.0)
    _check_number(errors, "noise", "seed", noise.get("seed"), minimum=0, integer=True)
    percents = noise.get("percents")
    if percents is not None:
        if (not isinstance(percents, (list, tuple)) or not percents
                or not all(isinstance(p, (int, float)) and p >= 0 for p in percents)):
            errors.append(f"noise.percents must be nonnegative numbers, got {percents!r}")

    sol = cfg.get("solver", {})
    _check_number(errors, "solver", "r_max", sol.get("r_max"), minimum=1, integer=True)
    _check_number(errors, "solver", "epsilon", sol.get("epsilon"), minimum=0.0)
    _check_number(errors, "solver", "gamma", sol.get("gamma"), minimum=0.0)
    _check_number(errors, "solver", "lam", sol.get("lam"), minimum=0.0)
    eta = sol.get("eta")
    if eta != "auto":
        _check_number(errors, "solver", "eta", eta, minimum=0.0, exclusive=True)
    _check_number(errors, "solver", "subsets", sol.get("subsets"), minimum=1,
                  integer=True)
    _check_number(errors, "solver", "max_iterations", sol.get("max_iterations"),
                  minimum=1, integer=True)
    _check_number(errors, "solver", "seed", sol.get("seed"), minimum=0, integer=True)
    if sol.get("fista_variant") not in FISTA_VARIANTS:
        errors.append(
            f"solver.fista_variant must be one of {FISTA_VARIANTS}, "
            f"got {sol.get('fista_variant')!r}"
        )

    if not isinstance(cfg.get("output"), str) or not cfg.get("output"):
        errors.append(f"output must be a nonempty path, got {cfg.get('output')!r}")

    # Cross-section consistency only when the pieces parse individually.
    if not errors:
        if isinstance(sol.get("subsets"), int) and sol["subsets"] > ph["frame_count"]:
            errors.append(
                f"solver.subsets ({sol['subsets']}) exceeds phantom.frame_count "
                f"({ph['frame_count']})"
            )
        if cfg["study"] == "kappa-sweep" and sol["gamma"] == 0 and sol["lam"] == 0 \
                and "kappa" not in cfg:
            # sweep derives (gamma, lam) per kappa from the truth, so nothing
            # more is needed; explicit kappa overrides the grid
            pass
    kappa = cfg.get("kappa")
    if kappa is not None:
        _check_number(errors, "", "kappa", kappa, minimum=0.0)
    return errors


def config_hash(cfg: dict) -> str:
    """Stable sha256 of the canonical JSON form."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def build_geometry(cfg: dict):
    geo = cfg["geometry"]
    return standard_geometry(
        geo["views"],
        frame_count=cfg["phantom"]["frame_count"],
        angular_step=math.radians(geo["angular_step_deg"]),
        radius=geo["radius"],
        elements_per_arc=geo["elements_per_arc"],
        polar_span=math.radians(geo["polar_span_deg"]),
        sound_speed=geo["sound_speed"],
        sample_count=geo["sample_count"],
        sample_interval=geo["sample_interval"],
        frame_period=geo["frame_period"],
    )


def build_phantom(cfg: dict):
    ph = cfg["phantom"]
    dims = tuple(ph["dims"])
    if ph["kind"] == "rank4":
        return make_rank4_phantom(dims, ph["frame_count"], spacing=ph["spacing"])
    if ph["kind"] == "blob":
        return make_blob_phantom(dims, ph["frame_count"], spacing=ph["spacing"])
    return make_point_phantom(dims, ph["frame_count"], spacing=ph["spacing"],
                              position=tuple(ph.get("position", (0.0, 0.0, 0.0))))


def build_solver_config(cfg: dict, seed=None) -> SolverConfig:
    sol = cfg["solver"]
    return SolverConfig(
        r_max=sol["r_max"],
        epsilon=sol["epsilon"],
        gamma=sol["gamma"],
        lam=sol["lam"],
        eta=sol["eta"],
        subsets=sol["subsets"],
        max_iterations=sol["max_iterations"],
        seed=sol["seed"] if seed is None else seed,
        fista_variant=sol["fista_variant"],
        track_full_fidelity=sol["track_full_fidelity"],
        audit_ranks=sol["audit_ranks"],
    )
