"""Command-line front end.

Subcommands: phantom | simulate | reconstruct | ubp | metrics. All take
--config pointing at a JSON experiment file; --output, --seed, --threads
and --emit-mip override or extend it. Every command writes a provenance
JSON next to its outputs with the config echo, hash, seeds, and code
version, enough to reproduce the run bit-identically.

Exit codes: 0 success, 2 invalid configuration or inconsistent inputs,
3 solver divergence, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynpact",
        description="Dynamic photoacoustic reconstruction experiments.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment JSON file")
    common.add_argument("--output", default=None, help="output directory override")
    common.add_argument("--seed", type=int, default=None, help="solver seed override")
    common.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap for this process")
    common.add_argument("--emit-mip", action="store_true",
                        help="also write per-frame z maximum-intensity projections")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("phantom", parents=[common],
                   help="generate the configured phantom and its TACs")
    sub.add_parser("simulate", parents=[common],
                   help="generate phantom and measurements, optionally noisy")
    p_rec = sub.add_parser("reconstruct", parents=[common],
                           help="solve for a low-rank dynamic estimate")
    p_rec.add_argument("--data", required=True, help="measurement container")
    p_rec.add_argument("--truth", default=None, help="true dynamic image container")
    p_ubp = sub.add_parser("ubp", parents=[common],
                           help="single-frame backprojection and speed sweep")
    p_ubp.add_argument("--data", required=True, help="measurement container")
    p_met = sub.add_parser("metrics", parents=[common],
                           help="compare an estimate against the truth")
    p_met.add_argument("--estimate", required=True, help="estimate container")
    p_met.add_argument("--truth", required=True, help="true dynamic image container")
    return parser


def _apply_thread_cap(threads):
    if threads is None:
        return
    if threads < 1:
        raise ValueError(f"--threads must be positive, got {threads}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)


def _out_dir(cfg, args) -> str:
    path = args.output if args.output else cfg["output"]
    os.makedirs(path, exist_ok=True)
    return path


def _write_provenance(out, cfg, args, outputs, extra=None):
    from . import __version__
    from .config import config_hash
    from .kernels import BACKEND

    record = {
        "artifact_version": __version__,
        "command": args.command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed_override": args.seed,
        "kernel_backend": BACKEND,
        "outputs": sorted(outputs),
    }
    if extra:
        record.update(extra)
    with open(os.path.join(out, "provenance.json"), "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
    return record


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
            fh.write("\n")


def _tac_voxels(cfg, grid):
    """Voxels whose time courses the run reports."""
    from .phantoms import blob_phantom_centers

    override = cfg.get("metrics", {}).get("voxels")
    if override:
        return [tuple(int(i) for i in v) for v in override]
    kind = cfg["phantom"]["kind"]
    if kind == "blob":
        return blob_phantom_centers(grid)
    if kind == "rank4":
        out = []
        midz = grid.dims[2] // 2
        for fx, fy in ((-0.30, 0.25), (0.32, 0.20), (0.0, -0.33)):
            ix = int(round((fx + 1.0) / 2.0 * (grid.dims[0] - 1)))
            iy = int(round((fy + 1.0) / 2.0 * (grid.dims[1] - 1)))
            out.append((ix, iy, midz))
        return out
    # point phantom: the voxel nearest the configured position
    import numpy as np

    target = np.asarray(cfg["phantom"].get("position", (0.0, 0.0, 0.0)), dtype=float)
    idx = int(np.argmin(np.sum((grid.positions() - target) ** 2, axis=1)))
    nx, ny, _ = grid.dims
    return [(idx % nx, (idx // nx) % ny, idx // (nx * ny))]


def _write_tac_csv(path, image, voxels):
    from .phantoms import extract_tac

    tacs = [extract_tac(image, v) for v in voxels]
    header = "frame," + ",".join(f"v_{v[0]}_{v[1]}_{v[2]}" for v in voxels)
    rows = []
    for k in range(len(tacs[0].values)):
        rows.append([k] + [float(t.values[k]) for t in tacs])
    _write_csv(path, header, rows)


def _mip_stack(image):
    """Per-frame z maximum-intensity projections, stacked (K, nx, ny)."""
    import numpy as np

    from .lowrank import FactoredImage, frame_column

    frame_count = image.frame_count
    out = None
    for k in range(frame_count):
        fr = frame_column(image, k) if isinstance(image, FactoredImage) else image.frame(k)
        vol = fr.as_volume()
        mip = vol.max(axis=2)
        if out is None:
            out = np.empty((frame_count,) + mip.shape)
        out[k] = mip
    return out


def _emit_mip(out, name, image, outputs):
    from .container import write_array

    path = os.path.join(out, name)
    write_array(path, _mip_stack(image), kind="mip-stack",
                ordering="frame, x, y; z collapsed by max")
    outputs.append(name)


def _spectrum(frames):
    """Singular values of the frames matrix; Gram route when tall."""
    import numpy as np

    n, k = frames.shape
    if n > 20000:
        gram = frames.T @ frames
        eig = np.linalg.eigvalsh(gram)[::-1]
        return np.sqrt(np.clip(eig, 0.0, None))
    return np.linalg.svd(frames, compute_uv=False)


def cmd_phantom(cfg, args) -> int:
    from .config import build_phantom
    from .container import write_dynamic_image

    out = _out_dir(cfg, args)
    phantom = build_phantom(cfg)
    outputs = ["phantom.dpct", "tacs.csv", "spectrum.csv"]
    write_dynamic_image(os.path.join(out, "phantom.dpct"), phantom)
    _write_tac_csv(os.path.join(out, "tacs.csv"), phantom, _tac_voxels(cfg, phantom.grid))
    sigma = _spectrum(phantom.frames)
    _write_csv(os.path.join(out, "spectrum.csv"), "rank,sigma",
               [(i + 1, float(s)) for i, s in enumerate(sigma)])
    if args.emit_mip:
        _emit_mip(out, "phantom_mip.dpct", phantom, outputs)
    _write_provenance(out, cfg, args, outputs)
    return EXIT_OK


def cmd_simulate(cfg, args) -> int:
    from .config import build_geometry, build_phantom
    from .container import write_dynamic_image, write_measurement_set
    from .phantoms import add_noise, simulate_measurements

    out = _out_dir(cfg, args)
    phantom = build_phantom(cfg)
    geometry = build_geometry(cfg)
    clean = simulate_measurements(phantom, geometry)
    outputs = ["phantom.dpct", "measurements.dpct"]
    write_dynamic_image(os.path.join(out, "phantom.dpct"), phantom)
    write_measurement_set(os.path.join(out, "measurements.dpct"), clean)

    noise_cfg = cfg["noise"]
    levels = noise_cfg.get("percents")
    if levels is None and noise_cfg["percent"] > 0:
        levels = [noise_cfg["percent"]]
    for percent in levels or []:
        noisy = add_noise(clean, percent, noise_cfg["seed"])
        name = f"measurements_noise{percent:g}.dpct"
        write_measurement_set(os.path.join(out, name), noisy)
        outputs.append(name)
    fractions = [fr.truncation_fraction for fr in clean.frames]
    _write_provenance(out, cfg, args, outputs,
                      {"max_truncation_fraction": max(fractions)})
    return EXIT_OK


def _reconstruct_once(cfg, args, data, geometry, grid, truth, out, tag, solver_cfg):
    """One solver run; writes estimate, trace, and optional nSE series."""
    from .container import write_factored_image
    from .metrics import nse_per_frame
    from .solver import reconstruct

    estimate, trace = reconstruct(solver_cfg, data, geometry, grid)
    prefix = f"{tag}_" if tag else ""
    outputs = [f"{prefix}estimate.dpct", f"{prefix}trace.csv"]
    write_factored_image(os.path.join(out, f"{prefix}estimate.dpct"), estimate)
    trace.to_csv(os.path.join(out, f"{prefix}trace.csv"))
    summary = {"iterations": len(trace.ratios), "eta": trace.eta,
               "final_ratio": trace.ratios[-1] if trace.ratios else None}
    if truth is not None:
        series = nse_per_frame(estimate, truth)
        _write_csv(os.path.join(out, f"{prefix}nse.csv"), "frame,nse",
                   list(enumerate(float(v) for v in series.values)))
        outputs.append(f"{prefix}nse.csv")
        summary["average_nse"] = series.mean()
    if args.emit_mip:
        _emit_mip(out, f"{prefix}mip.dpct", estimate, outputs)
    if cfg.get("dense_volumes"):
        from .container import write_dynamic_image
        from .phantoms import DynamicImage

        name = f"{prefix}volumes.dpct"
        write_dynamic_image(os.path.join(out, name),
                            DynamicImage(grid, estimate.to_dense()))
        outputs.append(name)
    return estimate, summary, outputs


def cmd_reconstruct(cfg, args) -> int:
    from .config import build_solver_config
    from .container import read_dynamic_image, read_measurement_set
    from .geometry import VoxelGrid
    from .solver import balanced_regularization, kappa_grid

    out = _out_dir(cfg, args)
    data = read_measurement_set(args.data)
    geometry = data.geometry
    truth = read_dynamic_image(args.truth) if args.truth else None
    if truth is not None:
        grid = truth.grid
    else:
        ph = cfg["phantom"]
        grid = VoxelGrid.centered(tuple(ph["dims"]), ph["spacing"])
    base = build_solver_config(cfg, seed=args.seed)

    outputs = []
    if cfg["study"] == "kappa-sweep":
        if truth is None:
            raise ConfigInputError(
                "kappa-sweep needs --truth to balance the penalty weights"
            )
        kappas = [cfg["kappa"]] if cfg.get("kappa") is not None else kappa_grid(data)
        rows = []
        best = None
        for idx, kappa in enumerate(kappas):
            gamma, lam = balanced_regularization(kappa, truth)
            run_cfg = _replace_solver(base, gamma=gamma, lam=lam)
            _, summary, names = _reconstruct_once(
                cfg, args, data, geometry, grid, truth, out, f"kappa{idx}", run_cfg
            )
            outputs.extend(names)
            rows.append({"index": idx, "kappa": kappa, "gamma": gamma, "lam": lam,
                         **summary})
            if best is None or summary["average_nse"] < best[1]:
                best = (idx, summary["average_nse"])
        sweep = {"runs": rows, "argmin_index": best[0], "argmin_nse": best[1],
                 "argmin_kappa": kappas[best[0]]}
        with open(os.path.join(out, "kappa_sweep.json"), "w", encoding="utf-8") as fh:
            json.dump(sweep, fh, indent=2)
        outputs.append("kappa_sweep.json")
        _write_provenance(out, cfg, args, outputs, {"kappa_sweep": sweep})
    else:
        _, summary, names = _reconstruct_once(
            cfg, args, data, geometry, grid, truth, out, "", base
        )
        outputs.extend(names)
        _write_provenance(out, cfg, args, outputs, {"solver_summary": summary})
    return EXIT_OK


def _replace_solver(base, **updates):
    import dataclasses

    return dataclasses.replace(base, **updates)


def cmd_ubp(cfg, args) -> int:
    import numpy as np

    from .baseline import sos_sweep, ubp_reconstruct
    from .container import read_measurement_set, write_array, write_frame_image
    from .geometry import VoxelGrid

    out = _out_dir(cfg, args)
    data = read_measurement_set(args.data)
    ph = cfg["phantom"]
    grid = VoxelGrid.centered(tuple(ph["dims"]), ph["spacing"])
    frames = list(range(data.geometry.frame_count))
    ubp_cfg = cfg.get("ubp", {})
    outputs = []
    if cfg["study"] == "ubp-calibration" or "speeds" in ubp_cfg:
        speeds = ubp_cfg.get("speeds") or list(range(1480, 1525, 5))
        report = sos_sweep(data, frames, grid, speeds)
        rows = list(zip((float(s) for s in report.speeds),
                        (float(s) for s in report.sharpness)))
        _write_csv(os.path.join(out, "sweep.csv"), "speed,sharpness", rows)
        outputs.append("sweep.csv")
        for speed, vol in zip(report.speeds, report.volumes):
            name = f"ubp_{speed:g}.dpct"
            write_frame_image(os.path.join(out, name), vol)
            outputs.append(name)
        with open(os.path.join(out, "sweep_report.json"), "w", encoding="utf-8") as fh:
            json.dump({"speeds": [float(s) for s in report.speeds],
                       "sharpness": [float(s) for s in report.sharpness],
                       "suggested_speed": float(report.suggested_speed)}, fh, indent=2)
        outputs.append("sweep_report.json")
        best = report.volumes[int(np.argmax(report.sharpness))]
    else:
        speed = ubp_cfg.get("speed", data.geometry.sound_speed)
        best = ubp_reconstruct(data, frames, grid, speed)
        write_frame_image(os.path.join(out, "ubp.dpct"), best)
        outputs.append("ubp.dpct")
    if args.emit_mip:
        write_array(os.path.join(out, "ubp_mip.dpct"), best.as_volume().max(axis=2),
                    kind="mip", ordering="x, y; z collapsed by max")
        outputs.append("ubp_mip.dpct")
    _write_provenance(out, cfg, args, outputs)
    return EXIT_OK


def cmd_metrics(cfg, args) -> int:
    from .container import read_container, read_dynamic_image, read_factored_image
    from .metrics import nse_per_frame, tac_similarity
    from .phantoms import extract_tac

    out = _out_dir(cfg, args)
    header, _ = read_container(args.estimate)
    if header.get("kind") == "factored-image":
        estimate = read_factored_image(args.estimate)
    else:
        estimate = read_dynamic_image(args.estimate)
    truth = read_dynamic_image(args.truth)

    series = nse_per_frame(estimate, truth)
    _write_csv(os.path.join(out, "nse.csv"), "frame,nse",
               list(enumerate(float(v) for v in series.values)))
    voxels = _tac_voxels(cfg, truth.grid)
    _write_tac_csv(os.path.join(out, "tacs_estimate.csv"), estimate, voxels)
    _write_tac_csv(os.path.join(out, "tacs_truth.csv"), truth, voxels)
    rows = []
    for v in voxels:
        est_tac = extract_tac(estimate, v)
        true_tac = extract_tac(truth, v)
        try:
            corr = tac_similarity(est_tac, true_tac)
        except ValueError:
            corr = float("nan")
        rows.append((f"{v[0]}_{v[1]}_{v[2]}", float(corr)))
    _write_csv(os.path.join(out, "tac_similarity.csv"), "voxel,correlation", rows)
    summary = {"average_nse": series.mean(),
               "tac_correlations": {name: c for name, c in rows}}
    with open(os.path.join(out, "metrics_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    outputs = ["nse.csv", "tacs_estimate.csv", "tacs_truth.csv",
               "tac_similarity.csv", "metrics_summary.json"]
    _write_provenance(out, cfg, args, outputs, {"metrics_summary": summary})
    return EXIT_OK


class ConfigInputError(ValueError):
    """Inputs inconsistent with the requested study."""


_COMMANDS = {
    "phantom": cmd_phantom,
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "ubp": cmd_ubp,
    "metrics": cmd_metrics,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        _apply_thread_cap(args.threads)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    from .config import ConfigError, load_config

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for line in exc.errors:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO

    from .container import ContainerError
    from .solver import DivergenceError

    try:
        return _COMMANDS[args.command](cfg, args)
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ConfigInputError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContainerError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
