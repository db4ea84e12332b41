"""Command-line orchestration of the four experiments plus offline analysis.

Subcommands: imaging-scan | osg-map | quench | release-recapture | analyze |
describe-config.  Each run writes into a directory named by the config hash,
with stable file names and a manifest sufficient to reproduce it bit-exactly
(timings excluded).  Exit codes: 0 success, 2 config error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import shutil
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import camera as cam
from . import classifier, config as cfgmod, experiments, montecarlo as mc, pipeline
from .config import ConfigError
from .spin import population_records_to_csv, quench_experiment

DEFAULT_OUTPUT_ROOT_ENV = "OSGSIM_OUTPUT_ROOT"


def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="osgsim",
        description="Single-atom spin-resolved imaging simulator")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("-c", "--config", default=None, help="YAML config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config field (repeatable)")
        p.add_argument("-o", "--output-root", default=None,
                       help=f"output root (default: ${DEFAULT_OUTPUT_ROOT_ENV} or ./runs)")

    for name in ("imaging-scan", "osg-map", "quench", "release-recapture"):
        add_common(sub.add_parser(name, help=f"run the {name} experiment"))

    p_an = sub.add_parser("analyze", help="re-run the analysis on stored frames")
    add_common(p_an)
    p_an.add_argument("frames_dir", help="directory of frame image+sidecar pairs")

    p_desc = sub.add_parser("describe-config", help="print every field, default and provenance")
    p_desc.add_argument("-c", "--config", default=None)
    p_desc.add_argument("--set", dest="overrides", action="append", default=[])
    return parser


def _output_dir(args, cfg: dict, experiment: str) -> Path:
    root = args.output_root or os.environ.get(DEFAULT_OUTPUT_ROOT_ENV, "runs")
    return Path(root) / f"{experiment}-{cfgmod.config_hash(cfg)}"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, cfg: dict, timings: dict, experiment: str) -> None:
    inventory = {
        p.name: {"sha256": _sha256(p), "bytes": p.stat().st_size}
        for p in sorted(out_dir.iterdir()) if p.name != "manifest.json"
    }
    manifest = {
        "experiment": experiment,
        "config": cfg,
        "config_hash": cfgmod.config_hash(cfg),
        "seed": cfg["seed"],
        "code_version": __version__,
        "timings_s": timings,
        "files": inventory,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _report_json(cfg: dict, result: experiments.OSGMapResult) -> dict:
    model = result.model
    report = result.report
    return {
        "config_hash": cfgmod.config_hash(cfg),
        "seed": cfg["seed"],
        "mixture": {
            "weights": model.weights.tolist(),
            "means_m": model.means.tolist(),
            "covariances_m2": model.covariances.tolist(),
            "log_likelihood": model.log_likelihood,
            "labels": list(model.labels) if model.labels else None,
            "diagnostics": model.diagnostics,
        },
        "regions": [asdict(r) for r in report.regions],
        "n_fidelity_samples": report.n_samples,
    }


def run_quench(cfg: dict, out_dir: Path) -> None:
    schedule = cfgmod.make_field_schedule(cfg)
    times = [t * 1e-3 for t in cfg["quench.times_ms"]]
    records = quench_experiment(schedule, times, dt=cfg["quench.dt_us"] * 1e-6,
                                g_factor=cfg["physics.g_factor_hz_per_g"],
                                p_prep=cfg["quench.p_prep"])
    population_records_to_csv(records, out_dir / "quench.csv")


def run_imaging_scan(cfg: dict, out_dir: Path) -> None:
    scan_cfg = pipeline.ImagingScanConfig(
        source=cfgmod.make_thermal_source(cfg),
        imaging=cfgmod.make_imaging(cfg),
        camera=cfgmod.make_camera(cfg),
        analysis=cfgmod.make_analysis(cfg),
        time_of_flight=cfg["imaging.tof_us"] * 1e-6,
        atom_fraction=cfg["imaging.atom_fraction"])
    times = [t * 1e-6 for t in cfg["imaging_scan.times_us"]]
    rows = pipeline.imaging_time_scan(times, int(cfg["imaging_scan.shots_per_time"]),
                                      scan_cfg, cfg["seed"])
    with open(out_dir / "detection.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "infidelity", "sigma_major_m", "sigma_minor_m",
                    "threshold", "n_shots"])
        for r in rows:
            w.writerow([f"{r.imaging_time:.9e}", f"{r.infidelity:.6e}",
                        f"{r.sigma_major:.6e}", f"{r.sigma_minor:.6e}",
                        f"{r.threshold:.6e}", r.n_shots])


def run_osg_map(cfg: dict, out_dir: Path) -> None:
    map_cfg = experiments.OSGMapConfig(
        source=cfgmod.make_thermal_source(cfg),
        sequence=cfgmod.make_sequence(cfg),
        imaging=cfgmod.make_imaging(cfg),
        camera=cfgmod.make_camera(cfg, frame_px=int(cfg["osg_map.frame_px"])),
        analysis=cfgmod.make_analysis(cfg),
        spin_probabilities=np.asarray(cfg["osg_map.spin_probabilities"], dtype=float))
    result = experiments.run_osg_map(
        map_cfg, int(cfg["osg_map.n_shots"]), cfg["seed"],
        bootstrap_resamples=int(cfg["osg_map.bootstrap_resamples"]))
    (out_dir / "regions.json").write_text(
        json.dumps(_report_json(cfg, result), indent=1, sort_keys=True))
    with open(out_dir / "locations.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_m", "y_m", "m_true", "survived", "detected", "peak_value"])
        for i in range(result.locations.shape[0]):
            w.writerow([f"{result.locations[i, 0]:.9e}", f"{result.locations[i, 1]:.9e}",
                        f"{result.truth_m[i]:g}", int(result.survived[i]),
                        int(result.detected[i]), f"{result.peak_values[i]:.6e}"])
    mc.endpoints_to_csv(result.endpoints_pos, result.endpoints_vel, result.truth_m,
                        out_dir / "endpoints.csv")


def run_release_recapture(cfg: dict, out_dir: Path) -> None:
    source = cfgmod.make_thermal_source(cfg)
    trap = cfgmod.make_tweezer_field(cfg)
    times = [t * 1e-6 for t in cfg["recapture.times_us"]]
    curve = mc.release_recapture(source, times, int(cfg["recapture.n_atoms"]),
                                 cfg["seed"], trap)
    with open(out_dir / "recapture.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "p_recapture", "stderr"])
        for t, p, err in curve:
            w.writerow([f"{t:.9e}", f"{p:.6e}", f"{err:.6e}"])


def run_analyze(cfg: dict, out_dir: Path, frames_dir: str) -> None:
    frames = []
    paths = sorted(Path(frames_dir).glob("*.json"))
    if not paths:
        raise FileNotFoundError(f"no frame sidecars found in {frames_dir}")
    for sidecar in paths:
        try:
            frames.append(cam.load_frame(sidecar.with_suffix("")))
        except (ValueError, KeyError, OSError) as exc:
            print(f"warning: skipping {sidecar.name}: {exc}", file=sys.stderr)
    if not frames:
        raise FileNotFoundError("no loadable frames")
    analysis = cfgmod.make_analysis(cfg)
    locs = []
    for frame in frames:
        filtered = pipeline.lowpass(pipeline.binarize(cam.bias_correct(frame), analysis),
                                    analysis)
        locs.append((pipeline.localize(filtered, analysis, frame.params), frame))
    peaks = np.array([loc.peak_value for loc, _ in locs])
    fit = pipeline.fit_detection_histogram(peaks, analysis)
    detection = {
        "config_hash": cfgmod.config_hash(cfg), "seed": cfg["seed"],
        "n_frames": len(frames), "threshold": fit.threshold,
        "fidelity": fit.fidelity, "residual": fit.residual,
        "zero_peak": fit.zero_peak, "one_peak": fit.one_peak,
    }
    (out_dir / "detection.json").write_text(json.dumps(detection, indent=1, sort_keys=True))
    spin_locs = np.array([loc.position_m for loc, frame in locs
                          if frame.truth and "m_f" in frame.truth
                          and loc.peak_value > fit.threshold])
    if spin_locs.shape[0] >= 200:
        model = classifier.fit_gmm(spin_locs, 4, cfg["seed"])
        report = classifier.fidelity(model, seed=cfg["seed"])
        result = experiments.OSGMapResult(
            locations=spin_locs, truth_m=np.zeros(len(spin_locs)),
            endpoints_pos=np.zeros((0, 3)), endpoints_vel=np.zeros((0, 3)),
            survived=np.ones(len(spin_locs), dtype=bool), model=model, report=report)
        (out_dir / "regions.json").write_text(
            json.dumps(_report_json(cfg, result), indent=1, sort_keys=True))


RUNNERS = {
    "quench": run_quench,
    "imaging-scan": run_imaging_scan,
    "osg-map": run_osg_map,
    "release-recapture": run_release_recapture,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = dict(_parse_override(o) for o in getattr(args, "overrides", []))
        cfg = cfgmod.load_config(args.config, overrides)
    except (ConfigError, FileNotFoundError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.command == "describe-config":
        print(cfgmod.describe_config(cfg))
        return 0

    out_dir = _output_dir(args, cfg, args.command)
    out_dir.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    try:
        if args.command == "analyze":
            run_analyze(cfg, out_dir, args.frames_dir)
        else:
            RUNNERS[args.command](cfg, out_dir)
        timings[args.command] = time.perf_counter() - t0
        _write_manifest(out_dir, cfg, timings, args.command)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        shutil.rmtree(out_dir, ignore_errors=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    print(out_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
