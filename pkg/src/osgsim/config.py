"""Run configuration: schema with provenance notes, YAML loading, hashing.

Every physical default that has a measured counterpart carries a provenance
string (``reported``: operating value of the experiment being modeled;
``literature``: standard atomic constant; ``chosen``: documented modeling
choice).  ``describe-config`` prints this table.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
import yaml

from . import camera as cam
from . import montecarlo as mc
from . import pipeline
from .constants import (
    DARK_STATE_BRANCHING,
    G_FACTOR_HZ_PER_G,
    KB,
    LIGHTSHEET_WAVELENGTH,
    RED_WAVELENGTH,
    SR87_MASS,
    TWEEZER_WAVELENGTH,
)
from .optics import GaussianBeam, PolarizabilitySpec, radial_trap_frequency, trap_field
from .spin import FieldSchedule


@dataclass(frozen=True)
class Entry:
    default: object
    description: str
    source: str = "chosen"


SCHEMA: dict[str, Entry] = {
    "seed": Entry(1, "base seed for all random streams"),
    "physics.temperature_nK": Entry(750.0, "atom temperature in the tweezer", "reported: 750(100) nK"),
    "physics.g_factor_hz_per_g": Entry(round(G_FACTOR_HZ_PER_G, 2),
                                       "nuclear Zeeman splitting per gauss",
                                       "literature: mu_I = -1.0936 mu_N, I = 9/2"),
    "physics.dark_branching": Entry(DARK_STATE_BRANCHING,
                                    "per-scatter branching into the long-lived dark state",
                                    "literature: 1:50000 to 1:20000 depending on "
                                    "which cascade channels count as loss"),
    "physics.saturation": Entry(20.0, "imaging intensity in saturation units", "reported: I ~ 20 Isat"),
    "tweezer.waist_um": Entry(1.35, "tweezer 1/e^2 waist", "reported: 1.35(8) um"),
    "tweezer.depth_uK": Entry(3.7, "tweezer depth at detection settings", "reported: kB x 3.7 uK"),
    "tweezer.wavelength_nm": Entry(TWEEZER_WAVELENGTH * 1e9, "tweezer wavelength", "reported: 813 nm"),
    "lightsheet.waist_y_um": Entry(200.0, "light-sheet waist along y", "reported: 200 um"),
    "lightsheet.waist_z_um": Entry(20.0, "light-sheet waist along z", "reported: 20 um"),
    "lightsheet.depth_uK": Entry(60.0, "light-sheet depth during separation/expansion",
                                 "reported: kB x 60 uK maximal depth"),
    "lightsheet.wavelength_nm": Entry(LIGHTSHEET_WAVELENGTH * 1e9, "light-sheet wavelength",
                                      "reported: 1040 nm"),
    "osg.power_mW": Entry(2.8, "separation-beam power", "reported: 2.8 mW"),
    "osg.waist_um": Entry(4.0, "separation-beam waist in the atom plane", "reported: 4.0(2) um"),
    "osg.offset_um": Entry(2.0, "beam center offset from the tweezer along y", "reported: 2 um"),
    "osg.alpha_scalar_au": Entry(7.2e3, "scalar polarizability", "reported: 7.2e3 a.u."),
    "osg.alpha_tensor_au": Entry(42.5e3, "tensor polarizability", "reported: 42.5e3 a.u."),
    "osg.pulse_us": Entry(5.0, "separation pulse duration", "reported: 5 us"),
    "osg.expansion_us": Entry(94.0, "in-plane expansion time", "reported: 94 us"),
    "osg.pulse_dt_ns": Entry(10.0, "integrator step during the pulse"),
    "osg.expansion_dt_ns": Entry(100.0, "integrator step during expansion"),
    "field.guide_mG": Entry(80.0, "guiding field along x", "reported: 80 mG"),
    "field.quench_G": Entry(1.158, "transverse quench field amplitude", "reported: 1.158 G"),
    "field.rise_ms": Entry(0.3, "1/e rise time of the quench field", "reported: 0.3 ms"),
    "field.detection_angle_deg": Entry(5.0, "detection-basis tilt from the guide axis",
                                       "reported: 5 degrees"),
    "imaging.duration_us": Entry(15.0, "fluorescence exposure", "reported: optimum 13.5-15 us"),
    "imaging.tof_us": Entry(5.0, "time of flight before imaging", "reported: 5 us"),
    "imaging.alternation_ns": Entry(500.0, "beam alternation half-period", "reported: 500 ns"),
    "imaging.collection_efficiency": Entry(
        round(mc.SOLID_ANGLE_FRACTION * mc.OBJECTIVE_TRANSMISSION, 5),
        "collected fraction per emitted photon (solid angle x transmission)",
        "reported: NA 0.55, 50% transmission"),
    "imaging.atom_fraction": Entry(0.5, "fraction of shots containing an atom",
                                   "reported: ~50% loading"),
    "camera.readout_sigma": Entry(10.0, "readout noise, counts"),
    "camera.gain_over_readout": Entry(35.0, "EM gain over readout noise", "reported: g/sigma = 35"),
    "camera.cic_rate": Entry(0.02, "clock-induced charge probability per pixel",
                             "reported: 2% per pixel"),
    "camera.bias": Entry(500.0, "bias offset, counts"),
    "camera.pixel_pitch_um": Entry(16.0, "sensor pixel pitch", "literature: 16 um sensor line"),
    "camera.magnification": Entry(47.8, "total imaging magnification", "reported: 47.8"),
    "camera.quantum_efficiency": Entry(0.8, "sensor quantum efficiency",
                                       "chosen: typical back-illuminated sensor"),
    "camera.psf_nm": Entry(180.0, "diffraction PSF sigma, object plane",
                           "chosen: 0.21 lambda/NA"),
    "camera.frame_px": Entry(64, "frame edge length, pixels"),
    "analysis.binarize_k": Entry(6.5, "binarization threshold in readout sigmas",
                                 "reported: 6.5 sigma"),
    "analysis.kernel_sigma_major": Entry(10.4, "low-pass kernel major sigma, px",
                                         "reported: 10.4 px"),
    "analysis.kernel_sigma_minor": Entry(8.0, "low-pass kernel minor sigma, px",
                                         "reported: 8 px"),
    "analysis.histogram_bins": Entry(60, "maxima histogram bin count"),
    "imaging_scan.times_us": Entry([5.0, 7.5, 10.0, 12.5, 15.0, 17.5, 20.0, 22.5, 25.0],
                                   "imaging times to scan"),
    "imaging_scan.shots_per_time": Entry(600, "shots per scanned time"),
    "osg_map.n_shots": Entry(1000, "atom-containing shots in the separation dataset"),
    "osg_map.frame_px": Entry(160, "frame edge length for separated clouds, pixels"),
    "osg_map.bootstrap_resamples": Entry(0, "bootstrap resamples for fidelity errors (0 = off)"),
    "osg_map.spin_probabilities": Entry([0.1] * 10,
                                        "initial m populations, m = +9/2 ... -9/2"),
    "quench.times_ms": Entry(list(np.round(np.linspace(0.0, 20.0, 161), 6)),
                             "hold times for the quench scan"),
    "quench.dt_us": Entry(10.0, "spin-propagation step"),
    "quench.p_prep": Entry(1.0, "stretched-state preparation probability"),
    "recapture.times_us": Entry(list(np.round(np.linspace(0.0, 300.0, 26), 6)),
                                "trap-off hold times"),
    "recapture.n_atoms": Entry(10000, "Monte-Carlo atoms per hold time"),
}


class ConfigError(ValueError):
    """Invalid configuration; message names the offending field path."""


def default_config() -> dict:
    return {key: entry.default for key, entry in SCHEMA.items()}


def _flatten(nested: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in nested.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if isinstance(value, dict):
            flat.update(_flatten(value, path))
        else:
            flat[path] = value
    return flat


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults merged with a YAML file and dotted-key overrides (flags win)."""
    cfg = default_config()
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must contain a mapping")
        for key, value in _flatten(loaded).items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config field: {key}")
            cfg[key] = value
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config field: {key}")
        cfg[key] = value
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    for key in ("physics.temperature_nK", "tweezer.waist_um", "tweezer.depth_uK",
                "osg.power_mW", "osg.waist_um", "field.rise_ms"):
        if not isinstance(cfg[key], (int, float)) or cfg[key] <= 0:
            raise ConfigError(f"{key} must be a positive number, got {cfg[key]!r}")
    if int(cfg["camera.frame_px"]) < 16 or int(cfg["osg_map.frame_px"]) < 16:
        raise ConfigError("frame sizes must be at least 16 px")
    p = np.asarray(cfg["osg_map.spin_probabilities"], dtype=float)
    if p.size != 10 or abs(p.sum() - 1.0) > 1e-9 or np.any(p < 0):
        raise ConfigError("osg_map.spin_probabilities must be 10 values summing to 1")


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def describe_config(cfg: dict | None = None) -> str:
    cfg = cfg or default_config()
    lines = []
    width = max(len(k) for k in SCHEMA)
    for key, entry in SCHEMA.items():
        value = cfg[key]
        if isinstance(value, list) and len(value) > 6:
            value = f"[{value[0]} ... {value[-1]}] ({len(value)} values)"
        lines.append(f"{key:<{width}}  {value!s:<24}  {entry.description} [{entry.source}]")
    return "\n".join(lines)


# --- builders ---

def make_thermal_source(cfg: dict) -> mc.ThermalSource:
    depth = KB * cfg["tweezer.depth_uK"] * 1e-6
    waist = cfg["tweezer.waist_um"] * 1e-6
    wavelength = cfg["tweezer.wavelength_nm"] * 1e-9
    w_r = radial_trap_frequency(depth, waist, SR87_MASS)
    zr = np.pi * waist**2 / wavelength
    w_z = np.sqrt(2 * depth / (SR87_MASS * zr**2))
    return mc.ThermalSource(
        temperature=cfg["physics.temperature_nK"] * 1e-9,
        omega=np.array([w_r, w_r, w_z]))


def make_tweezer_field(cfg: dict):
    return trap_field(
        depth=KB * cfg["tweezer.depth_uK"] * 1e-6,
        waists=[cfg["tweezer.waist_um"] * 1e-6] * 2,
        center=np.zeros(3), axis_index=2,
        wavelength=cfg["tweezer.wavelength_nm"] * 1e-9)


def make_lightsheet_field(cfg: dict):
    # Propagates along x; transverse waists in (y, z) order.
    return trap_field(
        depth=KB * cfg["lightsheet.depth_uK"] * 1e-6,
        waists=[cfg["lightsheet.waist_y_um"] * 1e-6, cfg["lightsheet.waist_z_um"] * 1e-6],
        center=np.zeros(3), axis_index=0,
        wavelength=cfg["lightsheet.wavelength_nm"] * 1e-9)


def make_osg_beam(cfg: dict) -> GaussianBeam:
    w = cfg["osg.waist_um"] * 1e-6
    return GaussianBeam(
        power=cfg["osg.power_mW"] * 1e-3,
        waists=(w, w),
        center=np.array([0.0, -cfg["osg.offset_um"] * 1e-6, 0.0]),
        propagation_axis=np.array([0.0, 0.0, 1.0]),
        wavelength=RED_WAVELENGTH)


def make_polarizability(cfg: dict) -> PolarizabilitySpec:
    return PolarizabilitySpec(alpha_scalar=cfg["osg.alpha_scalar_au"],
                              alpha_tensor=cfg["osg.alpha_tensor_au"])


def make_sequence(cfg: dict) -> mc.OSGSequenceConfig:
    return mc.OSGSequenceConfig(
        beam=make_osg_beam(cfg),
        polarizability=make_polarizability(cfg),
        lightsheet=make_lightsheet_field(cfg),
        pulse_time=cfg["osg.pulse_us"] * 1e-6,
        expansion_time=cfg["osg.expansion_us"] * 1e-6,
        pulse_dt=cfg["osg.pulse_dt_ns"] * 1e-9,
        expansion_dt=cfg["osg.expansion_dt_ns"] * 1e-9)


def make_imaging(cfg: dict) -> mc.ImagingParams:
    return mc.ImagingParams(
        duration=cfg["imaging.duration_us"] * 1e-6,
        saturation=cfg["physics.saturation"],
        alternation_period=cfg["imaging.alternation_ns"] * 1e-9,
        collection_efficiency=cfg["imaging.collection_efficiency"],
        dark_branching=cfg["physics.dark_branching"])


def make_camera(cfg: dict, frame_px: int | None = None) -> cam.CameraParams:
    n = int(frame_px if frame_px is not None else cfg["camera.frame_px"])
    return cam.CameraParams(
        readout_sigma=cfg["camera.readout_sigma"],
        gain_over_readout=cfg["camera.gain_over_readout"],
        cic_rate=cfg["camera.cic_rate"],
        bias=cfg["camera.bias"],
        pixel_pitch=cfg["camera.pixel_pitch_um"] * 1e-6,
        magnification=cfg["camera.magnification"],
        quantum_efficiency=cfg["camera.quantum_efficiency"],
        psf_sigma=cfg["camera.psf_nm"] * 1e-9,
        frame_shape=(n, n))


def make_analysis(cfg: dict) -> pipeline.AnalysisConfig:
    return pipeline.AnalysisConfig(
        binarize_k=cfg["analysis.binarize_k"],
        kernel_sigma_major=cfg["analysis.kernel_sigma_major"],
        kernel_sigma_minor=cfg["analysis.kernel_sigma_minor"],
        histogram_bins=int(cfg["analysis.histogram_bins"]))


def make_field_schedule(cfg: dict) -> FieldSchedule:
    return FieldSchedule(
        b_guide=np.array([cfg["field.guide_mG"] * 1e-3, 0.0, 0.0]),
        b_quench_amplitude=cfg["field.quench_G"],
        quench_axis=np.array([0.0, 0.0, 1.0]),
        rise_time_tau=cfg["field.rise_ms"] * 1e-3,
        detection_axis_angle=np.deg2rad(cfg["field.detection_angle_deg"]))
