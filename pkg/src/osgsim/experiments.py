"""End-to-end experiment compositions used by the CLI and the acceptance suite.

The spin-separation map chains every stage: thermal sampling, separation pulse
and expansion, photon-recoil walk, EMCCD frame, localization, mixture fit and
region fidelities.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import camera as cam
from . import classifier, montecarlo as mc, pipeline
from .rng import TAG_SPIN_CHOICE, make_rng
from .spin import m_values

M_VALUES = m_values(4.5)


@dataclass(frozen=True)
class OSGMapConfig:
    source: mc.ThermalSource
    sequence: mc.OSGSequenceConfig
    imaging: mc.ImagingParams
    camera: cam.CameraParams
    analysis: pipeline.AnalysisConfig
    spin_probabilities: np.ndarray = field(
        default_factory=lambda: np.full(10, 0.1))   # over m = +9/2 ... -9/2

    def __post_init__(self):
        p = np.asarray(self.spin_probabilities, dtype=float)
        if p.size != M_VALUES.size or abs(p.sum() - 1.0) > 1e-9 or np.any(p < 0):
            raise ValueError("spin_probabilities must be 10 nonnegative values summing to 1")
        object.__setattr__(self, "spin_probabilities", p)


@dataclass
class OSGMapResult:
    locations: np.ndarray                # (n, 2) localized positions, object plane
    truth_m: np.ndarray                  # (n,) true m labels
    endpoints_pos: np.ndarray            # (n, 3) after expansion, before imaging
    endpoints_vel: np.ndarray
    survived: np.ndarray                 # (n,) imaging survival flags
    peak_values: np.ndarray | None = None
    detected: np.ndarray | None = None   # (n,) peak above the dark-frame cut
    detection_cut: float = float("nan")
    model: classifier.MixtureModel | None = None
    report: classifier.FidelityReport | None = None
    bootstrap: dict[str, float] | None = None

    def mean_displacement(self, m: float, axis: int = 1) -> float:
        """Ensemble mean displacement of true-|m| atoms along the separation axis."""
        sel = np.abs(self.truth_m) == abs(m)
        return float(np.mean(self.endpoints_pos[sel, axis]))

    def displacement_spread(self, m: float) -> tuple[float, float]:
        """Along-separation and transverse standard deviations of a true-|m| cloud."""
        sel = np.abs(self.truth_m) == abs(m)
        return (float(np.std(self.endpoints_pos[sel, 1])),
                float(np.std(self.endpoints_pos[sel, 0])))


def detection_cut(camera: cam.CameraParams, analysis: pipeline.AnalysisConfig,
                  seed: int, n_dark: int = 200, chunk: int = 64) -> float:
    """Highest filtered peak over atom-free frames (dark-run calibration).

    Shots whose filtered maximum stays below this value carry no atom signal;
    their localizations are noise and are excluded from the region fit.
    """
    cut = -np.inf
    for start in range(0, n_dark, chunk):
        binaries = []
        for i in range(start, min(start + chunk, n_dark)):
            frame = cam.render_frame(np.empty((0, 2)), camera, seed,
                                     10_000_000 + i, truth={"atom": False})
            binaries.append(pipeline.binarize(cam.bias_correct(frame), analysis))
        filtered = pipeline.lowpass(np.stack(binaries), analysis)
        for loc in pipeline.localize_stack(filtered, analysis, camera):
            cut = max(cut, loc.peak_value)
    return float(cut)


def run_osg_map(cfg: OSGMapConfig, n_shots: int, seed: int,
                fit: bool = True, bootstrap_resamples: int = 0,
                chunk: int = 256) -> OSGMapResult:
    """Simulate the spin-separation dataset and classify it."""
    rng = make_rng(seed, TAG_SPIN_CHOICE)
    truth_m = rng.choice(M_VALUES, size=n_shots, p=cfg.spin_probabilities)
    pos, vel = mc.sample_phase_space(cfg.source, n_shots, seed)
    pos, vel = mc.osg_sequence(pos, vel, truth_m, cfg.sequence)

    locations = np.empty((n_shots, 2))
    peaks = np.empty(n_shots)
    survived = np.zeros(n_shots, dtype=bool)
    for start in range(0, n_shots, chunk):
        stop = min(start + chunk, n_shots)
        binaries = []
        for i in range(start, stop):
            _, xy, collected, ok, _, _ = mc.fluorescence_walk_arrays(
                pos[i], vel[i], cfg.imaging, seed, i)
            survived[i] = ok
            frame = cam.render_frame(xy[collected], cfg.camera, seed, i,
                                     truth={"atom": True, "m_f": float(truth_m[i])})
            binaries.append(pipeline.binarize(cam.bias_correct(frame), cfg.analysis))
        filtered = pipeline.lowpass(np.stack(binaries), cfg.analysis)
        for j, loc in enumerate(pipeline.localize_stack(filtered, cfg.analysis, cfg.camera)):
            locations[start + j] = loc.position_m
            peaks[start + j] = loc.peak_value

    cut = detection_cut(cfg.camera, cfg.analysis, seed)
    detected = peaks > cut
    result = OSGMapResult(locations=locations, truth_m=truth_m,
                          endpoints_pos=pos, endpoints_vel=vel, survived=survived,
                          peak_values=peaks, detected=detected, detection_cut=cut)
    if fit:
        kept = locations[detected]
        result.model = classifier.fit_gmm(kept, k=4, seed=seed)
        result.report = classifier.fidelity(result.model, seed=seed)
        if bootstrap_resamples:
            result.bootstrap = classifier.bootstrap_errors(
                kept, 4, bootstrap_resamples, seed)
            for region in result.report.regions:
                region.bootstrap_err = result.bootstrap.get(region.label)
    return result


def stretched_map_config(cfg: OSGMapConfig) -> OSGMapConfig:
    """Variant with all atoms pumped to m = +9/2 (single-region check)."""
    p = np.zeros(M_VALUES.size)
    p[0] = 1.0
    return replace(cfg, spin_probabilities=p)
