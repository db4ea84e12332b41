"""Top-level acceptance checks for the full measurement chain.

Each numbered criterion prints a single PASS/FAIL line (bypassing pytest
capture) and then asserts; a FAIL line names the sub-checks that missed.
Criteria 4 and 5 run full simulated datasets and take several minutes.
"""

import json
import sys

import numpy as np
import pytest
from scipy.stats import norm

from osgsim import camera as cam, classifier, cli, config as cfgmod
from osgsim import experiments, montecarlo as mc, pipeline, spin
from osgsim.constants import G_FACTOR_HZ_PER_G, SPIN_F
from oracles import constant_field_populations

OPS = spin.make_spin_operators(SPIN_F)

# One line per criterion; replayed after the run by the terminal-summary
# hook in conftest so they survive pytest's fd-level capture.
ACCEPTANCE_LINES: list[str] = []


def report(num: int, name: str, checks: list[tuple[str, bool]]) -> None:
    ok = all(flag for _, flag in checks)
    line = f"criterion {num} ({name}): {'PASS' if ok else 'FAIL'}"
    bad = [label for label, flag in checks if not flag]
    if bad:
        line += " [" + "; ".join(bad) + "]"
    ACCEPTANCE_LINES.append(line)
    print(line, file=sys.__stdout__, flush=True)
    assert ok, line


def test_criterion_1_spin_oracle(rng):
    worst = 0.0
    for _ in range(20):
        b = rng.standard_normal(3)
        b *= rng.uniform(0.05, 2.0) / np.linalg.norm(b)
        t = rng.uniform(1e-4, 5e-3)
        amps = rng.standard_normal(10) + 1j * rng.standard_normal(10)
        amps /= np.linalg.norm(amps)
        schedule = spin.FieldSchedule(b_guide=b, b_quench_amplitude=0.0,
                                      rise_time_tau=1e-3)
        out = spin.evolve(spin.SpinVector(amps=amps), schedule, OPS, t, dt=2e-6)
        ref = constant_field_populations(SPIN_F, b, G_FACTOR_HZ_PER_G, t, amps)
        worst = max(worst, float(np.max(np.abs(out.populations() - ref))))
    long = spin.evolve(spin.stretched_state(OPS, [1.0, 0.0, 0.0]),
                       spin.FieldSchedule(), OPS, 1.0, dt=1e-6)
    drift = abs(long.norm() - 1.0)
    report(1, "spin evolution vs rotation oracle", [
        (f"max population error {worst:.2e} < 1e-8", worst < 1e-8),
        (f"norm drift {drift:.2e} < 1e-10 over 1 s", drift < 1e-10),
    ])


def test_criterion_2_quench_curves(default_cfg):
    schedule = cfgmod.make_field_schedule(default_cfg)
    early = np.linspace(0.0, 20e-3, 201)
    late = np.linspace(480e-3, 500e-3, 201)
    records = spin.quench_experiment(schedule, np.concatenate([early, late]))
    sum_err = max(abs(r.p_m.sum() - 1.0) for r in records)
    p9 = np.array([r.p_abs[0] for r in records])
    e9, l9 = p9[:early.size], p9[early.size:]
    # prepared state is exactly stretched along the guide axis; the tilted
    # detection basis reads cos^18(angle/2) at t = 0
    guide_read = spin.measure_populations(
        spin.stretched_state(OPS, schedule.guide_axis), schedule.guide_axis, OPS)
    t0_expected = np.cos(schedule.detection_axis_angle / 2) ** 18
    report(2, "quench population dynamics", [
        (f"population sum error {sum_err:.1e} < 1e-10", sum_err < 1e-10),
        ("p(9/2) = 1 along the preparation axis",
         abs(guide_read.p_abs[0] - 1.0) < 1e-12),
        (f"t=0 tilted readout {p9[0]:.4f} = cos^18 {t0_expected:.4f}",
         abs(p9[0] - t0_expected) < 1e-9),
        (f"full contrast early (max {e9.max():.3f}, min {e9.min():.3f})",
         e9.max() > 0.95 and e9.min() < 0.05),
        (f"undamped at 500 ms (max {l9.max():.3f}, min {l9.min():.3f})",
         l9.max() > 0.95 and l9.min() < 0.05),
    ])


def test_criterion_3_separation_geometry(default_cfg):
    seq = cfgmod.make_sequence(default_cfg)
    ms = np.array([4.5, 3.5, 2.5, 1.5, 0.5])
    out, _ = mc.osg_sequence(np.zeros((5, 3)), np.zeros((5, 3)), ms, seq)
    free, _ = mc.osg_sequence(np.zeros((5, 3)), np.zeros((5, 3)), ms,
                              mc.OSGSequenceConfig(
                                  beam=seq.beam, polarizability=seq.polarizability,
                                  lightsheet=seq.lightsheet, pulse_time=0.0,
                                  expansion_time=seq.expansion_time + seq.pulse_time,
                                  pulse_dt=seq.pulse_dt, expansion_dt=seq.expansion_dt))
    d = out[:, 1] - free[:, 1]
    sep = abs(d[0] - d[4])
    ordered = d[0] > d[1] > d[2] > max(d[3], d[4])
    report(3, "separation geometry", [
        (f"outermost separation {sep * 1e6:.1f} um within 25 um +/- 20%",
         abs(sep - 25e-6) < 5e-6),
        ("region order 9/2 > 7/2 > 5/2 > merged", bool(ordered)),
        (f"|5/2| deflection {abs(d[2] / d[0]):.3f} of 9/2's, < 5%",
         abs(d[2]) < 0.05 * abs(d[0])),
    ])


@pytest.fixture(scope="module")
def osg_dataset(default_cfg):
    map_cfg = experiments.OSGMapConfig(
        source=cfgmod.make_thermal_source(default_cfg),
        sequence=cfgmod.make_sequence(default_cfg),
        imaging=cfgmod.make_imaging(default_cfg),
        camera=cfgmod.make_camera(default_cfg, frame_px=160),
        analysis=cfgmod.make_analysis(default_cfg))
    return experiments.run_osg_map(map_cfg, 4000, seed=default_cfg["seed"])


def test_criterion_4_spin_region_fidelities(osg_dataset, default_cfg):
    result = osg_dataset
    fid = {r.label: r.fidelity for r in result.report.regions}
    targets = {"7/2": 0.987, "5/2": 0.936, "3/2+1/2": 0.946}
    rates = classifier.classification_rate(result.model, seed=default_cfg["seed"],
                                           n_samples=1_000_000)
    est_gap = max(abs(fid[k] - rates[k]) for k in fid)
    checks = [
        (f"fidelity(9/2) {fid['9/2']:.4f} >= 0.99", fid["9/2"] >= 0.99),
        ("ordering 9/2 > 7/2 > {5/2, merged}",
         fid["9/2"] > fid["7/2"] > max(fid["5/2"], fid["3/2+1/2"])),
    ]
    for label, target in targets.items():
        checks.append((f"fidelity({label}) {fid[label]:.4f} within "
                       f"{target:.3f} +/- 0.015", abs(fid[label] - target) <= 0.015))
    checks.append((f"estimator vs labeled-sample rate {est_gap:.4f} < 0.005",
                   est_gap < 0.005))
    report(4, "spin-region fidelities, 4000 shots", checks)


@pytest.fixture(scope="module")
def imaging_scan(default_cfg):
    scan_cfg = pipeline.ImagingScanConfig(
        source=cfgmod.make_thermal_source(default_cfg),
        imaging=cfgmod.make_imaging(default_cfg),
        camera=cfgmod.make_camera(default_cfg),
        analysis=cfgmod.make_analysis(default_cfg),
        time_of_flight=default_cfg["imaging.tof_us"] * 1e-6,
        atom_fraction=default_cfg["imaging.atom_fraction"])
    times = [t * 1e-6 for t in default_cfg["imaging_scan.times_us"]]
    return pipeline.imaging_time_scan(times, 2000, scan_cfg, default_cfg["seed"])


def test_criterion_5_imaging_time_scan(imaging_scan, default_cfg):
    rows = imaging_scan
    times = np.array([r.imaging_time for r in rows])
    infid = np.array([r.infidelity for r in rows])
    best = int(np.argmin(infid))
    t_best = times[best]
    fid_best = 1.0 - infid[best]
    sigma = np.array([np.hypot(r.sigma_major, r.sigma_minor) / np.sqrt(2)
                      for r in rows])
    # the measured spot variance is the thermal/time-of-flight floor plus the
    # recoil-walk growth; the power law concerns the walk term
    sx, sv = cfgmod.make_thermal_source(default_cfg).sigmas()
    tof = default_cfg["imaging.tof_us"] * 1e-6
    therm2 = sx[0] ** 2 + sv[0] ** 2 * (tof**2 + tof * times + times**2 / 3)
    walk = np.sqrt(sigma**2 - therm2)
    slope = np.polyfit(np.log(times), np.log(walk), 1)[0]
    curve = "/".join(f"{x * 100:.2f}" for x in infid)
    report(5, "imaging-time scan, 2000 shots/time", [
        (f"interior infidelity minimum (curve % {curve})", 0 < best < len(rows) - 1),
        (f"minimum at {t_best * 1e6:.1f} us within 13-16 us",
         13e-6 <= t_best <= 16e-6),
        (f"peak fidelity {fid_best:.4f} in [0.97, 0.99]",
         0.97 <= fid_best <= 0.99),
        (f"spot-size growth exponent {slope:.2f} in [1.3, 1.7]",
         1.3 < slope < 1.7),
    ])


@pytest.mark.filterwarnings("ignore:PSF under-sampled")
def test_criterion_6_photon_counting():
    p = cam.CameraParams(cic_rate=0.0, bias=0.0, quantum_efficiency=1.0,
                         psf_sigma=1e-12, frame_shape=(4, 4))
    one_pe = np.full((1, 2), 0.5 * p.object_pixel)
    vals = np.array([cam.render_frame(one_pe, p, seed=101, shot_index=i)
                     .counts.max() for i in range(100_000)])
    thresh = 6.5 * p.readout_sigma
    retention = float(np.mean(vals > thresh))
    readout_fp = float(norm.sf(6.5))
    dark = cam.CameraParams(bias=0.0)
    cic_fp = np.mean([np.mean(cam.render_frame(np.empty((0, 2)), dark, seed=102,
                                               shot_index=i).counts > thresh)
                      for i in range(200)])
    cic_expected = dark.cic_rate * np.exp(-6.5 / 35.0)
    report(6, "photon-counting analytics", [
        (f"single-pe retention {retention:.4f} = 0.830 +/- 0.01, > 0.80",
         abs(retention - 0.830) < 0.01 and retention > 0.80),
        (f"readout false-positive rate {readout_fp:.1e} < 1e-8 per pixel",
         readout_fp < 1e-8),
        (f"CIC false positives {cic_fp:.5f} vs 0.02 x retention {cic_expected:.5f}",
         abs(cic_fp - cic_expected) < 0.1 * cic_expected),
    ])


def test_criterion_7_release_recapture(default_cfg):
    source = cfgmod.make_thermal_source(default_cfg)
    trap = cfgmod.make_tweezer_field(default_cfg)
    times = np.linspace(0.0, 40e-6, 9)
    curve = mc.release_recapture(source, times, 10_000, seed=41, trap=trap)
    probs = np.array([row[1] for row in curve])
    errs = np.array([row[2] for row in curve])
    monotone = bool(np.all(np.diff(probs) <= 3 * (errs[:-1] + errs[1:])))
    t_fit = mc.fit_recapture_temperature(times, probs, source, trap,
                                         n=10_000, seed=42)
    t_true = default_cfg["physics.temperature_nK"] * 1e-9
    report(7, "release-recapture thermometry", [
        (f"recapture(0) = {probs[0]:.3f}", probs[0] == 1.0),
        ("monotone decreasing curve", monotone),
        (f"self-fit T = {t_fit * 1e9:.0f} nK within 10% of {t_true * 1e9:.0f} nK",
         abs(t_fit - t_true) < 0.10 * t_true),
    ])


def test_criterion_8_reproducibility(tmp_path):
    args = ["--set", "recapture.times_us=[0.0, 15.0, 30.0]",
            "--set", "recapture.n_atoms=400"]
    manifests = []
    for root in ("a", "b"):
        assert cli.main(["release-recapture", "-o", str(tmp_path / root), *args]) == 0
        out_dir = next((tmp_path / root).glob("release-recapture-*"))
        manifests.append(json.loads((out_dir / "manifest.json").read_text()))
    same = manifests[0]["files"] == manifests[1]["files"]
    report(8, "byte-identical reruns", [
        ("identical file hashes for identical config+seed", same),
    ])
