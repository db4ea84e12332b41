"""Compiled vs fallback trajectory kernels: availability, agreement, physics."""

import numpy as np
import pytest

from osgsim import _kernels, montecarlo as mc, optics
from osgsim.constants import SR87_MASS


def make_trap():
    return optics.trap_field(depth=5.1e-29, waists=[1.35e-6] * 2,
                             center=np.zeros(3), axis_index=2,
                             wavelength=813e-9)


def thermal_cloud(rng, n=64):
    pos = 1e-7 * rng.standard_normal((n, 3))
    vel = 5e-3 * rng.standard_normal((n, 3))
    return pos, vel


class TestBackendSelection:
    def test_backend_reported(self):
        assert _kernels.BACKEND in ("native", "fallback")

    def test_disable_env(self):
        import subprocess
        import sys
        out = subprocess.run(
            [sys.executable, "-c",
             "from osgsim import _kernels; print(_kernels.BACKEND)"],
            env={"OSGSIM_DISABLE_NATIVE": "1", "PATH": "/usr/bin:/bin"},
            capture_output=True, text=True)
        assert out.stdout.strip() == "fallback"

    def test_explicit_fallback_request(self, rng):
        pos, vel = thermal_cloud(rng)
        trap = make_trap()
        out = mc.propagate_ensemble(pos, vel, 4.5, [trap], 1e-6, 1e-8,
                                    backend="fallback")
        assert np.all(np.isfinite(out[0]))


class TestBackendAgreement:
    @pytest.mark.skipif(_kernels.BACKEND != "native",
                        reason="compiled kernel unavailable")
    def test_native_matches_fallback(self, rng):
        pos, vel = thermal_cloud(rng, n=128)
        trap = make_trap()
        beam = optics.GaussianBeam(power=2.8e-3, waists=(4e-6, 4e-6),
                                   center=np.array([0.0, -2e-6, 0.0]),
                                   propagation_axis=np.array([0.0, 0.0, 1.0]),
                                   wavelength=689e-9)
        pol = optics.PolarizabilitySpec()
        fields = [make_trap(), optics.osg_field(beam, pol)]
        m_f = rng.choice([0.5, 2.5, 4.5], size=128)
        pn, vn = mc.propagate_ensemble(pos, vel, m_f, fields, 2e-6, 1e-8,
                                       backend="native")
        pf, vf = mc.propagate_ensemble(pos, vel, m_f, fields, 2e-6, 1e-8,
                                       backend="fallback")
        assert np.max(np.abs(pn - pf)) < 1e-15
        assert np.max(np.abs(vn - vf)) < 1e-9


class TestPropagation:
    def test_ballistic_without_fields(self, rng):
        pos, vel = thermal_cloud(rng)
        out_pos, out_vel = mc.propagate_ensemble(pos, vel, 4.5, [], 3e-6, 1e-8)
        assert np.allclose(out_pos, pos + vel * 3e-6, rtol=0, atol=1e-18)
        assert np.array_equal(out_vel, vel)

    def test_harmonic_closed_orbit(self):
        """In the small-oscillation limit a full trap period returns the atom."""
        trap = make_trap()
        omega = optics.radial_trap_frequency(5.1e-29, 1.35e-6, SR87_MASS)
        period = 2 * np.pi / omega
        n_steps = 20000
        dt = period / n_steps
        x0 = np.array([[5e-9, 0.0, 0.0]])
        v0 = np.zeros((1, 3))
        pos, vel = mc.propagate_ensemble(x0, v0, 4.5, [trap], period, dt)
        assert abs(pos[0, 0] - x0[0, 0]) < 0.02 * abs(x0[0, 0])

    def test_energy_conservation(self, rng):
        trap = make_trap()
        atom = mc.AtomSample(position=np.array([2e-7, -1e-7, 3e-7]),
                             velocity=np.array([4e-3, 2e-3, -3e-3]))
        e0 = mc.total_energy(atom, [trap])
        out = mc.integrate_trajectory(atom, [trap], 20e-6, 2e-9)
        e1 = mc.total_energy(out, [trap])
        assert abs(e1 - e0) < 1e-6 * abs(e0)

    def test_dt_halving_convergence(self):
        trap = make_trap()
        x0 = np.array([[4e-7, 2e-7, -1e-7]])
        v0 = np.array([[6e-3, -4e-3, 2e-3]])
        p1, _ = mc.propagate_ensemble(x0, v0, 4.5, [trap], 8e-6, 4e-9)
        p2, _ = mc.propagate_ensemble(x0, v0, 4.5, [trap], 8e-6, 2e-9)
        assert np.max(np.abs(p1 - p2)) < 1e-9

    def test_step_size_guard(self, rng):
        pos, vel = thermal_cloud(rng, n=4)
        with pytest.raises(ValueError):
            mc.propagate_ensemble(pos, vel, 4.5, [make_trap()], 1e-5, 5e-6)

    def test_spin_dependent_force_sign(self):
        beam = optics.GaussianBeam(power=2.8e-3, waists=(4e-6, 4e-6),
                                   center=np.array([0.0, -2e-6, 0.0]),
                                   propagation_axis=np.array([0.0, 0.0, 1.0]),
                                   wavelength=689e-9)
        fld = optics.osg_field(beam, optics.PolarizabilitySpec())
        x0 = np.zeros((2, 3))
        v0 = np.zeros((2, 3))
        pos, _ = mc.propagate_ensemble(x0, v0, [4.5, 0.5], [fld], 2e-6, 1e-8)
        # stretched state repelled (+y), m = 1/2 attracted (-y)
        assert pos[0, 1] > 0 > pos[1, 1]
