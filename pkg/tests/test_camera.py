"""EMCCD frame synthesis: gain statistics, noise hierarchy, persistence."""

import numpy as np
import pytest

from osgsim import camera as cam


def quiet_params(**kw):
    base = dict(readout_sigma=10.0, gain_over_readout=35.0, cic_rate=0.02,
                bias=500.0, frame_shape=(64, 64))
    base.update(kw)
    return cam.CameraParams(**base)


class TestCameraParams:
    def test_em_gain_product(self):
        p = quiet_params(readout_sigma=12.0, gain_over_readout=35.0)
        assert p.em_gain == 12.0 * 35.0

    def test_object_pixel(self):
        p = quiet_params()
        assert np.isclose(p.object_pixel, 16e-6 / 47.8, rtol=1e-12)

    def test_invalid_rates_rejected(self):
        with pytest.raises(ValueError):
            quiet_params(cic_rate=1.5)
        with pytest.raises(ValueError):
            quiet_params(gain_over_readout=0.0)

    def test_undersampled_psf_warns(self):
        with pytest.warns(UserWarning):
            quiet_params(psf_sigma=1e-9)


class TestRenderFrame:
    def test_empty_noiseless_frame_is_bias(self):
        p = quiet_params(readout_sigma=0.0, cic_rate=0.0, gain_over_readout=35.0)
        frame = cam.render_frame(np.empty((0, 2)), p, seed=1)
        assert np.all(frame.counts == 500)

    def test_gamma_mean_multi_pe(self):
        """n photoelectrons on one pixel amplify to mean n*g."""
        p = quiet_params(cic_rate=0.0, bias=0.0, quantum_efficiency=1.0,
                         psf_sigma=1e-12, frame_shape=(4, 4))
        center = 0.5 * p.object_pixel        # pixel center, not boundary
        events = np.full((3, 2), center)
        vals = np.array([cam.render_frame(events, p, seed=2, shot_index=i)
                         .counts.max() for i in range(100_000)])
        assert np.isclose(vals.mean(), 3 * p.em_gain, rtol=0.01)

    def test_gamma_mean_and_retention(self):
        p = quiet_params(cic_rate=0.0, bias=0.0, quantum_efficiency=1.0,
                         psf_sigma=1e-12, frame_shape=(4, 4))
        events = np.full((1, 2), 0.5 * p.object_pixel)   # one pe, pixel center
        g = p.em_gain
        vals = np.array([cam.render_frame(events, p, seed=3, shot_index=i)
                         .counts.max() for i in range(100_000)])
        assert np.isclose(vals.mean(), g, rtol=0.01)
        # Exponential tail of Gamma(1, g): P(x > 6.5 sigma) = exp(-6.5/35)
        retained = np.mean(vals > 6.5 * p.readout_sigma)
        assert np.isclose(retained, np.exp(-6.5 / 35.0), atol=0.01)

    def test_readout_false_positive_rate(self):
        """Readout noise alone essentially never crosses 6.5 sigma."""
        from scipy.stats import norm
        assert norm.sf(6.5) < 1e-9
        p = quiet_params(cic_rate=0.0, bias=0.0, frame_shape=(64, 64))
        hits = 0
        for i in range(300):
            frame = cam.render_frame(np.empty((0, 2)), p, seed=4, shot_index=i)
            hits += int(np.sum(frame.counts > 6.5 * p.readout_sigma))
        assert hits == 0    # 1.2e6 pixels, expected ~1e-3 events

    def test_cic_dominates_false_positives(self):
        p = quiet_params(bias=0.0)
        rate = []
        for i in range(200):
            frame = cam.render_frame(np.empty((0, 2)), p, seed=5, shot_index=i)
            rate.append(np.mean(frame.counts > 6.5 * p.readout_sigma))
        # 2% CIC per pixel, of which exp(-6.5/35) ~ 83% survive the threshold
        assert np.isclose(np.mean(rate), 0.02 * np.exp(-6.5 / 35.0), rtol=0.05)

    def test_linearity_below_saturation(self):
        p = quiet_params(cic_rate=0.0, bias=0.0, quantum_efficiency=1.0)
        rng = np.random.default_rng(8)
        spread = 6e-6
        n1, n2 = 80, 160
        above = []
        for n in (n1, n2):
            counts = 0
            for i in range(200):
                xy = rng.uniform(-spread, spread, size=(n, 2))
                frame = cam.render_frame(xy, p, seed=6, shot_index=i)
                counts += int(np.sum(frame.counts > 6.5 * p.readout_sigma))
            above.append(counts)
        assert np.isclose(above[1] / above[0], 2.0, rtol=0.05)

    def test_determinism(self):
        p = quiet_params()
        xy = np.array([[0.0, 0.0], [1e-6, -1e-6]])
        f1 = cam.render_frame(xy, p, seed=7, shot_index=3)
        f2 = cam.render_frame(xy, p, seed=7, shot_index=3)
        assert np.array_equal(f1.counts, f2.counts)

    def test_out_of_fov_dropped_and_counted(self):
        p = quiet_params(quantum_efficiency=1.0)
        xy = np.array([[0.0, 0.0], [1e-3, 1e-3]])
        frame = cam.render_frame(xy, p, seed=9)
        assert frame.meta["dropped_events"] == 1
        assert frame.meta["n_detected_events"] == 1


class TestBiasCorrect:
    def test_recorded_idempotent(self):
        p = quiet_params()
        frame = cam.render_frame(np.empty((0, 2)), p, seed=11)
        once = cam.bias_correct(frame)
        twice = cam.bias_correct(once)
        assert np.array_equal(once.counts, twice.counts)

    def test_margin_estimation_accuracy(self):
        p = quiet_params(cic_rate=0.0, frame_shape=(512, 512))
        frame = cam.render_frame(np.empty((0, 2)), p, seed=12)
        corrected = cam.bias_correct(frame, method="margin", margin=128)
        assert abs(corrected.meta["bias_value"] - 500.0) < 0.05 * p.readout_sigma

    def test_margin_residual_small(self):
        p = quiet_params(cic_rate=0.0)
        frame = cam.render_frame(np.empty((0, 2)), p, seed=13)
        corrected = cam.bias_correct(frame, method="margin")
        assert abs(np.mean(corrected.counts[:4])) < 0.5 * p.readout_sigma

    def test_margin_too_large_rejected(self):
        p = quiet_params(frame_shape=(8, 8))
        frame = cam.render_frame(np.empty((0, 2)), p, seed=14)
        with pytest.raises(ValueError):
            cam.bias_correct(frame, method="margin", margin=4)


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        p = quiet_params()
        xy = np.array([[0.0, 0.0], [2e-6, 1e-6]])
        frame = cam.render_frame(xy, p, seed=15, truth={"atom": True})
        png, sidecar = cam.save_frame(frame, tmp_path / "shot_000")
        assert png.exists() and sidecar.exists()
        loaded = cam.load_frame(tmp_path / "shot_000")
        assert np.array_equal(loaded.counts, frame.counts)
        assert loaded.params == frame.params
        assert loaded.truth == {"atom": True}

    def test_rejects_corrected_frames(self, tmp_path):
        p = quiet_params()
        frame = cam.bias_correct(cam.render_frame(np.empty((0, 2)), p, seed=16))
        with pytest.raises(ValueError):
            cam.save_frame(frame, tmp_path / "bad")
