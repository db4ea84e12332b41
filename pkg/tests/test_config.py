"""Configuration schema, loading, validation, hashing, and builders."""

import numpy as np
import pytest
import yaml

from osgsim import config as cfgmod
from osgsim.config import ConfigError


class TestDefaults:
    def test_every_key_has_default(self):
        cfg = cfgmod.default_config()
        assert set(cfg) == set(cfgmod.SCHEMA)

    def test_defaults_validate(self):
        cfg = cfgmod.load_config()
        assert cfg == cfgmod.default_config()

    def test_spin_probabilities_normalized(self):
        p = np.asarray(cfgmod.default_config()["osg_map.spin_probabilities"])
        assert p.size == 10
        assert np.isclose(p.sum(), 1.0, atol=1e-12)


class TestLoading:
    def test_yaml_nested_merge(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump(
            {"physics": {"temperature_nK": 500.0}, "seed": 7}))
        cfg = cfgmod.load_config(path)
        assert cfg["physics.temperature_nK"] == 500.0
        assert cfg["seed"] == 7
        assert cfg["tweezer.waist_um"] == cfgmod.SCHEMA["tweezer.waist_um"].default

    def test_yaml_flat_keys(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("imaging.duration_us: 10.0\n")
        assert cfgmod.load_config(path)["imaging.duration_us"] == 10.0

    def test_overrides_win_over_file(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("seed: 3\n")
        cfg = cfgmod.load_config(path, {"seed": 9})
        assert cfg["seed"] == 9

    def test_unknown_file_key_rejected(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("physics:\n  bogus: 1\n")
        with pytest.raises(ConfigError, match="physics.bogus"):
            cfgmod.load_config(path)

    def test_unknown_override_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            cfgmod.load_config(None, {"nope.nope": 1})

    def test_non_mapping_file_rejected(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            cfgmod.load_config(path)


class TestValidation:
    @pytest.mark.parametrize("key", ["physics.temperature_nK", "tweezer.waist_um",
                                     "osg.power_mW", "field.rise_ms"])
    def test_positive_fields(self, key):
        with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
            cfgmod.load_config(None, {key: -1.0})

    def test_frame_size_minimum(self):
        with pytest.raises(ConfigError, match="16"):
            cfgmod.load_config(None, {"camera.frame_px": 8})

    def test_spin_probabilities_must_sum_to_one(self):
        with pytest.raises(ConfigError, match="spin_probabilities"):
            cfgmod.load_config(None, {"osg_map.spin_probabilities": [0.2] * 10})


class TestHash:
    def test_stable_across_key_order(self):
        cfg = cfgmod.default_config()
        shuffled = dict(sorted(cfg.items(), reverse=True))
        assert cfgmod.config_hash(cfg) == cfgmod.config_hash(shuffled)

    def test_sensitive_to_values(self):
        cfg = cfgmod.default_config()
        other = dict(cfg, seed=cfg["seed"] + 1)
        assert cfgmod.config_hash(cfg) != cfgmod.config_hash(other)

    def test_format(self):
        h = cfgmod.config_hash(cfgmod.default_config())
        assert len(h) == 12
        int(h, 16)


class TestDescribe:
    def test_lists_every_field_with_provenance(self):
        text = cfgmod.describe_config()
        for key, entry in cfgmod.SCHEMA.items():
            assert key in text
        assert "[reported" in text and "[literature" in text and "[chosen" in text

    def test_reflects_overrides(self):
        cfg = cfgmod.load_config(None, {"physics.saturation": 12.5})
        assert "12.5" in cfgmod.describe_config(cfg)


class TestBuilders:
    def test_thermal_source_frequencies(self, default_cfg):
        from osgsim.constants import KB, SR87_MASS
        from osgsim.optics import radial_trap_frequency
        src = cfgmod.make_thermal_source(default_cfg)
        w_r = radial_trap_frequency(KB * default_cfg["tweezer.depth_uK"] * 1e-6,
                                    default_cfg["tweezer.waist_um"] * 1e-6,
                                    SR87_MASS)
        assert src.omega[0] == src.omega[1] == pytest.approx(w_r, rel=1e-12)
        assert src.omega[2] < src.omega[0] / 3

    def test_camera_frame_override(self, default_cfg):
        p = cfgmod.make_camera(default_cfg, frame_px=160)
        assert p.frame_shape == (160, 160)

    def test_analysis_matches_config(self, default_cfg):
        a = cfgmod.make_analysis(default_cfg)
        assert a.binarize_k == default_cfg["analysis.binarize_k"]
        assert a.kernel_sigma_major == default_cfg["analysis.kernel_sigma_major"]

    def test_imaging_params(self, default_cfg):
        im = cfgmod.make_imaging(default_cfg)
        assert im.duration == pytest.approx(15e-6)
        assert im.dark_branching == default_cfg["physics.dark_branching"]
