"""Scenario files: strict parsing, round-trip identity, bundled presets."""

import pytest
import yaml

from pathqkd.errors import ConfigError
from pathqkd.scenario import (bundled_scenario_names, dump_scenario,
                              load_bundled_scenario, load_scenario,
                              scenario_digest, scenario_from_dict,
                              scenario_to_dict)


class TestBundledScenarios:
    def test_all_presets_load(self):
        names = bundled_scenario_names()
        assert {"short-4m", "mcf-80km", "mcf-80km-tomo", "single-chip"} <= set(names)
        for name in names:
            scn = load_bundled_scenario(name)
            assert scn.name == name
            assert scn.schedule

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            load_bundled_scenario("no-such-scenario")

    def test_qkd_presets_have_expected_blocks(self):
        for name in ("short-4m", "mcf-80km"):
            scn = load_bundled_scenario(name)
            for key in ("qber_z", "qber_x", "qber_y", "skr_asymptotic_bps",
                        "coincidence_rate_hz"):
                assert key in scn.expected


class TestRoundTrip:
    def test_parse_serialize_parse_identity(self):
        scn = load_bundled_scenario("mcf-80km")
        text = dump_scenario(scn)
        again = scenario_from_dict(yaml.safe_load(text))
        assert scenario_to_dict(again) == scenario_to_dict(scn)
        assert scenario_digest(again) == scenario_digest(scn)

    def test_digest_tracks_content(self):
        scn = load_bundled_scenario("short-4m")
        d1 = scenario_digest(scn)
        scn.seed += 1
        assert scenario_digest(scn) != d1

    def test_float_precision_survives(self, tmp_path):
        scn = load_bundled_scenario("mcf-80km")
        path = tmp_path / "s.yaml"
        path.write_text(dump_scenario(scn))
        again = load_scenario(path)
        assert again.link.source.pair_prob_per_pulse == scn.link.source.pair_prob_per_pulse
        assert again.link.phase_noise.std_rad == scn.link.phase_noise.std_rad
        assert again.analysis.raw_rate_hz == scn.analysis.raw_rate_hz


class TestStrictParsing:
    def base_doc(self):
        return yaml.safe_load(dump_scenario(load_bundled_scenario("short-4m")))

    def test_unknown_field_named_in_error(self):
        doc = self.base_doc()
        doc["link"]["channel"]["detector_eff"] = 0.9
        with pytest.raises(ConfigError, match="detector_eff"):
            scenario_from_dict(doc)

    def test_bad_type_named_in_error(self):
        doc = self.base_doc()
        doc["link"]["channel"]["detector_efficiency"] = "high"
        with pytest.raises(ConfigError, match="detector_efficiency"):
            scenario_from_dict(doc)

    def test_out_of_range_value_diagnosed(self):
        doc = self.base_doc()
        doc["link"]["channel"]["detector_efficiency"] = 1.3
        with pytest.raises(ConfigError, match="detector_efficiency"):
            scenario_from_dict(doc)

    def test_empty_schedule_rejected(self):
        doc = self.base_doc()
        doc["schedule"] = []
        with pytest.raises(ConfigError, match="schedule"):
            scenario_from_dict(doc)

    def test_bad_seed_rejected(self):
        doc = self.base_doc()
        doc["seed"] = "abc"
        with pytest.raises(ConfigError, match="seed"):
            scenario_from_dict(doc)

    def test_undersampled_loop_rejected(self):
        doc = self.base_doc()
        doc["link"]["phase_noise"]["bandwidth_hz"] = 800.0
        with pytest.raises(ConfigError, match="loop_rate"):
            scenario_from_dict(doc)
