import json
import os

import pytest

from core.errors import ConfigError
from core.settings_manager import PROVENANCE, SettingsManager

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


@pytest.fixture
def settings(tmp_path):
    return SettingsManager(str(tmp_path / "settings.json"))


class TestDefaults:
    def test_sections(self, settings):
        assert list(settings.settings) == [
            "road_graph", "map_match", "follow_dist", "cluster", "mine", "fuel", "metrics", "pipeline", "synth"]

    def test_to_config(self, settings):
        config = settings.to_config()
        assert config.cluster.eps_km == 1.0
        assert config.cluster.ete_cutoff_m == 3000.0
        assert config.fuel.dt_s == 15.0
        assert (config.fuel.c_d, config.fuel.c_r) == (0.6, 0.007)
        assert config.window_steps == 20
        assert config.threads is None

    def test_hash_is_stable(self, settings):
        assert settings.config_hash() == SettingsManager().config_hash()
        settings.set("cluster.eps_km", 2.0)
        assert settings.config_hash() != SettingsManager().config_hash()

    def test_every_leaf_has_provenance(self, settings):
        rows = settings.provenance_rows()
        assert {key for key, _, _ in rows} == set(PROVENANCE)
        assert dict((k, tag) for k, _, tag in rows)["cluster.eps_km"] == "published"

    def test_repository_file_matches_defaults(self):
        with open(os.path.join(REPO_ROOT, "settings.json"), encoding="utf-8") as f:
            assert json.load(f) == SettingsManager().get_default_settings()


class TestLoad:
    def test_missing_file_keeps_defaults(self, settings):
        assert settings.load() == settings.get_default_settings()

    def test_partial_override(self, settings, tmp_path):
        path = tmp_path / "override.json"
        path.write_text(json.dumps({"cluster": {"eps_km": 0.5}}), encoding="utf-8")
        settings.load(str(path))
        assert settings.get("cluster.eps_km") == 0.5
        assert settings.get("cluster.min_pts") == 2

    def test_unknown_key(self, settings):
        with pytest.raises(ConfigError, match="cluster.eps"):
            settings.merge({"cluster": {"eps": 0.5}})
        with pytest.raises(ConfigError, match="section"):
            settings.merge({"clustering": {}})

    def test_bad_json(self, settings, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigError):
            settings.load(str(path))

    def test_save_then_load(self, settings):
        settings.set("mine.min_t", 4)
        settings.save()
        again = SettingsManager(settings.settings_file)
        again.load()
        assert again.get("mine.min_t") == 4
        assert again.config_hash() == settings.config_hash()


class TestAccessors:
    def test_get_section_and_default(self, settings):
        assert settings.get("cluster")["delta"] == 0.5
        assert settings.get("cluster.nope", "fallback") == "fallback"

    def test_set_unknown(self, settings):
        with pytest.raises(ConfigError):
            settings.set("cluster.nope", 1)


class TestValidation:
    @pytest.mark.parametrize("key, value", [
        ("cluster.eps_km", 0.0),
        ("cluster.min_pts", 1),
        ("map_match.emission_sigma_m", -1.0),
        ("mine.min_o", 1),
        ("fuel.phi_follow", 1.2),
        ("fuel.headway_rule", "median"),
        ("pipeline.staleness_s", 5.0),
        ("pipeline.threads", 0),
        ("metrics.window_s", 100.0),
    ])
    def test_rejected(self, settings, key, value):
        settings.set(key, value)
        with pytest.raises(ConfigError):
            settings.to_config()

    def test_printed_coefficients_swap(self, settings):
        settings.set("fuel.printed_coefficients", True)
        config = settings.to_config()
        assert (config.fuel.c_d, config.fuel.c_r) == (0.007, 0.6)
