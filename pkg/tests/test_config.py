"""Config loading: interpolation, line-blamed errors, the example file."""

import json

import pytest

from twinforge.config import apply_config, interpolate, load_config
from twinforge.errors import ConfigError
from twinforge.platform import Platform

MINIMAL = {
    "policies": [
        {"policyId": "p", "entries": {"admin": {"read": True, "write": True}}}
    ],
    "twins": [{"thingId": "a:b", "policyId": "p"}],
}


@pytest.fixture
def platform(tmp_path):
    p = Platform(tmp_path / "data")
    yield p
    p.close()


class TestInterpolation:
    def test_env_value(self, monkeypatch):
        monkeypatch.setenv("TF_TEST_HOST", "example")
        assert interpolate('{"listen": "${TF_TEST_HOST}:80"}') == '{"listen": "example:80"}'

    def test_default_used_when_unset(self, monkeypatch):
        monkeypatch.delenv("TF_TEST_HOST", raising=False)
        assert interpolate('"${TF_TEST_HOST:-fallback}"') == '"fallback"'

    def test_missing_without_default_blames_line(self, monkeypatch):
        monkeypatch.delenv("TF_NOPE", raising=False)
        with pytest.raises(ConfigError, match="line 3"):
            interpolate('{\n "a": 1,\n "b": "${TF_NOPE}"\n}')


class TestLoadErrors:
    def test_syntax_error_carries_line(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{\n "twins": [,]\n}')
        with pytest.raises(ConfigError, match=r"bad\.json:2"):
            load_config(bad)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "ghost.json")

    def test_non_object_top_level(self, tmp_path):
        f = tmp_path / "arr.json"
        f.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="top level"):
            load_config(f)


class TestApply:
    def test_minimal_config(self, platform):
        counts = apply_config(platform, MINIMAL)
        assert counts == {"policies": 1, "twins": 1}
        assert platform.registry.exists("a:b")

    def test_unknown_section_rejected(self, platform):
        with pytest.raises(ConfigError, match="unknown top-level"):
            apply_config(platform, {"widgets": []})

    def test_bad_entry_blames_its_line(self, platform, tmp_path):
        config = dict(MINIMAL, twins=[{"thingId": "a:b", "policyId": "ghost"}])
        f = tmp_path / "c.json"
        f.write_text(json.dumps(config, indent=2))
        loaded, text = load_config(f)
        with pytest.raises(ConfigError, match=r"c\.json:\d+.*a:b"):
            apply_config(platform, loaded, text, f.name)

    def test_malformed_entry_reported(self, platform):
        with pytest.raises(ConfigError, match="malformed entry"):
            apply_config(platform, {"twins": [{"thingId": "a:b"}]})


class TestExampleConfig:
    def test_petrochemical_counts(self, platform):
        loaded, text = load_config("configs/petrochemical.json")
        counts = apply_config(platform, loaded, text, "petrochemical.json")
        assert counts["twins"] == 27
        assert counts["models"] == 1
        assert counts["routes"] == 1
        assert counts["links"] == 26
        assert len(platform.registry.list_things(kind="twin")) == 27
        children = platform.registry.list_children("cepsa:LSRC3002")
        assert len(children) == 26

    def test_petrochemical_pipeline_is_wired(self, platform):
        loaded, text = load_config("configs/petrochemical.json")
        apply_config(platform, loaded, text, "petrochemical.json")
        assert platform.ml.get("freezing-point")["fn"] == "linear"
        route = platform.routes.get_route("freezing-point")
        assert route["active"] is True
        fwd = platform.forwarders.get_forwarder("cepsa-mqtt")
        assert fwd["devices"][0]["mlInputTopic"] == "cepsa-freezing-in"
        assert platform.gateway.list_devices("cepsa-mqtt")
