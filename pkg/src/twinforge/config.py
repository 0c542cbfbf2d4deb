"""Declarative startup state: one JSON file describing platform entities.

The file lists policies, twins, links, tenants, models, and streams to
create before serving. String values may interpolate environment variables
as ``${NAME}`` or ``${NAME:-default}``. Errors point at the config line
they came from so a typo in entry 23 of 27 is findable.
"""

from __future__ import annotations

import json
import os
import re
from pathlib import Path

from .errors import ConfigError, TwinforgeError
from .platform import Platform

_ENV = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")

SECTIONS = (
    "policies",
    "types",
    "twins",
    "links",
    "tenants",
    "watchdog",
    "models",
    "forwarders",
    "routes",
)
TOP_LEVEL_KEYS = set(SECTIONS) | {"data_dir", "listen", "gateway_tcp"}


def _line_at(text: str, index: int) -> int:
    return text.count("\n", 0, index) + 1


def interpolate(text: str) -> str:
    def fill(match: re.Match) -> str:
        name, default = match.group(1), match.group(2)
        value = os.environ.get(name)
        if value is None:
            if default is None:
                raise ConfigError(
                    f"line {_line_at(text, match.start())}: "
                    f"environment variable {name!r} is not set and has no default"
                )
            return default
        return value

    return _ENV.sub(fill, text)


def load_config(path: str | Path) -> tuple[dict, str]:
    """Parse a config file; returns (config, interpolated text)."""
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    text = interpolate(raw)
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path.name}:{exc.lineno}: {exc.msg}") from exc
    if not isinstance(config, dict):
        raise ConfigError(f"{path.name}:1: top level must be a JSON object")
    return config, text


class _Applier:
    """Runs section items against the platform, blaming config lines."""

    def __init__(self, platform: Platform, text: str, name: str):
        self.platform = platform
        self.text = text
        self.name = name
        self.counts: dict[str, int] = {}

    def _fail(self, section: str, ident: str, reason) -> ConfigError:
        index = self.text.find(f'"{ident}"')
        where = f"{self.name}:{_line_at(self.text, index)}" if index >= 0 else self.name
        return ConfigError(f"{where}: {section} {ident!r}: {reason}")

    def run(self, section: str, items, ident_key: str, fn) -> None:
        if not isinstance(items, list):
            raise ConfigError(f"{self.name}: section {section!r} must be a list")
        for item in items:
            ident = str(item.get(ident_key, "?")) if isinstance(item, dict) else "?"
            try:
                fn(item)
            except TwinforgeError as exc:
                raise self._fail(section, ident, exc) from exc
            except (KeyError, TypeError, AttributeError) as exc:
                raise self._fail(section, ident, f"malformed entry: {exc!r}") from exc
            self.counts[section] = self.counts.get(section, 0) + 1


def apply_config(platform: Platform, config: dict, text: str = "", name: str = "config") -> dict:
    """Create everything the config declares; returns per-section counts."""
    unknown = set(config) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"{name}: unknown top-level keys {sorted(unknown)}")
    a = _Applier(platform, text, name)

    a.run(
        "policies",
        config.get("policies", []),
        "policyId",
        lambda p: platform.registry.create_policy(p["policyId"], p["entries"]),
    )
    a.run(
        "types",
        config.get("types", []),
        "thingId",
        lambda t: platform.registry.create_type(
            t["thingId"], t["policyId"], t.get("attributes"), t.get("features")
        ),
    )
    a.run(
        "twins",
        config.get("twins", []),
        "thingId",
        lambda t: platform.registry.create_twin(
            t["thingId"], t["policyId"], t.get("attributes"), t.get("features")
        ),
    )
    a.run(
        "links",
        config.get("links", []),
        "child",
        lambda l: platform.registry.link(l["parent"], l["child"]),
    )

    def make_tenant(t: dict) -> None:
        platform.gateway.create_tenant(t["tenantId"], t.get("mapping"))
        for device in t.get("devices", []):
            platform.gateway.register_device(
                t["tenantId"], device["deviceId"], device["username"], device["password"]
            )

    a.run("tenants", config.get("tenants", []), "tenantId", make_tenant)

    def make_watchdog(w: dict) -> None:
        platform.watchdog.create_tenant(w["tenantId"], active=bool(w.get("active", False)))
        for device in w.get("devices", []):
            platform.watchdog.add_device(
                w["tenantId"],
                device["deviceId"],
                device["mlInputTopic"],
                device["required_values"],
                active=bool(device.get("active", True)),
            )

    a.run("watchdog", config.get("watchdog", []), "tenantId", make_watchdog)
    a.run("models", config.get("models", []), "modelId", platform.ml.deploy)
    a.run(
        "forwarders",
        config.get("forwarders", []),
        "tenantId",
        platform.forwarders.create_forwarder,
    )
    a.run("routes", config.get("routes", []), "routeId", platform.routes.create_route)
    return a.counts
