"""Core domain types and the canonical wire format.

Everything that travels between services is one of these shapes: thing ids
in ``namespace:name`` form, twin records (attributes + features), protocol
envelopes (topic / path / value / headers), and policies. All types are
immutable values by convention; operations return new instances.

Canonical JSON encodings are documented in docs/wire-format.md.
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .errors import (
    BadPath,
    BadTopic,
    BadValue,
    MalformedId,
    ManagedAttributeViolation,
    PathNotApplicable,
)

#: Hierarchy attributes owned by the registry; never writable directly.
MANAGED_ATTRIBUTES = frozenset({"isType", "type", "parent", "children"})

CHANNELS = frozenset({"commands", "events"})
ACTIONS = frozenset({"modify", "create", "delete"})

Scalar = None | bool | int | float | str


def is_scalar(value) -> bool:
    return value is None or isinstance(value, (bool, int, float, str))


# ---------------------------------------------------------------------------
# ThingId


@dataclass(frozen=True)
class ThingId:
    namespace: str
    name: str

    def render(self) -> str:
        return f"{self.namespace}:{self.name}"

    def __str__(self) -> str:
        return self.render()


def _valid_id_part(part: str) -> bool:
    return bool(part) and not any(c.isspace() or c == ":" for c in part)


def parse_thing_id(text: str) -> ThingId:
    """Parse ``namespace:name``; exactly one colon, both parts non-empty."""
    if text.count(":") != 1:
        raise MalformedId(f"expected exactly one colon in {text!r}")
    namespace, name = text.split(":")
    if not _valid_id_part(namespace) or not _valid_id_part(name):
        raise MalformedId(f"empty or whitespace-bearing part in {text!r}")
    return ThingId(namespace, name)


# ---------------------------------------------------------------------------
# Features and twin records


@dataclass
class FeatureState:
    properties: dict[str, Scalar] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"properties": dict(self.properties)}

    @classmethod
    def from_json(cls, data: dict) -> "FeatureState":
        props = data.get("properties", {})
        if not isinstance(props, dict):
            raise BadValue("feature properties must be an object")
        for key, val in props.items():
            if not is_scalar(val):
                raise BadValue(f"property {key!r} is not a scalar")
        return cls(properties=dict(props))


@dataclass
class TwinRecord:
    thing_id: ThingId
    policy_id: str
    attributes: dict = field(default_factory=dict)
    features: dict[str, FeatureState] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "thingId": self.thing_id.render(),
            "policyId": self.policy_id,
            "attributes": copy.deepcopy(self.attributes),
            "features": {name: f.to_json() for name, f in self.features.items()},
        }

    @classmethod
    def from_json(cls, data: dict) -> "TwinRecord":
        return cls(
            thing_id=parse_thing_id(data["thingId"]),
            policy_id=data["policyId"],
            attributes=copy.deepcopy(data.get("attributes", {})),
            features={
                name: FeatureState.from_json(f)
                for name, f in data.get("features", {}).items()
            },
        )

    def copy(self) -> "TwinRecord":
        return TwinRecord.from_json(self.to_json())


# ---------------------------------------------------------------------------
# Policies


@dataclass
class Policy:
    policy_id: str
    entries: dict[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        if not any(e.get("write") for e in self.entries.values()):
            raise BadValue(
                f"policy {self.policy_id!r} must grant write to at least one subject"
            )

    def can_read(self, subject: str) -> bool:
        return bool(self.entries.get(subject, {}).get("read"))

    def can_write(self, subject: str) -> bool:
        return bool(self.entries.get(subject, {}).get("write"))

    def to_json(self) -> dict:
        return {
            "policyId": self.policy_id,
            "entries": {
                s: {"read": bool(e.get("read")), "write": bool(e.get("write"))}
                for s, e in self.entries.items()
            },
        }

    @classmethod
    def from_json(cls, data: dict) -> "Policy":
        return cls(policy_id=data["policyId"], entries=dict(data.get("entries", {})))


# ---------------------------------------------------------------------------
# Envelopes


@dataclass
class Envelope:
    topic: str
    path: str
    value: object = None
    headers: dict[str, str] = field(default_factory=dict)

    def topic_parts(self) -> list[str]:
        return self.topic.split("/")

    def thing_id(self) -> ThingId:
        parts = self.topic_parts()
        return ThingId(parts[0], parts[1])

    def channel(self) -> str:
        return self.topic_parts()[4]

    def action(self) -> str:
        return self.topic_parts()[5]

    def to_json(self) -> dict:
        data = {"topic": self.topic, "path": self.path, "value": copy.deepcopy(self.value)}
        if self.headers:
            data["headers"] = dict(self.headers)
        return data

    def to_bytes(self) -> bytes:
        return json.dumps(self.to_json()).encode("utf-8")

    @classmethod
    def from_json(cls, data: dict) -> "Envelope":
        headers = data.get("headers", {})
        if not isinstance(headers, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in headers.items()
        ):
            raise BadValue("headers must map strings to strings")
        return cls(
            topic=data.get("topic", ""),
            path=data.get("path", ""),
            value=copy.deepcopy(data.get("value")),
            headers=dict(headers),
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Envelope":
        return cls.from_json(json.loads(raw.decode("utf-8")))


def _validate_topic(topic: str) -> None:
    parts = topic.split("/")
    if len(parts) != 6:
        raise BadTopic(f"topic must have 6 segments, got {len(parts)}: {topic!r}")
    namespace, name, things, twin, channel, action = parts
    if not _valid_id_part(namespace) or not _valid_id_part(name):
        raise BadTopic(f"bad namespace/name in topic {topic!r}")
    if things != "things" or twin != "twin":
        raise BadTopic(f"expected .../things/twin/... in topic {topic!r}")
    if channel not in CHANNELS:
        raise BadTopic(f"unsupported channel {channel!r}")
    if action not in ACTIONS:
        raise BadTopic(f"unsupported action {action!r}")


def path_segments(path: str) -> list[str]:
    """Split a validated resource path into segments ('/' -> [])."""
    if path == "/":
        return []
    return path.split("/")[1:]


def _validate_path(path: str, action: str) -> None:
    if not path or not path.startswith("/"):
        raise BadPath(f"path must be /-rooted, got {path!r}")
    if path == "/":
        if action == "modify":
            raise BadPath("modify must target /attributes or /features")
        return
    if action in ("create", "delete"):
        raise BadPath(f"{action} requires path '/', got {path!r}")
    segments = path.split("/")[1:]
    if any(not s for s in segments):
        raise BadPath(f"empty segment in path {path!r}")
    root = segments[0]
    if root == "attributes":
        return
    if root == "features":
        # /features[/<f>[/properties[/<p>]]]
        if len(segments) > 4:
            raise BadPath(f"path too deep under /features: {path!r}")
        if len(segments) >= 3 and segments[2] != "properties":
            raise BadPath(f"expected 'properties' segment in {path!r}")
        return
    raise BadPath(f"unknown resource root {root!r} in {path!r}")


def _validate_feature_object(name: str, feature) -> None:
    if not isinstance(feature, dict) or not isinstance(
        feature.get("properties"), dict
    ):
        raise BadValue(f"feature {name!r} must be an object with a 'properties' object")
    for prop, val in feature["properties"].items():
        if not is_scalar(val):
            raise BadValue(f"property {name}/{prop} is not a scalar")


def _validate_value(path: str, value, action: str) -> None:
    if action == "create":
        if not isinstance(value, dict):
            raise BadValue("create requires an object value")
        return
    if action == "delete":
        if value is not None:
            raise BadValue("delete carries no value")
        return
    segments = path_segments(path)
    if segments[0] == "attributes":
        if len(segments) == 1 and not isinstance(value, dict):
            raise BadValue("/attributes requires an object value")
        return
    # features subtree
    depth = len(segments)
    if depth == 1:
        if not isinstance(value, dict):
            raise BadValue("/features requires an object value")
        for name, feature in value.items():
            _validate_feature_object(name, feature)
    elif depth == 2:
        _validate_feature_object(segments[1], value)
    elif depth == 3:
        if not isinstance(value, dict):
            raise BadValue("properties value must be an object")
        for prop, val in value.items():
            if not is_scalar(val):
                raise BadValue(f"property {prop!r} is not a scalar")
    else:
        if not is_scalar(value):
            raise BadValue("property leaf value must be a scalar")


def validate_envelope(envelope: Envelope) -> None:
    """Accept iff topic grammar, path grammar and value shape all hold."""
    _validate_topic(envelope.topic)
    action = envelope.action()
    _validate_path(envelope.path, action)
    _validate_value(envelope.path, envelope.value, action)


# ---------------------------------------------------------------------------
# Envelope application


def _guard_managed(path: str, value) -> None:
    segments = path_segments(path)
    if segments and segments[0] == "attributes":
        if len(segments) >= 2 and segments[1] in MANAGED_ATTRIBUTES:
            raise ManagedAttributeViolation(
                f"attribute {segments[1]!r} is registry-managed"
            )
        if len(segments) == 1 and isinstance(value, dict):
            hit = MANAGED_ATTRIBUTES.intersection(value)
            if hit:
                raise ManagedAttributeViolation(
                    f"attributes {sorted(hit)} are registry-managed"
                )


def _deep_merge(existing, incoming):
    """Recursive object merge; arrays and scalars replace wholesale."""
    if isinstance(existing, dict) and isinstance(incoming, dict):
        merged = dict(existing)
        for key, val in incoming.items():
            merged[key] = _deep_merge(existing.get(key), val) if key in existing else copy.deepcopy(val)
        return merged
    return copy.deepcopy(incoming)


def apply_envelope(record: TwinRecord, envelope: Envelope) -> TwinRecord:
    """Apply a validated modify command to a twin, returning the new record.

    Object values merge recursively at their path; scalar values replace the
    addressed leaf. The managed hierarchy attributes reject direct writes.
    """
    validate_envelope(envelope)
    if envelope.action() != "modify":
        raise ValueError("apply_envelope handles modify commands only")
    if envelope.thing_id() != record.thing_id:
        raise ValueError(
            f"envelope addresses {envelope.thing_id()}, record is {record.thing_id}"
        )
    _guard_managed(envelope.path, envelope.value)

    tree = record.to_json()
    segments = path_segments(envelope.path)
    node = tree
    for seg in segments[:-1]:
        child = node.get(seg)
        if child is None:
            child = {}
            node[seg] = child
        elif not isinstance(child, dict):
            raise PathNotApplicable(
                f"{envelope.path!r} walks through non-object segment {seg!r}"
            )
        node = child
    last = segments[-1]
    current = node.get(last)
    incoming = envelope.value
    if isinstance(incoming, dict):
        if current is not None and not isinstance(current, dict):
            raise PathNotApplicable(
                f"{envelope.path!r} addresses a non-object but value is an object"
            )
        node[last] = _deep_merge(current or {}, incoming)
    else:
        node[last] = incoming
    return TwinRecord.from_json(tree)


def feature_leaves(path: str, value) -> list[tuple[str, str, Scalar]]:
    """Decompose an envelope's value into (feature, property, value) leaves.

    Handles every feature-path depth plus whole-twin values (path '/', as in
    create events). Attribute paths yield no leaves.
    """
    segments = path_segments(path)
    if not segments:
        if isinstance(value, dict):
            return feature_leaves("/features", value.get("features", {}))
        return []
    if segments[0] != "features":
        return []
    depth = len(segments)
    leaves: list[tuple[str, str, Scalar]] = []
    if depth == 1 and isinstance(value, dict):
        for name, feature in value.items():
            if isinstance(feature, dict):
                for prop, val in feature.get("properties", {}).items():
                    if is_scalar(val):
                        leaves.append((name, prop, val))
    elif depth == 2 and isinstance(value, dict):
        for prop, val in value.get("properties", {}).items():
            if is_scalar(val):
                leaves.append((segments[1], prop, val))
    elif depth == 3 and isinstance(value, dict):
        for prop, val in value.items():
            if is_scalar(val):
                leaves.append((segments[1], prop, val))
    elif depth == 4 and is_scalar(value):
        leaves.append((segments[1], segments[3], value))
    return leaves


def feature_values(envelope: Envelope) -> dict[str, Scalar]:
    """Map feature name -> its 'value' property, for field extraction."""
    out: dict[str, Scalar] = {}
    for feature, prop, val in feature_leaves(envelope.path, envelope.value):
        if prop == "value":
            out[feature] = val
    return out


# ---------------------------------------------------------------------------
# Command/event construction helpers


def command_topic(thing_id: ThingId, action: str = "modify") -> str:
    return f"{thing_id.namespace}/{thing_id.name}/things/twin/commands/{action}"


def event_topic(thing_id: ThingId, action: str) -> str:
    return f"{thing_id.namespace}/{thing_id.name}/things/twin/events/{action}"


# ---------------------------------------------------------------------------
# Timestamps: UTC nanosecond integers in storage, ISO-8601 on the wire.


def now_ns() -> int:
    return time.time_ns()


def ns_to_iso(ts_ns: int) -> str:
    dt = datetime.fromtimestamp(ts_ns / 1e9, tz=timezone.utc)
    return dt.isoformat().replace("+00:00", "Z")


def iso_to_ns(text: str) -> int:
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp() * 1e9)
