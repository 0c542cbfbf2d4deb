"""Connectors between the telemetry stream, the ML runtime, and the registry.

Two services live here. Forwarders turn every telemetry message from a
configured device into a binary model input, immediately and statelessly:
unlike the watchdog they never cache last values, so a message missing a
required field is dead-lettered rather than patched. Prediction routes go
the other way: they fill a JSON envelope template from a model's output
array, park the result on a durable queue, and a registry-side applier
consumes that queue with ack-after-apply semantics.
"""

from __future__ import annotations

import json
import re
import threading
from copy import deepcopy
from pathlib import Path

from .bus import Bus
from .clock import SystemClock
from .codec import ValueSpec, encode_values, specs_from_json, utc_from_seconds
from .errors import (
    DuplicateId,
    EnvelopeInvalid,
    IndexOutOfRange,
    InvalidResult,
    InvalidSchema,
    MappingFailed,
    NotFound,
    Unavailable,
)
from .gateway import DEAD_LETTER_TOPIC, telemetry_topic
from .metrics import Metrics
from .model import (
    MANAGED_ATTRIBUTES,
    Envelope,
    ThingId,
    command_topic,
    feature_values,
    validate_envelope,
)
from .storage import KvLog

PREDICTED_SUFFIX = "_predicted"
ROUTE_MODES = ("update", "future_copy")

# A value that is exactly one placeholder keeps the output's numeric type;
# a placeholder inside a longer string is spliced in textually.
_EXACT = re.compile(r"^\{(\d+)\}$")
_EMBEDDED = re.compile(r"\{(\d+)\}")


def fill_template(template, outputs: list[float]):
    """Replace `{i}` placeholders in string values with outputs[i].

    Keys are never touched, only string values: a string that is exactly one
    placeholder becomes the number itself, anything else is spliced textually.
    """

    def pick(idx: int):
        if idx >= len(outputs):
            raise IndexOutOfRange(f"placeholder {{{idx}}} but only {len(outputs)} outputs")
        return outputs[idx]

    def walk(node):
        if isinstance(node, dict):
            return {key: walk(val) for key, val in node.items()}
        if isinstance(node, list):
            return [walk(val) for val in node]
        if isinstance(node, str):
            exact = _EXACT.match(node)
            if exact:
                return pick(int(exact.group(1)))
            return _EMBEDDED.sub(lambda m: str(pick(int(m.group(1)))), node)
        return node

    return walk(template)


def substitute(template: dict, outputs: list[float]) -> Envelope:
    """Fill a ditto_message template and parse it as a command envelope."""
    filled = fill_template(template, outputs)
    try:
        envelope = Envelope.from_json(filled)
        validate_envelope(envelope)
    except EnvelopeInvalid as exc:
        raise InvalidResult(f"filled template is not a valid envelope: {exc}") from exc
    return envelope


def template_max_index(template) -> int:
    """Highest placeholder index in the template, or -1 if it has none."""
    top = -1
    if isinstance(template, dict):
        nodes = template.values()
    elif isinstance(template, list):
        nodes = template
    elif isinstance(template, str):
        nodes = ()
        for match in _EMBEDDED.finditer(template):
            top = max(top, int(match.group(1)))
    else:
        nodes = ()
    for node in nodes:
        top = max(top, template_max_index(node))
    return top


def predicted_id(source: ThingId) -> ThingId:
    return ThingId(source.namespace, source.name + PREDICTED_SUFFIX)


def copy_future(registry, envelope: Envelope, horizon_s: float, subject: str) -> ThingId:
    """Apply a prediction to a twin's future copy, creating the copy on first use.

    The copy carries the source's attributes and features plus provenance
    markers; the source twin itself is never written.
    """
    source_id = envelope.thing_id()
    source = registry.get(source_id.render())
    copy_id = predicted_id(source_id)
    if not registry.exists(copy_id.render()):
        attributes = {
            key: deepcopy(val)
            for key, val in source["attributes"].items()
            if key not in MANAGED_ATTRIBUTES
        }
        attributes["predicted_horizon_s"] = horizon_s
        attributes["predicted_from"] = source_id.render()
        registry.create_twin(
            copy_id.render(),
            source["policyId"],
            attributes=attributes,
            features=deepcopy(source["features"]),
            subject=subject,
        )
    redirected = Envelope(
        topic=command_topic(copy_id, envelope.action()),
        path=envelope.path,
        value=envelope.value,
        headers=dict(envelope.headers),
    )
    registry.update(redirected, subject)
    return copy_id


# ---------------------------------------------------------------------------
# Forwarders: telemetry in, model inputs out.


def validate_forwarder(cfg: dict) -> dict:
    tenant_id = cfg.get("tenantId")
    if not isinstance(tenant_id, str) or not tenant_id:
        raise InvalidSchema("forwarder needs a tenantId")
    raw_devices = cfg.get("devices")
    if not isinstance(raw_devices, list) or not raw_devices:
        raise InvalidSchema("forwarder needs a non-empty device list")
    devices = []
    seen: set[str] = set()
    for entry in raw_devices:
        if not isinstance(entry, dict):
            raise InvalidSchema("device entries must be objects")
        device_id = entry.get("deviceId")
        ml_topic = entry.get("mlInputTopic")
        if not device_id or not ml_topic:
            raise InvalidSchema("device entries need deviceId and mlInputTopic")
        if device_id in seen:
            raise InvalidSchema(f"duplicate device {device_id!r}")
        seen.add(device_id)
        specs = specs_from_json(entry.get("required_values", []))
        if not specs:
            raise InvalidSchema(f"device {device_id!r} needs required_values")
        # forwarders never cache values, so last_value is dropped on intake
        devices.append(
            {
                "deviceId": device_id,
                "mlInputTopic": ml_topic,
                "required_values": [{"name": s.name, "format": s.format} for s in specs],
            }
        )
    return {"tenantId": tenant_id, "devices": devices, "active": bool(cfg.get("active", False))}


def _encode_message(specs: list[ValueSpec], now, values: dict) -> bytes:
    resolved = []
    for spec in specs:
        if spec.is_time_field:
            resolved.append(getattr(now, spec.name[1:]))
        elif spec.name in values:
            resolved.append(values[spec.name])
        else:
            raise MappingFailed(f"message lacks required field {spec.name!r}")
    try:
        return encode_values([s.format for s in specs], resolved)
    except (TypeError, ValueError) as exc:
        raise MappingFailed(f"non-numeric field value: {exc}") from exc


class _ForwarderLoop(threading.Thread):
    def __init__(self, service: "ForwarderService", tenant_id: str):
        super().__init__(name=f"forwarder-{tenant_id}", daemon=True)
        self.service = service
        self.tenant_id = tenant_id
        self.stop_event = threading.Event()

    def run(self) -> None:
        bus = self.service.bus
        topic = telemetry_topic(self.tenant_id)
        group = f"forwarder-{self.tenant_id}"
        consumer = None
        while not self.stop_event.is_set():
            try:
                if consumer is None:
                    bus.create_topic(topic)
                    # first activation joins live; later runs resume committed
                    consumer = bus.consumer(topic, group, start=bus.end_offset(topic))
                msg = consumer.poll_one(timeout=0.25)
                if msg is None:
                    continue
                self.service._forward(self.tenant_id, msg)
                consumer.commit(msg.offset)
            except Unavailable:
                consumer = None
                self.stop_event.wait(0.2)
            except NotFound:
                return

    def stop(self) -> None:
        self.stop_event.set()


class ForwarderService:
    """Per-tenant streams that map device telemetry to model input topics."""

    def __init__(self, data_dir: str | Path, bus: Bus, clock=None, metrics: Metrics | None = None):
        self.data_dir = Path(data_dir)
        self.bus = bus
        self.clock = clock or SystemClock()
        self.metrics = metrics or Metrics()
        self._lock = threading.RLock()
        self._crashed = False
        self._started = False
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._store = KvLog(self.data_dir / "forwarders.log")
        self._loops: dict[str, _ForwarderLoop] = {}

    # -- lifecycle --------------------------------------------------------------

    def start(self) -> None:
        with self._lock:
            self._check()
            self._started = True
            for key, doc in self._store.items("fwd|"):
                if doc["active"]:
                    self._spawn(doc["tenantId"])

    def stop(self) -> None:
        with self._lock:
            self._started = False
            loops = list(self._loops.values())
            self._loops.clear()
        for loop in loops:
            loop.stop()
        for loop in loops:
            loop.join(timeout=2.0)

    def crash(self) -> None:
        self.stop()
        with self._lock:
            self._crashed = True
            self._store.close()

    def restart(self) -> None:
        with self._lock:
            if not self._crashed:
                return
            self._store = KvLog(self.data_dir / "forwarders.log")
            self._crashed = False
        self.start()

    def close(self) -> None:
        self.crash()

    def _check(self) -> None:
        if self._crashed:
            raise Unavailable("forwarder service is down")

    def _spawn(self, tenant_id: str) -> None:
        if tenant_id not in self._loops:
            loop = _ForwarderLoop(self, tenant_id)
            self._loops[tenant_id] = loop
            loop.start()

    def _stop_loop(self, tenant_id: str) -> None:
        loop = self._loops.pop(tenant_id, None)
        if loop is not None:
            loop.stop()

    # -- admin ------------------------------------------------------------------

    def create_forwarder(self, cfg: dict) -> dict:
        doc = validate_forwarder(cfg)
        with self._lock:
            self._check()
            key = f"fwd|{doc['tenantId']}"
            if self._store.get(key) is not None:
                raise DuplicateId(f"forwarder for tenant {doc['tenantId']!r} exists")
            self._store.put(key, doc)
            if doc["active"] and self._started:
                self._spawn(doc["tenantId"])
            return deepcopy(doc)

    def get_forwarder(self, tenant_id: str) -> dict:
        with self._lock:
            self._check()
            doc = self._store.get(f"fwd|{tenant_id}")
            if doc is None:
                raise NotFound(f"no forwarder for tenant {tenant_id!r}")
            return deepcopy(doc)

    def list_forwarders(self) -> list[dict]:
        with self._lock:
            self._check()
            return [deepcopy(doc) for _, doc in self._store.items("fwd|")]

    def delete_forwarder(self, tenant_id: str) -> None:
        with self._lock:
            self._check()
            if self._store.get(f"fwd|{tenant_id}") is None:
                raise NotFound(f"no forwarder for tenant {tenant_id!r}")
            self._store.delete(f"fwd|{tenant_id}")
            self._stop_loop(tenant_id)

    def _set_active(self, tenant_id: str, active: bool) -> None:
        with self._lock:
            self._check()
            doc = self._store.get(f"fwd|{tenant_id}")
            if doc is None:
                raise NotFound(f"no forwarder for tenant {tenant_id!r}")
            doc["active"] = active
            self._store.put(f"fwd|{tenant_id}", doc)
            if active and self._started:
                self._spawn(tenant_id)
            elif not active:
                self._stop_loop(tenant_id)

    def activate_forwarder(self, tenant_id: str) -> None:
        self._set_active(tenant_id, True)

    def deactivate_forwarder(self, tenant_id: str) -> None:
        self._set_active(tenant_id, False)

    # -- stream -----------------------------------------------------------------

    def _forward(self, tenant_id: str, msg) -> None:
        with self._lock:
            self._check()
            doc = self._store.get(f"fwd|{tenant_id}")
        if doc is None or not doc["active"]:
            return
        try:
            envelope = Envelope.from_bytes(msg.payload)
            device_id = msg.headers.get("device-id") or envelope.thing_id().render()
            device = next((d for d in doc["devices"] if d["deviceId"] == device_id), None)
            if device is None:
                return
            specs = specs_from_json(device["required_values"])
            now = utc_from_seconds(self.clock.now())
            encoded = _encode_message(specs, now, feature_values(envelope))
        except Unavailable:
            raise
        except Exception as exc:  # bad message, not a bad service
            self._dead_letter(tenant_id, msg, str(exc))
            return
        headers = {"device-id": device_id, "tenant": tenant_id}
        self.bus.publish(device["mlInputTopic"], headers, encoded)
        self.metrics.inc("bridges.forwarded")

    def _dead_letter(self, tenant_id: str, msg, reason: str) -> None:
        headers = dict(msg.headers)
        headers["reason"] = reason
        headers["tenant"] = tenant_id
        self.bus.publish(DEAD_LETTER_TOPIC, headers, msg.payload)
        self.metrics.inc("bridges.forward_dead_lettered")


# ---------------------------------------------------------------------------
# Prediction routes: model outputs in, twin updates out.


def validate_route(cfg: dict) -> dict:
    route_id = cfg.get("routeId")
    if not isinstance(route_id, str) or not route_id:
        raise InvalidSchema("route needs a routeId")
    source = cfg.get("sourceTopic")
    target = cfg.get("targetQueue")
    if not source or not target:
        raise InvalidSchema("route needs sourceTopic and targetQueue")
    mode = cfg.get("mode", "update")
    if mode not in ROUTE_MODES:
        raise InvalidSchema(f"mode must be one of {ROUTE_MODES}, got {mode!r}")
    horizon = cfg.get("horizon_s")
    if mode == "future_copy":
        if not isinstance(horizon, (int, float)) or isinstance(horizon, bool):
            raise InvalidSchema("future_copy routes need a numeric horizon_s")
    elif horizon is not None:
        raise InvalidSchema("horizon_s only applies to future_copy routes")
    template = cfg.get("ditto_message")
    if not isinstance(template, dict):
        raise InvalidSchema("route needs a ditto_message template object")
    # prove the template produces a valid envelope before accepting it
    probe = [0.0] * (template_max_index(template) + 1)
    try:
        substitute(template, probe)
    except (InvalidResult, IndexOutOfRange) as exc:
        raise InvalidSchema(f"ditto_message template rejected: {exc}") from exc
    doc = {
        "routeId": route_id,
        "sourceTopic": source,
        "targetQueue": target,
        "active": bool(cfg.get("active", False)),
        "ditto_message": deepcopy(template),
        "mode": mode,
        "principal": cfg.get("principal") or f"route:{route_id}",
    }
    if mode == "future_copy":
        doc["horizon_s"] = float(horizon)
    return doc


class _SubstituteLoop(threading.Thread):
    """Reads one model output topic and enqueues filled envelopes."""

    def __init__(self, service: "RouteService", route_id: str):
        super().__init__(name=f"route-{route_id}", daemon=True)
        self.service = service
        self.route_id = route_id
        self.stop_event = threading.Event()

    def run(self) -> None:
        bus = self.service.bus
        consumer = None
        while not self.stop_event.is_set():
            try:
                doc = self.service._route_doc(self.route_id)
                if doc is None or not doc["active"]:
                    return
                if consumer is None:
                    bus.create_topic(doc["sourceTopic"])
                    consumer = bus.consumer(
                        doc["sourceTopic"],
                        f"route-{self.route_id}",
                        start=bus.end_offset(doc["sourceTopic"]),
                    )
                msg = consumer.poll_one(timeout=0.25)
                if msg is None:
                    continue
                # recheck: a deactivation during the poll must leave the
                # message uncommitted for a later activation to pick up
                doc = self.service._route_doc(self.route_id)
                if doc is None or not doc["active"]:
                    return
                self.service._enqueue_prediction(doc, msg)
                consumer.commit(msg.offset)
            except Unavailable:
                consumer = None
                self.stop_event.wait(0.2)

    def stop(self) -> None:
        self.stop_event.set()


class _ApplyLoop(threading.Thread):
    """Drains a route's durable queue into the registry, ack after apply."""

    def __init__(self, service: "RouteService", route_id: str):
        super().__init__(name=f"route-apply-{route_id}", daemon=True)
        self.service = service
        self.route_id = route_id
        self.stop_event = threading.Event()

    def run(self) -> None:
        while not self.stop_event.is_set():
            handle = None
            try:
                doc = self.service._route_doc(self.route_id)
                if doc is None or not doc["active"]:
                    return
                got = self.service.bus.dequeue_ack(doc["targetQueue"], timeout=0.25)
                if got is None:
                    continue
                msg, handle = got
                doc = self.service._route_doc(self.route_id)
                if doc is None or not doc["active"]:
                    return  # handle released below, message stays queued
                self.service._apply(doc, msg)
                handle.ack()
                handle = None
            except Unavailable:
                self.stop_event.wait(0.2)
            finally:
                if handle is not None:
                    try:
                        handle.release()
                    except Unavailable:
                        pass

    def stop(self) -> None:
        self.stop_event.set()


class RouteService:
    """Prediction routes plus their registry-side queue consumers."""

    def __init__(self, data_dir: str | Path, bus: Bus, registry, metrics: Metrics | None = None):
        self.data_dir = Path(data_dir)
        self.bus = bus
        self.registry = registry
        self.metrics = metrics or Metrics()
        self._lock = threading.RLock()
        self._crashed = False
        self._started = False
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._store = KvLog(self.data_dir / "routes.log")
        self._loops: dict[str, tuple[_SubstituteLoop, _ApplyLoop]] = {}

    # -- lifecycle --------------------------------------------------------------

    def start(self) -> None:
        with self._lock:
            self._check()
            self._started = True
            for key, doc in self._store.items("route|"):
                if doc["active"]:
                    self._spawn(doc["routeId"])

    def stop(self) -> None:
        with self._lock:
            self._started = False
            loops = list(self._loops.values())
            self._loops.clear()
        for pair in loops:
            for loop in pair:
                loop.stop()
        for pair in loops:
            for loop in pair:
                loop.join(timeout=2.0)

    def crash(self) -> None:
        self.stop()
        with self._lock:
            self._crashed = True
            self._store.close()

    def restart(self) -> None:
        with self._lock:
            if not self._crashed:
                return
            self._store = KvLog(self.data_dir / "routes.log")
            self._crashed = False
        self.start()

    def close(self) -> None:
        self.crash()

    def _check(self) -> None:
        if self._crashed:
            raise Unavailable("route service is down")

    def _spawn(self, route_id: str) -> None:
        if route_id not in self._loops:
            pair = (_SubstituteLoop(self, route_id), _ApplyLoop(self, route_id))
            self._loops[route_id] = pair
            for loop in pair:
                loop.start()

    def _stop_loops(self, route_id: str) -> None:
        pair = self._loops.pop(route_id, None)
        if pair is not None:
            for loop in pair:
                loop.stop()

    def _route_doc(self, route_id: str) -> dict | None:
        with self._lock:
            if self._crashed:
                raise Unavailable("route service is down")
            return self._store.get(f"route|{route_id}")

    # -- admin ------------------------------------------------------------------

    def create_route(self, cfg: dict) -> dict:
        doc = validate_route(cfg)
        with self._lock:
            self._check()
            key = f"route|{doc['routeId']}"
            if self._store.get(key) is not None:
                raise DuplicateId(f"route {doc['routeId']!r} exists")
            self._store.put(key, doc)
            self.bus.create_queue(doc["targetQueue"])
            if doc["active"] and self._started:
                self._spawn(doc["routeId"])
            return deepcopy(doc)

    def get_route(self, route_id: str) -> dict:
        with self._lock:
            self._check()
            doc = self._store.get(f"route|{route_id}")
            if doc is None:
                raise NotFound(f"no route {route_id!r}")
            return deepcopy(doc)

    def list_routes(self) -> list[dict]:
        with self._lock:
            self._check()
            return [deepcopy(doc) for _, doc in self._store.items("route|")]

    def delete_route(self, route_id: str) -> None:
        with self._lock:
            self._check()
            if self._store.get(f"route|{route_id}") is None:
                raise NotFound(f"no route {route_id!r}")
            self._store.delete(f"route|{route_id}")
            self._stop_loops(route_id)

    def _set_active(self, route_id: str, active: bool) -> None:
        with self._lock:
            self._check()
            doc = self._store.get(f"route|{route_id}")
            if doc is None:
                raise NotFound(f"no route {route_id!r}")
            doc["active"] = active
            self._store.put(f"route|{route_id}", doc)
            if active and self._started:
                self._spawn(route_id)
            elif not active:
                self._stop_loops(route_id)

    def activate_route(self, route_id: str) -> None:
        self._set_active(route_id, True)

    def deactivate_route(self, route_id: str) -> None:
        self._set_active(route_id, False)

    # -- stream -----------------------------------------------------------------

    def _enqueue_prediction(self, doc: dict, msg) -> None:
        try:
            outputs = json.loads(msg.payload.decode("utf-8"))
            if not isinstance(outputs, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in outputs
            ):
                raise InvalidResult("model output must be a JSON number array")
            envelope = substitute(doc["ditto_message"], outputs)
        except Unavailable:
            raise
        except Exception as exc:
            headers = dict(msg.headers)
            headers.update({"reason": str(exc), "route": doc["routeId"]})
            self.bus.publish(DEAD_LETTER_TOPIC, headers, msg.payload)
            self.metrics.inc("bridges.route_dead_lettered")
            return
        headers = {
            "route": doc["routeId"],
            "mode": doc["mode"],
            "ditto-originator": doc["principal"],
        }
        if doc["mode"] == "future_copy":
            headers["horizon-s"] = repr(doc["horizon_s"])
        if "device-id" in msg.headers:
            headers["device-id"] = msg.headers["device-id"]
        self.bus.enqueue(doc["targetQueue"], envelope.to_bytes(), headers)
        self.metrics.inc("bridges.routed")

    def _apply(self, doc: dict, msg) -> None:
        subject = msg.headers.get("ditto-originator", doc["principal"])
        try:
            envelope = Envelope.from_bytes(msg.payload)
            if msg.headers.get("mode", doc["mode"]) == "future_copy":
                horizon = float(msg.headers.get("horizon-s", doc.get("horizon_s", 0.0)))
                copy_future(self.registry, envelope, horizon, subject)
            else:
                self.registry.update(envelope, subject)
        except Unavailable:
            raise
        except Exception as exc:  # domain errors must not wedge the queue
            headers = dict(msg.headers)
            headers.update({"reason": str(exc), "route": doc["routeId"]})
            self.bus.publish(DEAD_LETTER_TOPIC, headers, msg.payload)
            self.metrics.inc("bridges.apply_dead_lettered")
            return
        self.metrics.inc("bridges.applied")
