"""Device gateway: tenants, device credentials, payload mapping, intake.

Devices authenticate per message and their payloads land on the tenant's
telemetry topic `telemetry/<tenantId>` as envelope JSON, tagged with a
`device-id` bus header. A payload that already parses as a valid envelope
addressed to the sending device passes through unchanged; otherwise the
tenant's declarative mapping rules convert raw JSON fields into envelope
paths. Anything unmappable is kept on a dead-letter topic.

Intake endpoints: in-process calls, a length-prefixed TCP frame protocol,
and (via the HTTP layer) POST /ingest/{tenant}/{device} with basic auth.
"""

from __future__ import annotations

import hashlib
import json
import secrets
import socket
import socketserver
import struct
import threading
from pathlib import Path

from .bus import Bus
from .errors import (
    AuthFailed,
    DuplicateDevice,
    DuplicateId,
    EnvelopeInvalid,
    MappingFailed,
    NotFound,
    TwinforgeError,
    Unavailable,
    UnknownTenant,
)
from .metrics import Metrics
from .model import Envelope, command_topic, parse_thing_id, validate_envelope
from .storage import KvLog

DEAD_LETTER_TOPIC = "dead-letter"


def telemetry_topic(tenant_id: str) -> str:
    return f"telemetry/{tenant_id}"


def _hash_password(salt: str, password: str) -> str:
    return hashlib.sha256((salt + password).encode("utf-8")).hexdigest()


def _dig(payload: dict, dotted: str):
    """Fetch payload['a']['b'] for dotted path 'a.b'."""
    node = payload
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            raise MappingFailed(f"source field {dotted!r} missing from payload")
        node = node[part]
    return node


def map_with_rules(rules: list[dict], device_id: str, payload: dict) -> Envelope:
    """Build a modify envelope for the device's twin from mapping rules.

    Each rule is {"source": <dotted payload field>, "target": <envelope path>}.
    One rule maps straight to its target path; several rules merge into a
    single /features envelope.
    """
    if not rules:
        raise MappingFailed("tenant has no mapping rules")
    try:
        thing_id = parse_thing_id(device_id)
    except TwinforgeError as exc:
        raise MappingFailed(f"device id {device_id!r} is not a thing id") from exc
    topic = command_topic(thing_id)

    if len(rules) == 1:
        rule = rules[0]
        value = _dig(payload, rule["source"])
        envelope = Envelope(topic=topic, path=rule["target"], value=value)
    else:
        features: dict = {}
        for rule in rules:
            segments = rule["target"].split("/")[1:]
            # only feature-property targets can merge into one message
            if len(segments) != 4 or segments[0] != "features" or segments[2] != "properties":
                raise MappingFailed(
                    f"multi-rule target must be /features/<f>/properties/<p>: {rule['target']!r}"
                )
            feature, prop = segments[1], segments[3]
            features.setdefault(feature, {"properties": {}})["properties"][prop] = _dig(
                payload, rule["source"]
            )
        envelope = Envelope(topic=topic, path="/features", value=features)
    try:
        validate_envelope(envelope)
    except EnvelopeInvalid as exc:
        raise MappingFailed(f"mapped envelope invalid: {exc}") from exc
    return envelope


class Gateway:
    def __init__(self, data_dir: str | Path, bus: Bus, metrics: Metrics | None = None):
        self.data_dir = Path(data_dir)
        self.bus = bus
        self.metrics = metrics or Metrics()
        self._lock = threading.RLock()
        self._crashed = False
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._store = KvLog(self.data_dir / "gateway.log")

    # -- lifecycle -----------------------------------------------------------

    def crash(self) -> None:
        with self._lock:
            self._crashed = True
            self._store.close()

    def restart(self) -> None:
        with self._lock:
            if self._crashed:
                self._store = KvLog(self.data_dir / "gateway.log")
                self._crashed = False

    def close(self) -> None:
        self.crash()

    def _check(self) -> None:
        if self._crashed:
            raise Unavailable("gateway is down")

    # -- tenant admin ----------------------------------------------------------

    def create_tenant(self, tenant_id: str, mapping: list[dict] | None = None) -> dict:
        with self._lock:
            self._check()
            if self._store.get(f"tenant|{tenant_id}") is not None:
                raise DuplicateId(f"tenant {tenant_id!r} exists")
            doc = {"tenantId": tenant_id, "mapping": mapping or []}
            self._store.put(f"tenant|{tenant_id}", doc)
        self.bus.create_topic(telemetry_topic(tenant_id))
        return dict(doc, telemetryTopic=telemetry_topic(tenant_id))

    def _tenant(self, tenant_id: str) -> dict:
        doc = self._store.get(f"tenant|{tenant_id}")
        if doc is None:
            raise UnknownTenant(f"no tenant {tenant_id!r}")
        return doc

    def get_tenant(self, tenant_id: str) -> dict:
        with self._lock:
            self._check()
            doc = self._tenant(tenant_id)
            devices = [
                d.split("|", 2)[2] for d, _ in self._store.items(f"device|{tenant_id}|")
            ]
            return dict(doc, telemetryTopic=telemetry_topic(tenant_id), devices=devices)

    def list_tenants(self) -> list[str]:
        with self._lock:
            self._check()
            return [k.split("|", 1)[1] for k, _ in self._store.items("tenant|")]

    def delete_tenant(self, tenant_id: str) -> None:
        with self._lock:
            self._check()
            self._tenant(tenant_id)
            for key, _ in self._store.items(f"device|{tenant_id}|"):
                self._store.delete(key)
            self._store.delete(f"tenant|{tenant_id}")

    def set_mapping(self, tenant_id: str, mapping: list[dict]) -> None:
        with self._lock:
            self._check()
            doc = self._tenant(tenant_id)
            doc["mapping"] = mapping
            self._store.put(f"tenant|{tenant_id}", doc)

    # -- device admin ------------------------------------------------------------

    def register_device(
        self, tenant_id: str, device_id: str, username: str, password: str
    ) -> dict:
        with self._lock:
            self._check()
            self._tenant(tenant_id)
            key = f"device|{tenant_id}|{device_id}"
            if self._store.get(key) is not None:
                raise DuplicateDevice(f"device {device_id!r} exists in {tenant_id!r}")
            for _, other in self._store.items(f"device|{tenant_id}|"):
                if other["username"] == username:
                    raise DuplicateDevice(f"username {username!r} taken in {tenant_id!r}")
            salt = secrets.token_hex(8)
            doc = {
                "deviceId": device_id,
                "username": username,
                "salt": salt,
                "hash": _hash_password(salt, password),
            }
            self._store.put(key, doc)
            return {"deviceId": device_id, "username": username}

    def list_devices(self, tenant_id: str) -> list[str]:
        with self._lock:
            self._check()
            self._tenant(tenant_id)
            return [k.split("|", 2)[2] for k, _ in self._store.items(f"device|{tenant_id}|")]

    def delete_device(self, tenant_id: str, device_id: str) -> None:
        with self._lock:
            self._check()
            self._tenant(tenant_id)
            key = f"device|{tenant_id}|{device_id}"
            if self._store.get(key) is None:
                raise NotFound(f"no device {device_id!r} in {tenant_id!r}")
            self._store.delete(key)

    def authenticate(self, tenant_id: str, device_id: str, username: str, password: str) -> None:
        with self._lock:
            self._check()
            doc = self._store.get(f"device|{tenant_id}|{device_id}")
            if (
                doc is None
                or doc["username"] != username
                or doc["hash"] != _hash_password(doc["salt"], password)
            ):
                raise AuthFailed(f"bad credentials for {device_id!r}")

    # -- intake ---------------------------------------------------------------------

    def _map(self, tenant_id: str, device_id: str, payload: bytes) -> Envelope:
        try:
            data = json.loads(payload.decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            raise MappingFailed(f"payload is not JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise MappingFailed("payload must be a JSON object")

        if "topic" in data and "path" in data:
            try:
                envelope = Envelope.from_json(data)
                validate_envelope(envelope)
            except EnvelopeInvalid as exc:
                raise MappingFailed(f"envelope payload invalid: {exc}") from exc
            if envelope.thing_id().render() != device_id:
                raise MappingFailed(
                    f"envelope targets {envelope.thing_id().render()!r}, sender is {device_id!r}"
                )
            return envelope

        with self._lock:
            self._check()
            rules = self._tenant(tenant_id)["mapping"]
        return map_with_rules(rules, device_id, data)

    def ingest(
        self, tenant_id: str, device_id: str, username: str, password: str, payload: bytes
    ) -> int:
        """Authenticated telemetry intake; returns the topic offset."""
        self.authenticate(tenant_id, device_id, username, password)
        try:
            envelope = self._map(tenant_id, device_id, payload)
        except MappingFailed as exc:
            self.bus.publish(
                DEAD_LETTER_TOPIC,
                {"reason": str(exc), "tenant": tenant_id, "device-id": device_id},
                payload,
            )
            self.metrics.inc("gateway.dead_lettered")
            raise
        offset = self.bus.publish(
            telemetry_topic(tenant_id),
            {"device-id": device_id},
            envelope.to_bytes(),
        )
        self.metrics.inc("gateway.ingested")
        return offset

    def subscribe_telemetry(self, tenant_id: str, group: str, start: int | None = 0):
        """Offset-committing reader over the tenant's telemetry stream."""
        with self._lock:
            self._check()
            self._tenant(tenant_id)
        return self.bus.consumer(telemetry_topic(tenant_id), group, start=start)


# -- TCP frame protocol ----------------------------------------------------------
# frame = 4-byte big-endian length + UTF-8 JSON
# request: {tenant, device, username, password, payload}  (payload = JSON value)
# response: {"ok": true, "offset": n} | {"ok": false, "error": code, "message": m}


def _read_frame(rfile) -> bytes | None:
    header = rfile.read(4)
    if len(header) < 4:
        return None
    (length,) = struct.unpack(">I", header)
    if length > 16 * 1024 * 1024:
        raise ValueError("frame too large")
    body = rfile.read(length)
    if len(body) < length:
        return None
    return body


def _write_frame(wfile, data: dict) -> None:
    raw = json.dumps(data).encode("utf-8")
    wfile.write(struct.pack(">I", len(raw)) + raw)
    wfile.flush()


class _IngestHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        while True:
            try:
                raw = _read_frame(self.rfile)
            except ValueError:
                return
            if raw is None:
                return
            try:
                req = json.loads(raw.decode("utf-8"))
                payload = json.dumps(req["payload"]).encode("utf-8")
                offset = self.server.gateway.ingest(
                    req["tenant"], req["device"], req["username"], req["password"], payload
                )
                _write_frame(self.wfile, {"ok": True, "offset": offset})
            except TwinforgeError as exc:
                _write_frame(
                    self.wfile, {"ok": False, "error": exc.code, "message": str(exc)}
                )
            except (KeyError, ValueError, UnicodeDecodeError) as exc:
                _write_frame(
                    self.wfile, {"ok": False, "error": "BadFrame", "message": str(exc)}
                )


class GatewayTcpServer:
    """Length-prefixed JSON frame listener in front of a Gateway."""

    def __init__(self, gateway: Gateway, host: str = "127.0.0.1", port: int = 0):
        self.gateway = gateway
        self._server = socketserver.ThreadingTCPServer((host, port), _IngestHandler)
        self._server.daemon_threads = True
        self._server.allow_reuse_address = True
        self._server.gateway = gateway
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address

    def start(self) -> None:
        self._thread = threading.Thread(
            target=self._server.serve_forever, name="gateway-tcp", daemon=True
        )
        self._thread.start()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=2.0)


def send_frame(host: str, port: int, request: dict, timeout: float = 5.0) -> dict:
    """One-shot client for the TCP frame protocol."""
    with socket.create_connection((host, port), timeout=timeout) as sock:
        raw = json.dumps(request).encode("utf-8")
        sock.sendall(struct.pack(">I", len(raw)) + raw)
        header = b""
        while len(header) < 4:
            chunk = sock.recv(4 - len(header))
            if not chunk:
                raise ConnectionError("connection closed before response")
            header += chunk
        (length,) = struct.unpack(">I", header)
        body = b""
        while len(body) < length:
            chunk = sock.recv(length - len(body))
            if not chunk:
                raise ConnectionError("connection closed mid-response")
            body += chunk
    return json.loads(body.decode("utf-8"))
