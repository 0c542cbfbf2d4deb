"""Silence watchdog: per-device interval learning and synthetic dispatch.

Each supervised device gets a timer. Every real message restarts it; the
timer interval is learned from the gap between consecutive messages,
rounded up to whole seconds plus a 0.2 s uncertainty pad. While a device
stays silent the timer keeps firing at the learned interval, each fire
publishing a synthetic model input built from the device's last observed
values and the current clock. An interval learned before an outage is kept
across it: gaps that contain a fire never update the interval.

The timing rules live in DeviceRuntime, a pure state machine driven by
explicit times, so tests can replay traces on a virtual clock. The service
wraps it with one supervisor thread per active tenant reading live
telemetry.
"""

from __future__ import annotations

import math
import threading
import uuid
from pathlib import Path

from .bus import Bus
from .clock import SystemClock
from .codec import ValueSpec, build_input, specs_from_json, utc_from_seconds
from .errors import (
    DuplicateDevice,
    DuplicateId,
    MissingLastValue,
    NotFound,
    Unavailable,
)
from .metrics import Metrics
from .model import Envelope, feature_values
from .storage import KvLog


def learn_interval(gap_s: float) -> float:
    """Whole-second ceiling of the gap plus a fixed 0.2 s pad."""
    return math.ceil(max(gap_s, 0.0)) + 0.2


class DeviceRuntime:
    """Pure timing state machine for one device; all times are seconds."""

    def __init__(
        self,
        device_id: str,
        ml_input_topic: str,
        specs: list[ValueSpec],
        learned_interval_s: float | None = None,
        active: bool = True,
    ):
        self.device_id = device_id
        self.ml_input_topic = ml_input_topic
        self.specs = specs
        self.learned_interval_s = learned_interval_s
        self.active = active
        self.deadline: float | None = None
        self.fired_since_message = False
        self.last_message_t: float | None = None

    def on_message(self, t: float, values: dict) -> None:
        """A real message arrived at time t carrying named values."""
        for spec in self.specs:
            if not spec.is_time_field and spec.name in values:
                spec.last_value = values[spec.name]
        if self.last_message_t is None:
            # first message: start the timer, learn nothing yet
            pass
        elif not self.fired_since_message:
            self.learned_interval_s = learn_interval(t - self.last_message_t)
        # else: a fire happened during the gap; keep the last set interval
        self.last_message_t = t
        self.fired_since_message = False
        self.deadline = (
            t + self.learned_interval_s if self.learned_interval_s is not None else None
        )

    def fire(self, t: float) -> bytes:
        """Timer expiry at time t; re-arms and returns the synthetic input."""
        if self.learned_interval_s is None:
            raise ValueError("timer fired without a learned interval")
        self.fired_since_message = True
        self.deadline = t + self.learned_interval_s
        return build_input(self.specs, utc_from_seconds(t))

    def cancel(self) -> None:
        self.deadline = None
        self.fired_since_message = False
        self.last_message_t = None

    def to_json(self) -> dict:
        return {
            "deviceId": self.device_id,
            "active": self.active,
            "mlInputTopic": self.ml_input_topic,
            "required_values": [s.to_json() for s in self.specs],
            "learned_interval_s": self.learned_interval_s,
        }

    @classmethod
    def from_json(cls, data: dict) -> "DeviceRuntime":
        return cls(
            device_id=data["deviceId"],
            ml_input_topic=data["mlInputTopic"],
            specs=specs_from_json(data["required_values"]),
            learned_interval_s=data.get("learned_interval_s"),
            active=data.get("active", True),
        )


def replay_device(
    runtime: DeviceRuntime,
    messages: list[tuple[float, dict]],
    horizon: float,
) -> list[tuple[float, bytes | None]]:
    """Drive one device over a message trace; fires win ties with messages.

    Returns (time, payload) per dispatch; payload None marks a dispatch
    skipped because some value was still unknown.
    """
    fires: list[tuple[float, bytes | None]] = []

    def fire_due(until: float) -> None:
        while runtime.deadline is not None and runtime.deadline <= until:
            t_fire = runtime.deadline
            try:
                fires.append((t_fire, runtime.fire(t_fire)))
            except MissingLastValue:
                fires.append((t_fire, None))

    for t, values in sorted(messages, key=lambda m: m[0]):
        fire_due(t)
        runtime.on_message(t, values)
    fire_due(horizon)
    return fires


class _TenantSupervisor(threading.Thread):
    def __init__(self, watchdog: "Watchdog", tenant_id: str):
        super().__init__(name=f"watchdog-{tenant_id}", daemon=True)
        self.watchdog = watchdog
        self.tenant_id = tenant_id
        self.stop_event = threading.Event()

    def run(self) -> None:
        consumer = None
        topic = f"telemetry/{self.tenant_id}"
        while not self.stop_event.is_set():
            try:
                if consumer is None:
                    # live monitor: join at the end of the stream, no replay
                    consumer = self.watchdog.bus.consumer(
                        topic,
                        f"watchdog-{self.tenant_id}-{uuid.uuid4().hex}",
                        start=self.watchdog.bus.end_offset(topic),
                    )
                now = self.watchdog.clock.now()
                self.watchdog._fire_due(self.tenant_id, now)
                next_deadline = self.watchdog._next_deadline(self.tenant_id)
                timeout = 0.25
                if next_deadline is not None:
                    timeout = min(max(next_deadline - now, 0.0), 0.25)
                msg = consumer.poll_one(timeout=timeout)
                if msg is not None:
                    self.watchdog._handle_message(self.tenant_id, msg)
            except Unavailable:
                consumer = None
                self.stop_event.wait(0.2)
            except NotFound:
                return  # tenant deleted under us

    def stop(self) -> None:
        self.stop_event.set()


class Watchdog:
    def __init__(
        self,
        data_dir: str | Path,
        bus: Bus,
        clock=None,
        metrics: Metrics | None = None,
    ):
        self.data_dir = Path(data_dir)
        self.bus = bus
        self.clock = clock or SystemClock()
        self.metrics = metrics or Metrics()
        self._lock = threading.RLock()
        self._crashed = False
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._store = KvLog(self.data_dir / "watchdog.log")
        self._active: dict[str, bool] = {}
        self._runtimes: dict[str, dict[str, DeviceRuntime]] = {}
        self._supervisors: dict[str, _TenantSupervisor] = {}
        self._load_all()

    def _load_all(self) -> None:
        for key, doc in self._store.items("wdtenant|"):
            tenant_id = key.split("|", 1)[1]
            self._active[tenant_id] = doc["active"]
            self._runtimes[tenant_id] = {
                d["deviceId"]: DeviceRuntime.from_json(d) for d in doc["devices"]
            }

    # -- lifecycle ---------------------------------------------------------------

    def start(self) -> None:
        """Launch a supervisor for every tenant marked active."""
        with self._lock:
            self._check()
            for tenant_id, active in self._active.items():
                if active:
                    self._start_supervisor(tenant_id)

    def stop(self) -> None:
        with self._lock:
            supervisors = list(self._supervisors.values())
            self._supervisors.clear()
        for sup in supervisors:
            sup.stop()
        for sup in supervisors:
            sup.join(timeout=2.0)

    def crash(self) -> None:
        self.stop()
        with self._lock:
            self._crashed = True
            self._store.close()
            self._runtimes.clear()
            self._active.clear()

    def restart(self) -> None:
        with self._lock:
            if not self._crashed:
                return
            self._store = KvLog(self.data_dir / "watchdog.log")
            self._crashed = False
            self._load_all()
        self.start()

    def _check(self) -> None:
        if self._crashed:
            raise Unavailable("watchdog is down")

    def _start_supervisor(self, tenant_id: str) -> None:
        if tenant_id not in self._supervisors:
            sup = _TenantSupervisor(self, tenant_id)
            self._supervisors[tenant_id] = sup
            sup.start()

    def _stop_supervisor(self, tenant_id: str) -> None:
        sup = self._supervisors.pop(tenant_id, None)
        if sup is not None:
            sup.stop()

    # -- persistence ----------------------------------------------------------------

    def _persist(self, tenant_id: str) -> None:
        doc = {
            "tenantId": tenant_id,
            "active": self._active[tenant_id],
            "devices": [r.to_json() for r in self._runtimes[tenant_id].values()],
        }
        self._store.put(f"wdtenant|{tenant_id}", doc)

    # -- tenant admin -----------------------------------------------------------------

    def create_tenant(self, tenant_id: str, active: bool = False) -> dict:
        with self._lock:
            self._check()
            if tenant_id in self._active:
                raise DuplicateId(f"watchdog tenant {tenant_id!r} exists")
            self._active[tenant_id] = active
            self._runtimes[tenant_id] = {}
            self._persist(tenant_id)
            if active:
                self._start_supervisor(tenant_id)
            return self.get_tenant(tenant_id)

    def get_tenant(self, tenant_id: str) -> dict:
        with self._lock:
            self._check()
            if tenant_id not in self._active:
                raise NotFound(f"no watchdog tenant {tenant_id!r}")
            return {
                "tenantId": tenant_id,
                "active": self._active[tenant_id],
                "devices": [r.to_json() for r in self._runtimes[tenant_id].values()],
            }

    def list_tenants(self) -> list[dict]:
        with self._lock:
            self._check()
            return [self.get_tenant(t) for t in sorted(self._active)]

    def delete_tenant(self, tenant_id: str) -> None:
        with self._lock:
            self._check()
            if tenant_id not in self._active:
                raise NotFound(f"no watchdog tenant {tenant_id!r}")
            self._stop_supervisor(tenant_id)
            del self._active[tenant_id]
            del self._runtimes[tenant_id]
            self._store.delete(f"wdtenant|{tenant_id}")

    def activate_tenant(self, tenant_id: str) -> None:
        with self._lock:
            self._check()
            if tenant_id not in self._active:
                raise NotFound(f"no watchdog tenant {tenant_id!r}")
            self._active[tenant_id] = True
            self._persist(tenant_id)
            self._start_supervisor(tenant_id)

    def deactivate_tenant(self, tenant_id: str) -> None:
        with self._lock:
            self._check()
            if tenant_id not in self._active:
                raise NotFound(f"no watchdog tenant {tenant_id!r}")
            self._active[tenant_id] = False
            self._persist(tenant_id)
            self._stop_supervisor(tenant_id)

    # -- device admin --------------------------------------------------------------------

    def add_device(
        self,
        tenant_id: str,
        device_id: str,
        ml_input_topic: str,
        required_values: list[dict],
        active: bool = True,
    ) -> dict:
        with self._lock:
            self._check()
            devices = self._devices(tenant_id)
            if device_id in devices:
                raise DuplicateDevice(f"device {device_id!r} already supervised")
            runtime = DeviceRuntime(
                device_id=device_id,
                ml_input_topic=ml_input_topic,
                specs=specs_from_json(required_values),
                active=active,
            )
            devices[device_id] = runtime
            self._persist(tenant_id)
            return runtime.to_json()

    def _devices(self, tenant_id: str) -> dict[str, DeviceRuntime]:
        if tenant_id not in self._runtimes:
            raise NotFound(f"no watchdog tenant {tenant_id!r}")
        return self._runtimes[tenant_id]

    def get_device(self, tenant_id: str, device_id: str) -> dict:
        with self._lock:
            self._check()
            devices = self._devices(tenant_id)
            if device_id not in devices:
                raise NotFound(f"no supervised device {device_id!r}")
            return devices[device_id].to_json()

    def delete_device(self, tenant_id: str, device_id: str) -> None:
        with self._lock:
            self._check()
            devices = self._devices(tenant_id)
            if device_id not in devices:
                raise NotFound(f"no supervised device {device_id!r}")
            devices[device_id].cancel()
            del devices[device_id]
            self._persist(tenant_id)

    def set_device_active(self, tenant_id: str, device_id: str, active: bool) -> None:
        with self._lock:
            self._check()
            devices = self._devices(tenant_id)
            if device_id not in devices:
                raise NotFound(f"no supervised device {device_id!r}")
            runtime = devices[device_id]
            if runtime.active and not active:
                runtime.cancel()
            runtime.active = active
            self._persist(tenant_id)

    # -- supervisor callbacks ---------------------------------------------------------------

    def _next_deadline(self, tenant_id: str) -> float | None:
        with self._lock:
            if self._crashed or tenant_id not in self._runtimes:
                return None
            deadlines = [
                r.deadline
                for r in self._runtimes[tenant_id].values()
                if r.active and r.deadline is not None
            ]
            return min(deadlines) if deadlines else None

    def _fire_due(self, tenant_id: str, now: float) -> None:
        outbox: list[tuple[str, dict, bytes]] = []
        with self._lock:
            if self._crashed or not self._active.get(tenant_id):
                return
            changed = False
            for runtime in sorted(self._runtimes[tenant_id].values(), key=lambda r: r.device_id):
                while runtime.active and runtime.deadline is not None and runtime.deadline <= now:
                    t_fire = runtime.deadline
                    changed = True
                    try:
                        payload = runtime.fire(t_fire)
                    except MissingLastValue:
                        self.metrics.inc("watchdog.skipped_dispatches")
                        continue
                    outbox.append(
                        (
                            runtime.ml_input_topic,
                            {"device-id": runtime.device_id, "tenant": tenant_id},
                            payload,
                        )
                    )
            if changed:
                self._persist(tenant_id)
        for topic, headers, payload in outbox:
            self.bus.publish(topic, headers, payload)
            self.metrics.inc("watchdog.dispatches")

    def _handle_message(self, tenant_id: str, msg) -> None:
        try:
            envelope = Envelope.from_bytes(msg.payload)
        except Exception:
            self.metrics.inc("watchdog.malformed_messages")
            return
        device_id = msg.headers.get("device-id")
        if device_id is None:
            try:
                device_id = envelope.thing_id().render()
            except Exception:
                self.metrics.inc("watchdog.malformed_messages")
                return
        t = self.clock.now()
        self._fire_due(tenant_id, t)
        with self._lock:
            if self._crashed or not self._active.get(tenant_id):
                return
            runtime = self._runtimes[tenant_id].get(device_id)
            if runtime is None or not runtime.active:
                self.metrics.inc("watchdog.ignored_messages")
                return
            runtime.on_message(t, feature_values(envelope))
            self._persist(tenant_id)
