"""One-process composition of every service over a shared bus.

The Platform wires the registry, gateway, sink, watchdog, ML runtime, and
bridges onto one durable bus and one shared metrics table, and gives the
fault harness a uniform way to kill and revive each piece by name. It also
owns the telemetry applier: the consumer that turns gateway telemetry into
registry updates, which is what makes twin state follow device reality.
"""

from __future__ import annotations

import threading
from pathlib import Path

from .bridges import ForwarderService, RouteService
from .bus import Bus
from .clock import SystemClock
from .errors import NotFound, Unavailable
from .gateway import DEAD_LETTER_TOPIC, Gateway, GatewayTcpServer, telemetry_topic
from .metrics import Metrics
from .mlrt import MlRuntime
from .model import Envelope
from .registry import Registry
from .timeseries import TimeSeriesService
from .watchdog import Watchdog

APPLIER_SUBJECT = "gateway"


class _ApplierLoop(threading.Thread):
    def __init__(self, applier: "TelemetryApplier", tenant_id: str):
        super().__init__(name=f"applier-{tenant_id}", daemon=True)
        self.applier = applier
        self.tenant_id = tenant_id
        self.stop_event = threading.Event()

    def run(self) -> None:
        bus = self.applier.bus
        topic = telemetry_topic(self.tenant_id)
        group = f"applier-{self.tenant_id}"
        consumer = None
        while not self.stop_event.is_set():
            try:
                if consumer is None:
                    bus.create_topic(topic)
                    consumer = bus.consumer(topic, group, start=0)
                msg = consumer.poll_one(timeout=0.25)
                if msg is None:
                    continue
                self.applier._apply(msg)
                consumer.commit(msg.offset)
            except Unavailable:
                consumer = None
                self.stop_event.wait(0.2)

    def stop(self) -> None:
        self.stop_event.set()


class TelemetryApplier:
    """Applies each tenant's telemetry stream to the registry as 'gateway'.

    One durable consumer per tenant, commit after apply, so twin state is
    loss-free across crashes of either end. Domain failures (unknown twin,
    managed attribute writes) are dead-lettered rather than retried.
    """

    def __init__(self, bus: Bus, gateway: Gateway, registry: Registry, metrics: Metrics | None = None):
        self.bus = bus
        self.gateway = gateway
        self.registry = registry
        self.metrics = metrics or Metrics()
        self._lock = threading.RLock()
        self._crashed = False
        self._loops: dict[str, _ApplierLoop] = {}
        self._watcher: threading.Thread | None = None
        self._stop = threading.Event()

    def start(self) -> None:
        with self._lock:
            self._crashed = False
            if self._watcher is None or not self._watcher.is_alive():
                self._stop.clear()
                self._watcher = threading.Thread(target=self._watch, name="applier-watch", daemon=True)
                self._watcher.start()

    def stop(self) -> None:
        self._stop.set()
        if self._watcher is not None:
            self._watcher.join(timeout=2.0)
            self._watcher = None
        with self._lock:
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

    def restart(self) -> None:
        with self._lock:
            if not self._crashed:
                return
        self.start()

    def close(self) -> None:
        self.stop()

    def _watch(self) -> None:
        # tenants can appear and vanish at runtime; follow the gateway's list
        while not self._stop.is_set():
            try:
                tenants = set(self.gateway.list_tenants())
            except Unavailable:
                tenants = None
            if tenants is not None:
                with self._lock:
                    for tenant_id in tenants:
                        if tenant_id not in self._loops:
                            loop = _ApplierLoop(self, tenant_id)
                            self._loops[tenant_id] = loop
                            loop.start()
                    for tenant_id in list(self._loops):
                        if tenant_id not in tenants:
                            self._loops.pop(tenant_id).stop()
            self._stop.wait(0.2)

    def _apply(self, msg) -> None:
        try:
            envelope = Envelope.from_bytes(msg.payload)
            self.registry.update(envelope, APPLIER_SUBJECT)
        except Unavailable:
            raise
        except Exception as exc:  # twin missing or message malformed
            headers = dict(msg.headers)
            headers["reason"] = str(exc)
            self.bus.publish(DEAD_LETTER_TOPIC, headers, msg.payload)
            self.metrics.inc("applier.dead_lettered")
            return
        self.metrics.inc("applier.applied")


class Platform:
    """Every service on one bus, addressable by name for fault injection."""

    SERVICE_NAMES = (
        "bus",
        "gateway",
        "registry",
        "applier",
        "timeseries",
        "watchdog",
        "ml",
        "forwarders",
        "routes",
    )

    def __init__(self, data_dir: str | Path, clock=None):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.clock = clock or SystemClock()
        self.metrics = Metrics()
        self.bus = Bus(self.data_dir / "bus")
        self.registry = Registry(self.data_dir / "registry", self.bus)
        self.gateway = Gateway(self.data_dir / "gateway", self.bus, metrics=self.metrics)
        self.applier = TelemetryApplier(self.bus, self.gateway, self.registry, metrics=self.metrics)
        self.timeseries = TimeSeriesService(self.data_dir / "timeseries", self.bus, metrics=self.metrics)
        self.watchdog = Watchdog(self.data_dir / "watchdog", self.bus, clock=self.clock, metrics=self.metrics)
        self.ml = MlRuntime(self.data_dir / "ml", self.bus, metrics=self.metrics)
        self.forwarders = ForwarderService(
            self.data_dir / "forwarders", self.bus, clock=self.clock, metrics=self.metrics
        )
        self.routes = RouteService(self.data_dir / "routes", self.bus, self.registry, metrics=self.metrics)
        self.tcp_server: GatewayTcpServer | None = None
        self._started = False

    # -- lifecycle ---------------------------------------------------------------

    def start(self) -> None:
        if self._started:
            return
        self.applier.start()
        self.timeseries.start()
        self.watchdog.start()
        self.ml.start()
        self.forwarders.start()
        self.routes.start()
        self._started = True

    def start_tcp(self, host: str = "127.0.0.1", port: int = 0) -> tuple[str, int]:
        if self.tcp_server is None:
            self.tcp_server = GatewayTcpServer(self.gateway, host, port)
            self.tcp_server.start()
        return self.tcp_server.address

    def stop(self) -> None:
        if self.tcp_server is not None:
            self.tcp_server.stop()
            self.tcp_server = None
        self.applier.stop()
        self.timeseries.stop()
        self.watchdog.stop()
        self.ml.stop()
        self.forwarders.stop()
        self.routes.stop()
        self._started = False

    def close(self) -> None:
        self.stop()
        self.registry.close()
        self.gateway.close()
        self.bus.close()

    # -- fault injection -----------------------------------------------------------

    def _service(self, name: str):
        if name not in self.SERVICE_NAMES:
            raise NotFound(f"unknown service {name!r}; pick from {self.SERVICE_NAMES}")
        return getattr(self, name)

    def kill(self, name: str) -> None:
        self._service(name).crash()

    def revive(self, name: str) -> None:
        self._service(name).restart()
