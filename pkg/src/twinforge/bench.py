"""Scenario driver: simulated sensor fleets, latency and loss accounting.

Each run builds a throwaway platform, wires a fleet of fake sensors onto
it, and pushes uniquely-valued messages through the full pipeline while
measuring when each value lands in storage. Values are unique by
construction (a shared counter stepping 0.01), so reconciliation is exact:
lost = sent - stored, duplicates counted separately. The fault runner kills
and revives named services mid-stream; senders retry on outages while
keeping each message's original send time.
"""

from __future__ import annotations

import json
import random
import statistics
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, Unavailable
from .platform import Platform

NAMESPACE = "bench"
TENANT = "bench"
FEATURE = "last_measured"
PREDICTION_FEATURE = "prediction"
POLICY = "bench:policy"
ROUTE_ID = "bench-predict"
ROUTE_PRINCIPAL = f"route:{ROUTE_ID}"
MODEL_WEIGHT = 2.0  # known linear model, outputs correlate to inputs exactly

RW = {"read": True, "write": True}


def sensor_id(i: int) -> str:
    return f"{NAMESPACE}:s{i + 1:03d}"


# ---------------------------------------------------------------------------
# Statistics helpers


def percentile(samples: list[float], q: float) -> float:
    if not samples:
        return 0.0
    ordered = sorted(samples)
    idx = min(len(ordered) - 1, max(0, round(q * (len(ordered) - 1))))
    return ordered[idx]


def rank_with_ties(values: list[float]) -> list[float]:
    """Average ranks, 1-based; ties share the mean of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        shared = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = shared
        i = j + 1
    return ranks


def spearman(xs: list[float], ys: list[float]) -> float:
    if len(xs) != len(ys) or len(xs) < 2:
        raise ValueError("need two same-length samples of at least 2 points")
    return statistics.correlation(rank_with_ties(xs), rank_with_ties(ys))


def bootstrap_diff(a: list[float], b: list[float], n: int = 2000, seed: int = 7) -> list[float]:
    """Sorted bootstrap distribution of mean(b) - mean(a)."""
    rng = random.Random(seed)
    diffs = []
    for _ in range(n):
        ra = [rng.choice(a) for _ in a]
        rb = [rng.choice(b) for _ in b]
        diffs.append(statistics.fmean(rb) - statistics.fmean(ra))
    diffs.sort()
    return diffs


# ---------------------------------------------------------------------------
# Scenario configuration


@dataclass
class ScenarioConfig:
    pipeline: str = "core"  # core | ml
    sensors: int = 1
    clients: int | None = None  # default: one client per sensor
    messages: int = 10  # per client
    period_s: float = 0.0
    repetitions: int = 10
    fault_plan: list[dict] = field(default_factory=list)  # {target, at_s, down_s}
    drain_timeout_s: float = 90.0

    def __post_init__(self):
        if self.pipeline not in ("core", "ml"):
            raise ConfigError(f"pipeline must be core or ml, got {self.pipeline!r}")
        if self.sensors < 1:
            raise ConfigError("sensors must be >= 1")
        if self.clients is None:
            self.clients = self.sensors
        if self.clients < 1 or self.messages < 1 or self.repetitions < 1:
            raise ConfigError("clients, messages, repetitions must be >= 1")
        if self.pipeline == "ml" and self.sensors != 1:
            raise ConfigError("the ml pipeline drives a single twin; set sensors to 1")
        for entry in self.fault_plan:
            target = entry.get("target")
            if target not in Platform.SERVICE_NAMES:
                raise ConfigError(f"unknown fault target {target!r}")
            if float(entry.get("at_s", 0)) < 0 or float(entry.get("down_s", 1.0)) <= 0:
                raise ConfigError("fault entries need at_s >= 0 and down_s > 0")

    @classmethod
    def from_json(cls, data: dict) -> "ScenarioConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> dict:
        return {
            "pipeline": self.pipeline,
            "sensors": self.sensors,
            "clients": self.clients,
            "messages": self.messages,
            "period_s": self.period_s,
            "repetitions": self.repetitions,
            "fault_plan": self.fault_plan,
        }


# ---------------------------------------------------------------------------
# One repetition


class _ValueCounter:
    """Each client increments one shared value by 0.01, starting at 0."""

    def __init__(self):
        self._lock = threading.Lock()
        self._k = 0

    def next(self) -> float:
        with self._lock:
            self._k += 1
            return self._k / 100.0


class _Sender(threading.Thread):
    """One client: sends uniquely-valued messages to its sensor's device.

    A failed send is retried until accepted; the send time on record stays
    the first attempt's, so outages show up as latency, not as loss.
    """

    def __init__(self, rep: "_Repetition", client_idx: int, sensor: str):
        super().__init__(name=f"bench-client-{client_idx}", daemon=True)
        self.rep = rep
        self.sensor = sensor
        self.sends: list[tuple[float, int]] = []  # (value, first send ns)

    def run(self) -> None:
        gateway = self.rep.platform.gateway
        username, password = self.rep.credentials[self.sensor]
        for _ in range(self.rep.cfg.messages):
            value = self.rep.counter.next()
            payload = json.dumps({"value": value}).encode("utf-8")
            first_send_ns = time.time_ns()
            while True:
                try:
                    gateway.ingest(TENANT, self.sensor, username, password, payload)
                    break
                except Unavailable:
                    time.sleep(0.05)
            self.sends.append((value, first_send_ns))
            if self.rep.cfg.period_s:
                time.sleep(self.rep.cfg.period_s)


class _FaultController(threading.Thread):
    """Executes the kill/revive plan relative to the senders' start time."""

    def __init__(self, platform: Platform, plan: list[dict], t0: float):
        super().__init__(name="bench-faults", daemon=True)
        self.platform = platform
        self.plan = sorted(plan, key=lambda e: float(e.get("at_s", 0)))
        self.t0 = t0
        self.events: list[dict] = []

    def run(self) -> None:
        for entry in self.plan:
            target = entry["target"]
            at_s = float(entry.get("at_s", 0))
            down_s = float(entry.get("down_s", 1.0))
            delay = self.t0 + at_s - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            killed_ns = time.time_ns()
            self.platform.kill(target)
            time.sleep(down_s)
            self.platform.revive(target)
            self.events.append(
                {"target": target, "killed_ns": killed_ns, "revived_ns": time.time_ns()}
            )


class _Repetition:
    def __init__(self, cfg: ScenarioConfig, data_dir: Path):
        self.cfg = cfg
        self.platform = Platform(data_dir)
        self.counter = _ValueCounter()
        self.credentials: dict[str, tuple[str, str]] = {}

    def setup(self) -> None:
        p = self.platform
        p.registry.create_policy(POLICY, {"admin": RW, "gateway": RW, ROUTE_PRINCIPAL: RW})
        p.gateway.create_tenant(
            TENANT,
            [{"source": "value", "target": f"/features/{FEATURE}/properties/value"}],
        )
        for i in range(self.cfg.sensors):
            sid = sensor_id(i)
            p.registry.create_twin(
                sid,
                POLICY,
                features={
                    FEATURE: {"properties": {"value": None}},
                    PREDICTION_FEATURE: {"properties": {"value": None}},
                },
            )
            username = f"client-{i + 1}"
            p.gateway.register_device(TENANT, sid, username, "benchkey")
            self.credentials[sid] = (username, "benchkey")
        if self.cfg.pipeline == "ml":
            p.forwarders.create_forwarder(
                {
                    "tenantId": TENANT,
                    "active": True,
                    "devices": [
                        {
                            "deviceId": sensor_id(0),
                            "mlInputTopic": "bench-ml-in",
                            "required_values": [{"name": FEATURE, "format": "float64"}],
                        }
                    ],
                }
            )
            p.ml.deploy(
                {
                    "modelId": "bench-linear",
                    "inputTopic": "bench-ml-in",
                    "outputTopic": "bench-ml-out",
                    "schema": ["float64"],
                    "fn": "linear",
                    "params": {"weights": [MODEL_WEIGHT], "bias": 0.0},
                }
            )
            p.routes.create_route(
                {
                    "routeId": ROUTE_ID,
                    "sourceTopic": "bench-ml-out",
                    "targetQueue": "bench-predictions",
                    "active": True,
                    "mode": "update",
                    "ditto_message": {
                        "topic": f"{NAMESPACE}/s001/things/twin/commands/modify",
                        "path": f"/features/{PREDICTION_FEATURE}/properties/value",
                        "value": "{0}",
                    },
                }
            )
        p.start()
        time.sleep(0.5)  # let live-joining consumers reach the stream head

    def run(self) -> dict:
        self.setup()
        senders = [
            _Sender(self, i, sensor_id(i % self.cfg.sensors)) for i in range(self.cfg.clients)
        ]
        t0 = time.monotonic()
        controller = None
        if self.cfg.fault_plan:
            controller = _FaultController(self.platform, self.cfg.fault_plan, t0)
            controller.start()
        for s in senders:
            s.start()
        for s in senders:
            s.join()
        if controller is not None:
            controller.join()
        sends = [pair for s in senders for pair in s.sends]
        stored = self._drain(len(sends))
        report = self._reconcile(sends, stored)
        if controller is not None:
            report["fault_events"] = controller.events
        return report

    def close(self) -> None:
        self.platform.close()

    # -- measurement ----------------------------------------------------------

    def _expected_feature(self) -> str:
        return PREDICTION_FEATURE if self.cfg.pipeline == "ml" else FEATURE

    def _stored_points(self) -> list[dict]:
        feature = self._expected_feature()
        points = []
        for i in range(self.cfg.sensors):
            points.extend(self.platform.timeseries.query(thing=sensor_id(i), feature=feature))
        return points

    def _drain(self, expected: int) -> list[dict]:
        deadline = time.time() + self.cfg.drain_timeout_s
        last_count, last_change = -1, time.time()
        while time.time() < deadline:
            points = self._stored_points()
            if len(points) >= expected:
                settled = self._stored_points()
                if len(settled) == len(points):
                    return settled
                points = settled
            if len(points) != last_count:
                last_count, last_change = len(points), time.time()
            elif time.time() - last_change > 5.0:
                return points  # no growth: whatever was lost stays lost
            time.sleep(0.05)
        return self._stored_points()

    def _reconcile(self, sends: list[tuple[float, int]], points: list[dict]) -> dict:
        scale = MODEL_WEIGHT if self.cfg.pipeline == "ml" else 1.0
        first_seen: dict[float, int] = {}
        duplicates = 0
        for point in points:
            value = point["value"]
            if value in first_seen:
                duplicates += 1
                first_seen[value] = min(first_seen[value], point["ts"])
            else:
                first_seen[value] = point["ts"]
        latencies_ms = []
        lost = 0
        for value, send_ns in sends:
            stored_ts = first_seen.get(value * scale)
            if stored_ts is None:
                lost += 1
            else:
                latencies_ms.append((stored_ts - send_ns) / 1e6)
        stored_ts_sorted = sorted(p["ts"] for p in points)
        gaps = [
            (b - a) / 1e9 for a, b in zip(stored_ts_sorted, stored_ts_sorted[1:])
        ]
        # storage-side service rate: points per second over the stored span,
        # which keeps the figure comparable across very different run lengths
        span_s = (stored_ts_sorted[-1] - stored_ts_sorted[0]) / 1e9 if gaps else 0.0
        throughput = len(points) / span_s if span_s > 0 else 0.0
        return {
            "sent": len(sends),
            "stored": len(sends) - lost,
            "lost": lost,
            "duplicates": duplicates,
            "originators": sorted({p["tags"].get("originator", "") for p in points}),
            "latency_ms": {
                "mean": statistics.fmean(latencies_ms) if latencies_ms else 0.0,
                "p50": percentile(latencies_ms, 0.50),
                "p95": percentile(latencies_ms, 0.95),
                "samples": len(latencies_ms),
            },
            "throughput_msg_s": throughput,
            "max_stored_gap_s": max(gaps) if gaps else 0.0,
        }


# ---------------------------------------------------------------------------
# Flows


def _run_scenario(cfg: ScenarioConfig, work_dir: str | Path) -> dict:
    work_dir = Path(work_dir)
    reps = []
    for r in range(cfg.repetitions):
        rep = _Repetition(cfg, work_dir / f"rep{r:02d}")
        try:
            reps.append(rep.run())
        finally:
            rep.close()
    pooled_lat = [rep["latency_ms"]["mean"] for rep in reps]
    report = {
        "scenario": cfg.to_json(),
        "sent": sum(r["sent"] for r in reps),
        "stored": sum(r["stored"] for r in reps),
        "lost": sum(r["lost"] for r in reps),
        "duplicates": sum(r["duplicates"] for r in reps),
        "originators": sorted({o for r in reps for o in r["originators"]}),
        "latency_ms": {
            "mean": statistics.fmean(pooled_lat) if pooled_lat else 0.0,
            "p50": percentile([r["latency_ms"]["p50"] for r in reps], 0.5),
            "p95": percentile([r["latency_ms"]["p95"] for r in reps], 0.5),
        },
        "throughput_msg_s": statistics.fmean([r["throughput_msg_s"] for r in reps]),
        "per_repetition": reps,
    }
    return report


def run_core_flow(cfg: ScenarioConfig, work_dir: str | Path) -> dict:
    if cfg.pipeline != "core":
        raise ConfigError("run_core_flow needs a core-pipeline scenario")
    return _run_scenario(cfg, work_dir)


def run_ml_flow(cfg: ScenarioConfig, work_dir: str | Path) -> dict:
    if cfg.pipeline != "ml":
        raise ConfigError("run_ml_flow needs an ml-pipeline scenario")
    return _run_scenario(cfg, work_dir)


def run_fault_injection(cfg: ScenarioConfig, work_dir: str | Path) -> dict:
    """Repetitions of cfg with its fault plan; recovery reported per target."""
    if not cfg.fault_plan:
        raise ConfigError("fault injection needs a fault_plan")
    report = _run_scenario(cfg, work_dir)
    by_target: dict[str, list[float]] = {}
    for rep in report["per_repetition"]:
        for event in rep.get("fault_events", []):
            by_target.setdefault(event["target"], []).append(rep["max_stored_gap_s"])
    report["recovery_s"] = {
        target: {
            "per_run": gaps,
            "mean": statistics.fmean(gaps),
            "max": max(gaps),
        }
        for target, gaps in by_target.items()
    }
    return report


def run_named_scenario(kind: str, data: dict, work_dir: str | Path) -> dict:
    cfg = ScenarioConfig.from_json(data)
    if kind == "core":
        return run_core_flow(cfg, work_dir)
    if kind == "ml":
        return run_ml_flow(cfg, work_dir)
    if kind == "faults":
        return run_fault_injection(cfg, work_dir)
    raise ConfigError(f"unknown bench kind {kind!r}")
