"""Time-series store and the event-consuming sink that feeds it.

Points are (thing, feature, property, timestamp, value, tags) with an
originator tag saying where the value came from (device gateway, ML
route, admin). Storage is one append-only framed file per series plus an
in-memory index rebuilt on open. The sink consumes twin change events
from the bus, decomposes each event value into its feature-property
leaves, writes every non-null leaf, and only then commits its offset, so
a crash never loses a consumed event.
"""

from __future__ import annotations

import json
import threading
from bisect import insort
from pathlib import Path
from urllib.parse import quote, unquote

from .bus import Bus
from .errors import Unavailable
from .metrics import Metrics
from .model import Envelope, feature_leaves, iso_to_ns, now_ns
from .storage import append_record, open_for_append, scan_records

SINK_GROUP = "ts-sink"


def series_key(thing: str, feature: str, prop: str) -> str:
    return f"{thing}~{feature}~{prop}"


def split_series_key(key: str) -> tuple[str, str, str]:
    thing, feature, prop = key.split("~", 2)
    return thing, feature, prop


class TimeSeriesStore:
    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self._lock = threading.RLock()
        self._crashed = False
        self._series: dict[str, list[dict]] = {}
        self._seen: dict[str, set[tuple[int, str]]] = {}
        self._files: dict[str, object] = {}
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._load()

    def _load(self) -> None:
        for path in sorted(self.data_dir.glob("*.log")):
            key = unquote(path.stem)
            points: list[dict] = []
            records, valid = scan_records(path)
            for raw in records:
                points.append(json.loads(raw.decode("utf-8")))
            points.sort(key=lambda p: p["ts"])
            self._series[key] = points
            self._seen[key] = {(p["ts"], p["tags"].get("originator", "")) for p in points}
            self._files[key] = open_for_append(path, valid)

    def crash(self) -> None:
        with self._lock:
            self._crashed = True
            for fh in self._files.values():
                fh.close()
            self._files.clear()
            self._series.clear()
            self._seen.clear()

    def restart(self) -> None:
        with self._lock:
            if self._crashed:
                self._crashed = False
                self._load()

    def close(self) -> None:
        self.crash()

    def _check(self) -> None:
        if self._crashed:
            raise Unavailable("timeseries store is down")

    def insert(
        self,
        thing: str,
        feature: str,
        prop: str,
        ts_ns: int,
        value,
        tags: dict[str, str],
    ) -> bool:
        """Durably add one point; returns False for a same-key duplicate."""
        key = series_key(thing, feature, prop)
        point = {"ts": ts_ns, "v": value, "tags": dict(tags)}
        with self._lock:
            self._check()
            identity = (ts_ns, tags.get("originator", ""))
            seen = self._seen.setdefault(key, set())
            if identity in seen:
                return False
            fh = self._files.get(key)
            if fh is None:
                path = self.data_dir / (quote(key, safe="") + ".log")
                fh = open_for_append(path, 0)
                self._files[key] = fh
                self._series.setdefault(key, [])
            append_record(fh, json.dumps(point).encode("utf-8"))
            insort(self._series[key], point, key=lambda p: p["ts"])
            seen.add(identity)
            return True

    def series(self) -> list[str]:
        with self._lock:
            self._check()
            return sorted(self._series)

    def query(
        self,
        thing: str | None = None,
        feature: str | None = None,
        prop: str | None = None,
        from_ns: int | None = None,
        to_ns: int | None = None,
        originator: str | None = None,
    ) -> list[dict]:
        """Matching points ascending by timestamp; bounds are inclusive."""
        with self._lock:
            self._check()
            out: list[dict] = []
            for key, points in self._series.items():
                k_thing, k_feature, k_prop = split_series_key(key)
                if thing is not None and k_thing != thing:
                    continue
                if feature is not None and k_feature != feature:
                    continue
                if prop is not None and k_prop != prop:
                    continue
                for p in points:
                    if from_ns is not None and p["ts"] < from_ns:
                        continue
                    if to_ns is not None and p["ts"] > to_ns:
                        continue
                    if originator is not None and p["tags"].get("originator") != originator:
                        continue
                    out.append(
                        {
                            "thing": k_thing,
                            "feature": k_feature,
                            "property": k_prop,
                            "ts": p["ts"],
                            "value": p["v"],
                            "tags": dict(p["tags"]),
                        }
                    )
            out.sort(key=lambda p: p["ts"])
            return out

    def count(self, **kwargs) -> int:
        return len(self.query(**kwargs))


def export_csv(points: list[dict]) -> str:
    lines = ["thing,feature,property,ts,value,originator"]
    for p in points:
        lines.append(
            f"{p['thing']},{p['feature']},{p['property']},{p['ts']},"
            f"{json.dumps(p['value'])},{p['tags'].get('originator', '')}"
        )
    return "\n".join(lines) + "\n"


def export_json_lines(points: list[dict]) -> str:
    return "".join(json.dumps(p) + "\n" for p in points)


class TimeSeriesService:
    """Store plus the sink loop consuming a twin-event topic."""

    def __init__(
        self,
        data_dir: str | Path,
        bus: Bus,
        topic: str = "twin-events",
        metrics: Metrics | None = None,
    ):
        self.store = TimeSeriesStore(data_dir)
        self.bus = bus
        self.topic = topic
        self.metrics = metrics or Metrics()
        self._thread: threading.Thread | None = None
        self._stop = threading.Event()

    # -- lifecycle ------------------------------------------------------------

    def start(self) -> None:
        if self._thread is None or not self._thread.is_alive():
            self._stop.clear()
            self._thread = threading.Thread(target=self._run, name="ts-sink", daemon=True)
            self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
            self._thread = None

    def crash(self) -> None:
        self.stop()
        self.store.crash()

    def restart(self) -> None:
        self.store.restart()
        self.start()

    # -- sink -------------------------------------------------------------------

    def _run(self) -> None:
        consumer = None
        while not self._stop.is_set():
            try:
                if consumer is None:
                    consumer = self.bus.consumer(self.topic, SINK_GROUP)
                msg = consumer.poll_one(timeout=0.25)
                if msg is None:
                    continue
                self._apply(msg)
                consumer.commit(msg.offset)
            except Unavailable:
                consumer = None
                self._stop.wait(0.2)

    def _apply(self, msg) -> None:
        try:
            envelope = Envelope.from_bytes(msg.payload)
            action = envelope.action()
            if action not in ("create", "modify"):
                return
            leaves = feature_leaves(envelope.path, envelope.value)
        except Exception:
            self.metrics.inc("timeseries.malformed_events")
            return
        ts_header = envelope.headers.get("x-ts")
        try:
            ts = iso_to_ns(ts_header) if ts_header else now_ns()
        except ValueError:
            self.metrics.inc("timeseries.malformed_events")
            return
        originator = envelope.headers.get("ditto-originator", "unknown")
        thing = envelope.thing_id().render()
        for feature, prop, value in leaves:
            if value is None:
                continue
            if self.store.insert(thing, feature, prop, ts, value, {"originator": originator}):
                self.metrics.inc("timeseries.points_stored")
            else:
                self.metrics.inc("timeseries.duplicate_points")

    # -- store passthrough ----------------------------------------------------------

    def query(self, **kwargs) -> list[dict]:
        return self.store.query(**kwargs)

    def count(self, **kwargs) -> int:
        return self.store.count(**kwargs)
