"""Time-series store and sink: decomposition, tags, queries, durability."""

import json
import time

import pytest

from twinforge.bus import Bus
from twinforge.model import Envelope, ns_to_iso
from twinforge.timeseries import (
    TimeSeriesService,
    TimeSeriesStore,
    export_csv,
    export_json_lines,
)


@pytest.fixture
def store(tmp_path):
    s = TimeSeriesStore(tmp_path / "ts")
    yield s
    s.close()


GW_TAG = {"originator": "gateway"}


class TestStore:
    def test_range_query_inclusive(self, store):
        for t in (1, 2, 3):
            store.insert("a:b", "f", "value", t, t * 10, GW_TAG)
        points = store.query(thing="a:b", feature="f", prop="value", from_ns=2, to_ns=3)
        assert [p["value"] for p in points] == [20, 30]
        assert store.query(thing="a:b", from_ns=100, to_ns=200) == []

    def test_results_ascending_even_for_late_arrivals(self, store):
        for t in (5, 1, 3, 2, 4):
            store.insert("a:b", "f", "value", t, t, GW_TAG)
        assert [p["ts"] for p in store.query(thing="a:b")] == [1, 2, 3, 4, 5]

    def test_originator_filter_matches_linear_scan(self, store):
        inserted = []
        for i in range(30):
            orig = "gateway" if i % 3 else "ml-route"
            store.insert("a:b", "f", "value", i, i, {"originator": orig})
            inserted.append((i, orig))
        got = store.query(thing="a:b", originator="gateway")
        expect = [(t, o) for t, o in inserted if o == "gateway"]  # plain filter oracle
        assert [(p["ts"], p["tags"]["originator"]) for p in got] == expect

    def test_duplicate_point_identity_dropped(self, store):
        assert store.insert("a:b", "f", "value", 7, 1.0, GW_TAG) is True
        assert store.insert("a:b", "f", "value", 7, 1.0, GW_TAG) is False
        assert store.insert("a:b", "f", "value", 7, 1.0, {"originator": "ml"}) is True
        assert store.count(thing="a:b") == 2

    def test_points_survive_restart(self, store):
        for t in (1, 2):
            store.insert("a:b", "last_measured", "value", t, -40.5 - t, GW_TAG)
        store.crash()
        store.restart()
        points = store.query(thing="a:b")
        assert [p["value"] for p in points] == [-41.5, -42.5]
        assert store.series() == ["a:b~last_measured~value"]

    def test_exports(self, store):
        store.insert("a:b", "f", "value", 5, 1.5, GW_TAG)
        csv = export_csv(store.query())
        assert csv.splitlines()[0] == "thing,feature,property,ts,value,originator"
        assert csv.splitlines()[1] == "a:b,f,value,5,1.5,gateway"
        lines = export_json_lines(store.query())
        assert json.loads(lines.splitlines()[0])["value"] == 1.5


def modify_event(thing="test/DHT22", path="/features", value=None, headers=None):
    return Envelope(
        topic=f"{thing}/things/twin/events/modify",
        path=path,
        value=value,
        headers=headers or {},
    ).to_bytes()


class TestSink:
    @pytest.fixture
    def svc(self, tmp_path):
        bus = Bus(tmp_path / "bus")
        service = TimeSeriesService(tmp_path / "ts", bus)
        service.start()
        yield service
        service.stop()
        bus.close()

    def wait_for(self, svc, n, timeout=5.0):
        deadline = time.time() + timeout
        while time.time() < deadline:
            if svc.count() >= n:
                return
            time.sleep(0.02)
        raise AssertionError(f"expected {n} points, have {svc.count()}")

    def test_two_feature_event_yields_two_points(self, svc):
        value = {
            "temperature": {"properties": {"value": 2}},
            "humidity": {"properties": {"value": 5}},
        }
        svc.bus.publish(
            "twin-events", {}, modify_event(value=value, headers={"ditto-originator": "gateway"})
        )
        self.wait_for(svc, 2)
        got = {(p["feature"], p["value"]) for p in svc.query(thing="test:DHT22")}
        assert got == {("temperature", 2), ("humidity", 5)}
        assert all(p["tags"]["originator"] == "gateway" for p in svc.query())

    def test_originator_header_becomes_tag(self, svc):
        svc.bus.publish(
            "twin-events",
            {},
            modify_event(
                path="/features/t/properties/value",
                value=1.0,
                headers={"ditto-originator": "ml-bridge"},
            ),
        )
        self.wait_for(svc, 1)
        assert svc.query()[0]["tags"]["originator"] == "ml-bridge"

    def test_x_ts_header_sets_point_time(self, svc):
        ts = 1704153600 * 10**9
        svc.bus.publish(
            "twin-events",
            {},
            modify_event(
                path="/features/t/properties/value",
                value=3.5,
                headers={"x-ts": ns_to_iso(ts), "ditto-originator": "gateway"},
            ),
        )
        self.wait_for(svc, 1)
        assert svc.query()[0]["ts"] == ts

    def test_malformed_events_counted_and_skipped(self, svc):
        svc.bus.publish("twin-events", {}, b"garbage not an envelope")
        svc.bus.publish(
            "twin-events",
            {},
            modify_event(path="/features/t/properties/value", value=1.0,
                         headers={"ditto-originator": "gateway"}),
        )
        self.wait_for(svc, 1)
        assert svc.metrics.get("timeseries.malformed_events") == 1
        assert svc.count() == 1

    def test_null_leaves_and_delete_events_store_nothing(self, svc):
        svc.bus.publish(
            "twin-events", {},
            modify_event(value={"t": {"properties": {"value": None}}}),
        )
        svc.bus.publish(
            "twin-events", {},
            Envelope(topic="test/DHT22/things/twin/events/delete", path="/", value=None).to_bytes(),
        )
        svc.bus.publish(
            "twin-events", {},
            modify_event(path="/features/t/properties/value", value=9),
        )
        self.wait_for(svc, 1)
        assert svc.count() == 1
        assert svc.query()[0]["value"] == 9

    def test_restart_resumes_from_committed_offset_without_loss(self, svc):
        for i in range(10):
            svc.bus.publish(
                "twin-events", {},
                modify_event(path="/features/t/properties/value", value=float(i),
                             headers={"ditto-originator": "gateway"}),
            )
        self.wait_for(svc, 3, timeout=5.0)  # mid-stream
        svc.crash()
        for i in range(10, 15):
            svc.bus.publish(
                "twin-events", {},
                modify_event(path="/features/t/properties/value", value=float(i),
                             headers={"ditto-originator": "gateway"}),
            )
        svc.restart()
        self.wait_for(svc, 15)
        values = {p["value"] for p in svc.query(thing="test:DHT22")}
        assert values == {float(i) for i in range(15)}  # nothing lost
