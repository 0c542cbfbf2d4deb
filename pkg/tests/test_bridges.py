"""Bridges: template substitution, future copies, forwarder and route streams."""

import json
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twinforge.bridges import (
    ForwarderService,
    RouteService,
    copy_future,
    fill_template,
    predicted_id,
    substitute,
    template_max_index,
)
from twinforge.bus import Bus
from twinforge.codec import encode_values
from twinforge.errors import (
    DuplicateId,
    IndexOutOfRange,
    InvalidResult,
    InvalidSchema,
    NotFound,
)
from twinforge.gateway import telemetry_topic
from twinforge.model import Envelope, parse_thing_id
from twinforge.registry import Registry

DHT22_TEMPLATE = {
    "topic": "test/DHT22/things/twin/commands/modify",
    "path": "/features",
    "value": {
        "temperature": {"properties": {"value": "{0}"}},
        "humidity": {"properties": {"value": "{1}"}},
    },
}


def wait_until(pred, timeout=5.0, step=0.02):
    deadline = time.time() + timeout
    while time.time() < deadline:
        if pred():
            return True
        time.sleep(step)
    return pred()


def key_paths(node, prefix=()):
    """Every (path, key) pair in a JSON structure; the substitution oracle."""
    found = set()
    if isinstance(node, dict):
        for key, val in node.items():
            found.add(prefix + (key,))
            found |= key_paths(val, prefix + (key,))
    elif isinstance(node, list):
        for i, val in enumerate(node):
            found |= key_paths(val, prefix + (i,))
    return found


class TestSubstitute:
    def test_two_placeholder_template(self):
        env = substitute(DHT22_TEMPLATE, [1.0, 2.0])
        assert env.value["temperature"]["properties"]["value"] == 1.0
        assert env.value["humidity"]["properties"]["value"] == 2.0
        assert isinstance(env.value["temperature"]["properties"]["value"], float)

    def test_no_placeholders_returned_unchanged(self):
        template = {
            "topic": "test/DHT22/things/twin/commands/modify",
            "path": "/features/temperature/properties/value",
            "value": 21.5,
        }
        env = substitute(template, [])
        assert env.to_json() == template

    def test_index_out_of_range(self):
        with pytest.raises(IndexOutOfRange):
            substitute(
                dict(DHT22_TEMPLATE, value={"t": {"properties": {"value": "{5}"}}}),
                [1.0, 2.0],
            )

    def test_embedded_placeholder_is_textual(self):
        filled = fill_template({"note": "pred={0}"}, [1.5])
        assert filled == {"note": "pred=1.5"}

    def test_extra_outputs_ignored(self):
        template = dict(DHT22_TEMPLATE, value={"t": {"properties": {"value": "{0}"}}})
        env = substitute(template, [7.0, 8.0, 9.0])
        assert env.value == {"t": {"properties": {"value": 7.0}}}

    def test_invalid_result_when_filled_envelope_is_bad(self):
        with pytest.raises(InvalidResult):
            substitute({"topic": "not-a-topic", "path": "/", "value": None}, [])

    def test_max_index(self):
        assert template_max_index(DHT22_TEMPLATE) == 1
        assert template_max_index({"a": 1}) == -1
        assert template_max_index({"a": ["x{4}y", {"b": "{2}"}]}) == 4


KEYS = st.text(alphabet="abcdefgh", min_size=1, max_size=4)
SCALARS = st.one_of(
    st.integers(-5, 5),
    st.booleans(),
    st.none(),
    st.text(alphabet="xy{}0123", max_size=6),
)
JSON_VALUES = st.recursive(
    SCALARS,
    lambda inner: st.one_of(
        st.lists(inner, max_size=3), st.dictionaries(KEYS, inner, max_size=3)
    ),
    max_leaves=12,
)
TEMPLATES = st.dictionaries(KEYS, JSON_VALUES, min_size=1, max_size=4)


@given(TEMPLATES)
@settings(max_examples=200)
def test_fill_preserves_key_structure(template):
    outputs = [float(i) for i in range(template_max_index(template) + 1)]
    filled = fill_template(template, outputs)
    assert key_paths(filled) == key_paths(template)


@given(TEMPLATES)
@settings(max_examples=100)
def test_fill_leaves_non_strings_verbatim(template):
    outputs = [float(i) for i in range(template_max_index(template) + 1)]
    filled = fill_template(template, outputs)

    def pairs(a, b):
        if isinstance(a, dict):
            for k in a:
                yield from pairs(a[k], b[k])
        elif isinstance(a, list):
            for x, y in zip(a, b):
                yield from pairs(x, y)
        else:
            yield a, b

    for before, after in pairs(template, filled):
        if not isinstance(before, str):
            assert after == before


@pytest.fixture
def bus(tmp_path):
    b = Bus(tmp_path / "bus")
    yield b
    b.close()


@pytest.fixture
def registry(tmp_path, bus):
    reg = Registry(tmp_path / "registry", bus)
    reg.create_policy(
        "basic",
        {
            "admin": {"read": True, "write": True},
            "gateway": {"read": True, "write": True},
            "route:rt1": {"read": True, "write": True},
        },
    )
    reg.create_twin(
        "test:DHT22",
        "basic",
        attributes={"model": "DHT22"},
        features={
            "temperature": {"properties": {"value": None}},
            "humidity": {"properties": {"value": None}},
        },
    )
    yield reg
    reg.close()


class TestCopyFuture:
    def envelope(self, t, h):
        return substitute(DHT22_TEMPLATE, [t, h])

    def test_first_prediction_creates_copy(self, registry):
        copy_id = copy_future(registry, self.envelope(1.0, 2.0), 30.0, "route:rt1")
        assert copy_id.render() == "test:DHT22_predicted"
        copy = registry.get("test:DHT22_predicted")
        assert copy["attributes"]["predicted_horizon_s"] == 30.0
        assert copy["attributes"]["predicted_from"] == "test:DHT22"
        assert copy["attributes"]["model"] == "DHT22"
        assert copy["features"]["temperature"]["properties"]["value"] == 1.0

    def test_source_twin_untouched(self, registry):
        before = registry.get("test:DHT22")
        copy_future(registry, self.envelope(3.0, 4.0), 30.0, "route:rt1")
        assert registry.get("test:DHT22") == before

    def test_second_prediction_reuses_copy(self, registry):
        copy_future(registry, self.envelope(1.0, 2.0), 30.0, "route:rt1")
        twins_after_first = set(registry.list_things())
        copy_future(registry, self.envelope(5.0, 6.0), 30.0, "route:rt1")
        assert set(registry.list_things()) == twins_after_first
        copy = registry.get("test:DHT22_predicted")
        assert copy["features"]["temperature"]["properties"]["value"] == 5.0

    def test_copy_is_not_linked_into_the_forest(self, registry):
        copy_future(registry, self.envelope(1.0, 2.0), 30.0, "route:rt1")
        copy = registry.get("test:DHT22_predicted")
        assert copy["attributes"]["parent"] is None
        assert copy["attributes"]["children"] == {}

    def test_missing_source_raises(self, registry):
        env = Envelope(
            topic="test/ghost/things/twin/commands/modify",
            path="/features/t/properties/value",
            value=1.0,
        )
        with pytest.raises(NotFound):
            copy_future(registry, env, 30.0, "route:rt1")

    def test_predicted_id_helper(self):
        assert predicted_id(parse_thing_id("a:b")).render() == "a:b_predicted"


FWD_CFG = {
    "tenantId": "acme",
    "devices": [
        {
            "deviceId": "acme:dev1",
            "mlInputTopic": "ml-in",
            "required_values": [{"name": "temperature", "format": "float64"}],
        }
    ],
    "active": True,
}


def telemetry_envelope(device="acme:dev1", temp=3.0):
    ns, name = device.split(":")
    return Envelope(
        topic=f"{ns}/{name}/things/twin/commands/modify",
        path="/features/temperature/properties/value",
        value=temp,
    )


def publish_telemetry(bus, tenant, envelope, device=None):
    headers = {"device-id": device or envelope.thing_id().render()}
    return bus.publish(telemetry_topic(tenant), headers, envelope.to_bytes())


@pytest.fixture
def forwarders(tmp_path, bus):
    svc = ForwarderService(tmp_path / "fwd", bus)
    svc.start()
    yield svc
    svc.stop()


class TestForwarderAdmin:
    def test_create_get_delete(self, forwarders):
        forwarders.create_forwarder(FWD_CFG)
        assert forwarders.get_forwarder("acme")["tenantId"] == "acme"
        assert len(forwarders.list_forwarders()) == 1
        forwarders.delete_forwarder("acme")
        with pytest.raises(NotFound):
            forwarders.get_forwarder("acme")

    def test_duplicate_rejected(self, forwarders):
        forwarders.create_forwarder(FWD_CFG)
        with pytest.raises(DuplicateId):
            forwarders.create_forwarder(FWD_CFG)

    def test_validation(self, forwarders):
        with pytest.raises(InvalidSchema):
            forwarders.create_forwarder({"tenantId": "x", "devices": []})
        with pytest.raises(InvalidSchema):
            forwarders.create_forwarder({"tenantId": "x", "devices": [{"deviceId": "d"}]})

    def test_last_value_never_stored(self, forwarders):
        cfg = json.loads(json.dumps(FWD_CFG))
        cfg["devices"][0]["required_values"][0]["last_value"] = 9.0
        stored = forwarders.create_forwarder(cfg)
        assert "last_value" not in stored["devices"][0]["required_values"][0]


class TestForwarderStream:
    def test_forwards_single_value(self, bus, forwarders):
        forwarders.create_forwarder(FWD_CFG)
        time.sleep(0.1)  # loop must join before publish to see the message
        publish_telemetry(bus, "acme", telemetry_envelope(temp=3.0))
        assert wait_until(lambda: bus.end_offset("ml-in") == 1)
        [msg] = bus.read("ml-in", 0)
        assert msg.payload == encode_values(["float64"], [3.0])
        assert msg.headers["device-id"] == "acme:dev1"

    def test_inactive_forwarder_sends_nothing(self, bus, forwarders):
        forwarders.create_forwarder(dict(FWD_CFG, active=False))
        publish_telemetry(bus, "acme", telemetry_envelope(temp=3.0))
        time.sleep(0.3)
        bus.create_topic("ml-in")
        assert bus.end_offset("ml-in") == 0

    def test_unlisted_device_ignored(self, bus, forwarders):
        forwarders.create_forwarder(FWD_CFG)
        time.sleep(0.1)
        publish_telemetry(bus, "acme", telemetry_envelope(device="acme:other"))
        publish_telemetry(bus, "acme", telemetry_envelope(temp=1.0))
        assert wait_until(lambda: bus.end_offset("ml-in") == 1)

    def test_order_preserved_over_many_messages(self, bus, forwarders):
        forwarders.create_forwarder(FWD_CFG)
        time.sleep(0.1)
        values = [float(i) for i in range(100)]
        for v in values:
            publish_telemetry(bus, "acme", telemetry_envelope(temp=v))
        assert wait_until(lambda: bus.end_offset("ml-in") == 100)
        got = [m.payload for m in bus.read("ml-in", 0, max_n=100)]
        assert got == [encode_values(["float64"], [v]) for v in values]

    def test_missing_field_dead_lettered_stream_continues(self, bus, forwarders):
        forwarders.create_forwarder(FWD_CFG)
        time.sleep(0.1)
        bad = Envelope(
            topic="acme/dev1/things/twin/commands/modify",
            path="/features/humidity/properties/value",
            value=50.0,
        )
        publish_telemetry(bus, "acme", bad, device="acme:dev1")
        publish_telemetry(bus, "acme", telemetry_envelope(temp=4.0))
        assert wait_until(lambda: bus.end_offset("ml-in") == 1)
        assert forwarders.metrics.get("bridges.forward_dead_lettered") == 1
        [dead] = bus.read("dead-letter", 0)
        assert "temperature" in dead.headers["reason"]


ROUTE_CFG = {
    "routeId": "rt1",
    "sourceTopic": "ml-out",
    "targetQueue": "predictions",
    "active": True,
    "ditto_message": DHT22_TEMPLATE,
    "mode": "update",
}


@pytest.fixture
def routes(tmp_path, bus, registry):
    svc = RouteService(tmp_path / "routes", bus, registry)
    svc.start()
    yield svc
    svc.stop()


def temp_of(registry, thing="test:DHT22"):
    return registry.get(thing)["features"]["temperature"]["properties"]["value"]


class TestRouteAdmin:
    def test_validation(self, routes):
        with pytest.raises(InvalidSchema):
            routes.create_route(dict(ROUTE_CFG, mode="teleport"))
        with pytest.raises(InvalidSchema):
            routes.create_route(dict(ROUTE_CFG, mode="future_copy"))  # no horizon
        with pytest.raises(InvalidSchema):
            routes.create_route(dict(ROUTE_CFG, ditto_message={"topic": "bad"}))
        with pytest.raises(InvalidSchema):
            routes.create_route(dict(ROUTE_CFG, horizon_s=5))

    def test_create_duplicate_delete(self, routes):
        routes.create_route(ROUTE_CFG)
        with pytest.raises(DuplicateId):
            routes.create_route(ROUTE_CFG)
        assert routes.get_route("rt1")["principal"] == "route:rt1"
        routes.delete_route("rt1")
        with pytest.raises(NotFound):
            routes.get_route("rt1")


class TestRouteStream:
    def publish_outputs(self, bus, values):
        bus.publish("ml-out", {}, json.dumps(values).encode())

    def test_update_mode_applies_to_twin(self, bus, registry, routes):
        routes.create_route(ROUTE_CFG)
        time.sleep(0.1)
        self.publish_outputs(bus, [1.5, 2.5])
        assert wait_until(lambda: temp_of(registry) == 1.5)
        assert registry.get("test:DHT22")["features"]["humidity"]["properties"]["value"] == 2.5

    def test_event_originator_is_route_principal(self, bus, registry, routes):
        routes.create_route(ROUTE_CFG)
        time.sleep(0.1)
        mark = bus.end_offset("twin-events")
        self.publish_outputs(bus, [1.0, 2.0])
        assert wait_until(lambda: bus.end_offset("twin-events") > mark)
        [event] = bus.read("twin-events", mark)
        assert event.headers["ditto-originator"] == "route:rt1"

    def test_future_copy_leaves_source_alone(self, bus, registry, routes):
        routes.create_route(dict(ROUTE_CFG, mode="future_copy", horizon_s=60.0))
        time.sleep(0.1)
        before = registry.get("test:DHT22")
        self.publish_outputs(bus, [9.0, 8.0])
        assert wait_until(lambda: registry.exists("test:DHT22_predicted"))
        assert wait_until(lambda: temp_of(registry, "test:DHT22_predicted") == 9.0)
        assert registry.get("test:DHT22") == before
        predicted = [t for t in registry.list_things() if t.endswith("_predicted")]
        assert predicted == ["test:DHT22_predicted"]

    def test_deactivate_stops_applies_and_retains_backlog(self, bus, registry, routes):
        routes.create_route(ROUTE_CFG)
        time.sleep(0.1)
        self.publish_outputs(bus, [1.0, 1.0])
        assert wait_until(lambda: temp_of(registry) == 1.0)
        routes.deactivate_route("rt1")
        time.sleep(0.2)
        self.publish_outputs(bus, [2.0, 2.0])
        time.sleep(0.3)
        assert temp_of(registry) == 1.0
        routes.activate_route("rt1")
        assert wait_until(lambda: temp_of(registry) == 2.0)

    def test_unknown_twin_dead_letters_and_queue_drains(self, bus, registry, routes):
        template = json.loads(json.dumps(DHT22_TEMPLATE))
        template["topic"] = "test/ghost/things/twin/commands/modify"
        routes.create_route(dict(ROUTE_CFG, ditto_message=template))
        time.sleep(0.1)
        self.publish_outputs(bus, [1.0, 2.0])
        assert wait_until(lambda: routes.metrics.get("bridges.apply_dead_lettered") == 1)
        assert bus.queue_depth("predictions") == 0

    def test_bad_output_payload_dead_lettered(self, bus, registry, routes):
        routes.create_route(ROUTE_CFG)
        time.sleep(0.1)
        bus.publish("ml-out", {}, b"not json")
        self.publish_outputs(bus, [3.0, 3.0])
        assert wait_until(lambda: temp_of(registry) == 3.0)
        assert routes.metrics.get("bridges.route_dead_lettered") == 1

    def test_restart_resumes_without_loss(self, bus, registry, routes):
        routes.create_route(ROUTE_CFG)
        time.sleep(0.1)
        self.publish_outputs(bus, [1.0, 1.0])
        assert wait_until(lambda: temp_of(registry) == 1.0)
        routes.crash()
        self.publish_outputs(bus, [2.0, 2.0])
        self.publish_outputs(bus, [3.0, 3.0])
        routes.restart()
        assert wait_until(lambda: temp_of(registry) == 3.0)
