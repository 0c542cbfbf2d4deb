"""HTTP surface tests: resource CRUD, intake auth, exports, error mapping."""

import base64
import json
import re
import time

import pytest
from fastapi.routing import APIRoute
from fastapi.testclient import TestClient

from twinforge.http_api import CTL_COMMANDS, build_app
from twinforge.platform import Platform

RW = {"read": True, "write": True}


def auth_header(username: str, password: str) -> dict:
    token = base64.b64encode(f"{username}:{password}".encode()).decode()
    return {"Authorization": f"Basic {token}"}


@pytest.fixture
def platform(tmp_path):
    p = Platform(tmp_path / "data")
    p.start()
    yield p
    p.close()


@pytest.fixture
def client(platform):
    return TestClient(build_app(platform))


def seed_core(client):
    assert client.post(
        "/api/policies", json={"policyId": "plant:policy", "entries": {"admin": RW, "gateway": RW}}
    ).status_code == 201
    assert client.post(
        "/api/things",
        json={
            "thingId": "plant:unit1",
            "policyId": "plant:policy",
            "features": {"last_measured": {"properties": {"value": None}}},
        },
    ).status_code == 201
    assert client.post(
        "/api/tenants",
        json={
            "tenantId": "plant",
            "mapping": [{"source": "value", "target": "/features/last_measured/properties/value"}],
        },
    ).status_code == 201
    assert client.post(
        "/api/tenants/plant/devices",
        json={"deviceId": "plant:unit1", "username": "u1", "password": "pw1"},
    ).status_code == 201


class TestMeta:
    def test_health(self, client):
        body = client.get("/health").json()
        assert body["status"] == "ok"
        assert "bus" in body["services"]

    def test_metrics_exposition(self, client):
        res = client.get("/metrics")
        assert res.status_code == 200
        assert res.headers["content-type"].startswith("text/plain")

    def test_cors_headers_for_browser_clients(self, client):
        res = client.get("/health", headers={"Origin": "http://localhost:5173"})
        assert res.headers["access-control-allow-origin"] == "*"


class TestThings:
    def test_crud_cycle(self, client):
        seed_core(client)
        record = client.get("/api/things/plant:unit1").json()
        assert record["thingId"] == "plant:unit1"
        assert "isType" not in record["attributes"]

        res = client.put(
            "/api/things/plant:unit1",
            json={"path": "/features/last_measured/properties/value", "value": 5.5},
        )
        assert res.status_code == 200
        assert res.json()["features"]["last_measured"]["properties"]["value"] == 5.5

        res = client.delete("/api/things/plant:unit1")
        assert res.json()["deleted"] == ["plant:unit1"]
        assert client.get("/api/things/plant:unit1").status_code == 404

    def test_list_filters_kind(self, client):
        seed_core(client)
        client.post(
            "/api/types", json={"thingId": "plant:unitType", "policyId": "plant:policy"}
        )
        twins = [t["thingId"] for t in client.get("/api/things", params={"kind": "twin"}).json()]
        types = [t["thingId"] for t in client.get("/api/types").json()]
        assert twins == ["plant:unit1"]
        assert types == ["plant:unitType"]
        assert client.get("/api/things", params={"kind": "everything"}).status_code == 400

    def test_children_parents_and_link(self, client):
        seed_core(client)
        client.post("/api/things", json={"thingId": "plant:unit2", "policyId": "plant:policy"})
        res = client.put("/api/things/plant:unit1/children/plant:unit2")
        assert res.status_code == 200
        assert client.get("/api/things/plant:unit1/children").json() == {"plant:unit2": 1}
        assert client.get("/api/things/plant:unit2/parents").json() == ["plant:unit1"]

    def test_update_needs_path(self, client):
        seed_core(client)
        assert client.put("/api/things/plant:unit1", json={"value": 3}).status_code == 400

    def test_subject_header_reaches_policy_check(self, client):
        seed_core(client)
        res = client.put(
            "/api/things/plant:unit1",
            json={"path": "/features/last_measured/properties/value", "value": 1},
            headers={"x-subject": "intruder"},
        )
        assert res.status_code == 403
        assert res.json()["error"] == "Forbidden"

    def test_instantiate_from_type(self, client):
        seed_core(client)
        client.post("/api/types", json={"thingId": "plant:sensorType", "policyId": "plant:policy"})
        res = client.post(
            "/api/types/plant:sensorType/instantiate",
            json={"thingId": "plant:freshSensor", "policyId": "plant:policy"},
        )
        assert res.status_code == 201
        assert [t["thingId"] for t in res.json()] == ["plant:freshSensor"]

    def test_type_detail_rejects_twin_ids(self, client):
        seed_core(client)
        assert client.get("/api/types/plant:unit1").status_code == 404


class TestErrorMapping:
    def test_not_found(self, client):
        assert client.get("/api/things/missing:thing").status_code == 404

    def test_duplicate_conflict(self, client):
        seed_core(client)
        res = client.post(
            "/api/things", json={"thingId": "plant:unit1", "policyId": "plant:policy"}
        )
        assert res.status_code == 409
        assert res.json()["error"] == "DuplicateId"

    def test_unknown_policy_is_client_error(self, client):
        res = client.post("/api/things", json={"thingId": "plant:unitX", "policyId": "nope"})
        assert res.status_code == 400

    def test_unavailable_maps_to_503(self, client, platform):
        platform.kill("registry")
        assert client.get("/api/things").status_code == 503
        platform.revive("registry")
        assert client.get("/api/things").status_code == 200


class TestIngest:
    def test_ingest_round_trip_to_storage(self, client):
        seed_core(client)
        res = client.post(
            "/ingest/plant/plant:unit1",
            content=json.dumps({"value": 7.25}),
            headers=auth_header("u1", "pw1"),
        )
        assert res.status_code == 202
        assert res.json()["offset"] == 0
        deadline = time.time() + 10
        points = []
        while time.time() < deadline and not points:
            points = client.get("/api/ts", params={"thing": "plant:unit1"}).json()
            time.sleep(0.05)
        assert points and points[0]["value"] == 7.25
        assert points[0]["tags"]["originator"] == "gateway"

    def test_ingest_requires_basic_auth(self, client):
        seed_core(client)
        assert client.post("/ingest/plant/plant:unit1", content=b"{}").status_code == 401
        res = client.post(
            "/ingest/plant/plant:unit1",
            content=json.dumps({"value": 1}),
            headers=auth_header("u1", "wrong"),
        )
        assert res.status_code == 401


class TestTimeseriesExport:
    def put_value(self, client, value):
        client.put(
            "/api/things/plant:unit1",
            json={"path": "/features/last_measured/properties/value", "value": value},
        )

    def wait_points(self, client, n):
        deadline = time.time() + 10
        while time.time() < deadline:
            points = client.get("/api/ts").json()
            if len(points) >= n:
                return points
            time.sleep(0.05)
        raise AssertionError("timed out waiting for stored points")

    def test_csv_and_jsonl(self, client):
        seed_core(client)
        self.put_value(client, 1.5)
        self.put_value(client, 2.5)
        self.wait_points(client, 2)

        csv_res = client.get("/api/ts", params={"format": "csv"})
        assert csv_res.headers["content-type"].startswith("text/csv")
        lines = csv_res.text.strip().splitlines()
        assert lines[0] == "thing,feature,property,ts,value,originator"
        assert len(lines) == 3

        jsonl_res = client.get("/api/ts", params={"format": "jsonl"})
        parsed = [json.loads(line) for line in jsonl_res.text.strip().splitlines()]
        assert [p["value"] for p in parsed] == [1.5, 2.5]

    def test_originator_filter(self, client):
        seed_core(client)
        self.put_value(client, 3.5)
        self.wait_points(client, 1)
        assert client.get("/api/ts", params={"originator": "admin"}).json() != []
        assert client.get("/api/ts", params={"originator": "nobody"}).json() == []


class TestBusIntrospection:
    def test_topics_and_queues(self, client, platform):
        platform.bus.create_topic("demo-topic")
        platform.bus.create_queue("demo-queue")
        names = [t["name"] for t in client.get("/api/bus/topics").json()]
        assert "demo-topic" in names
        res = client.get("/api/bus/topics/demo-topic")
        assert res.json() == {"name": "demo-topic", "end_offset": 0}
        assert client.get("/api/bus/queues/demo-queue").json()["depth"] == 0
        assert client.get("/api/bus/topics/never-made").status_code == 404

    def test_topic_names_may_contain_slashes(self, client, platform):
        platform.bus.create_topic("telemetry/plant")
        assert client.get("/api/bus/topics/telemetry/plant").json()["name"] == "telemetry/plant"


class TestWatchdogAdmin:
    def test_tenant_device_lifecycle(self, client):
        res = client.post("/api/watchdog/tenants", json={"tenantId": "plant"})
        assert res.status_code == 201 and res.json()["active"] is False
        client.post(
            "/api/watchdog/tenants/plant/devices",
            json={
                "deviceId": "plant:unit1",
                "mlInputTopic": "wd-in",
                "required_values": [{"name": "last_measured", "format": "float64"}],
            },
        )
        assert len(client.get("/api/watchdog/tenants/plant/devices").json()) == 1
        client.post("/api/watchdog/tenants/plant/devices/plant:unit1/deactivate")
        assert (
            client.get("/api/watchdog/tenants/plant/devices/plant:unit1").json()["active"]
            is False
        )
        client.post("/api/watchdog/tenants/plant/activate")
        assert client.get("/api/watchdog/tenants/plant").json()["active"] is True
        client.post("/api/watchdog/tenants/plant/deactivate")
        client.delete("/api/watchdog/tenants/plant/devices/plant:unit1")
        client.delete("/api/watchdog/tenants/plant")
        assert client.get("/api/watchdog/tenants").json() == []


class TestMlAndBridges:
    def test_model_lifecycle(self, client):
        doc = {
            "modelId": "double",
            "inputTopic": "in",
            "outputTopic": "out",
            "schema": ["float64"],
            "fn": "linear",
            "params": {"weights": [2.0], "bias": 0.0},
        }
        assert client.post("/api/ml/models", json=doc).status_code == 201
        assert client.get("/api/ml/models/double").json()["fn"] == "linear"
        assert client.post("/api/ml/models", json=doc).status_code == 409
        client.delete("/api/ml/models/double")
        assert client.get("/api/ml/models").json() == []

    def test_forwarder_and_route_lifecycle(self, client):
        seed_core(client)
        fwd = {
            "tenantId": "plant",
            "devices": [
                {
                    "deviceId": "plant:unit1",
                    "mlInputTopic": "ml-in",
                    "required_values": [{"name": "last_measured", "format": "float64"}],
                }
            ],
        }
        assert client.post("/api/bridges/forwarders", json=fwd).status_code == 201
        client.post("/api/bridges/forwarders/plant/activate")
        assert client.get("/api/bridges/forwarders/plant").json()["active"] is True
        client.post("/api/bridges/forwarders/plant/deactivate")

        route = {
            "routeId": "rt1",
            "sourceTopic": "ml-out",
            "targetQueue": "predictions",
            "mode": "update",
            "ditto_message": {
                "topic": "plant/unit1/things/twin/commands/modify",
                "path": "/features/last_measured/properties/value",
                "value": "{0}",
            },
        }
        assert client.post("/api/bridges/routes", json=route).status_code == 201
        assert client.get("/api/bridges/routes/rt1").json()["mode"] == "update"
        client.post("/api/bridges/routes/rt1/activate")
        client.post("/api/bridges/routes/rt1/deactivate")
        client.delete("/api/bridges/routes/rt1")
        assert client.get("/api/bridges/routes").json() == []

    def test_invalid_route_schema_is_400(self, client):
        res = client.post("/api/bridges/routes", json={"routeId": "rt2"})
        assert res.status_code == 400
        assert res.json()["error"] == "InvalidSchema"


def normalize(path: str) -> str:
    return re.sub(r"\{[^}]+\}", "{}", path)


class TestCtlParity:
    def test_every_endpoint_has_a_ctl_command_and_vice_versa(self, platform):
        app = build_app(platform)
        app_routes = {
            (method, normalize(route.path))
            for route in app.routes
            if isinstance(route, APIRoute)
            for method in route.methods
        }
        ctl_routes = {(c.method, normalize(c.path)) for c in CTL_COMMANDS}
        assert app_routes == ctl_routes

    def test_ctl_command_names_are_unique(self):
        names = [(c.group, c.verb) for c in CTL_COMMANDS]
        assert len(names) == len(set(names))
