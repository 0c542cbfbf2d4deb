"""HTTP surface over a running platform.

One FastAPI app serves every service family under a single port: registry
resources under /api/things, /api/types and /api/policies, gateway admin
under /api/tenants plus device intake at /ingest, bus and time-series
introspection, watchdog, model and bridge administration, and the metrics
text exposition. Domain errors map to statuses by their stable code, so
handlers stay free of try/except noise.

CTL_COMMANDS is the route table the command-line client is generated from;
tests assert it stays in one-to-one correspondence with the app's routes.
"""

from __future__ import annotations

import base64
import csv
import io
import json
from dataclasses import dataclass

from fastapi import Body, FastAPI, Header, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse, Response

from .errors import AuthFailed, TwinforgeError
from .model import Envelope, command_topic, parse_thing_id
from .platform import Platform

STATUS_BY_CODE = {
    "NotFound": 404,
    "UnknownTenant": 404,
    "AuthFailed": 401,
    "Forbidden": 403,
    "Unavailable": 503,
    "DuplicateId": 409,
    "DuplicateDevice": 409,
    "DuplicateModel": 409,
    "TwinAlreadyHasParent": 409,
    "CycleCreated": 409,
    "CascadeOnType": 409,
}


@dataclass(frozen=True)
class CtlCommand:
    """One CLI subcommand and the HTTP call it performs."""

    group: str
    verb: str | None  # None: the group itself is the command
    method: str
    path: str  # template; {param} segments become positional CLI args
    query: tuple[str, ...] = ()
    body: bool = False  # accepts --data / --file JSON
    subject: bool = False  # accepts --subject, sent as x-subject
    auth: bool = False  # accepts --username/--password, sent as basic auth


CTL_COMMANDS: tuple[CtlCommand, ...] = (
    CtlCommand("health", None, "GET", "/health"),
    CtlCommand("metrics", None, "GET", "/metrics"),
    # registry: twins
    CtlCommand("things", "list", "GET", "/api/things", query=("kind",)),
    CtlCommand("things", "create", "POST", "/api/things", body=True, subject=True),
    CtlCommand("things", "get", "GET", "/api/things/{thing_id}"),
    CtlCommand("things", "update", "PUT", "/api/things/{thing_id}", body=True, subject=True),
    CtlCommand(
        "things", "delete", "DELETE", "/api/things/{thing_id}", query=("mode",), subject=True
    ),
    CtlCommand("things", "children", "GET", "/api/things/{thing_id}/children"),
    CtlCommand("things", "parents", "GET", "/api/things/{thing_id}/parents"),
    CtlCommand(
        "things", "link", "PUT", "/api/things/{thing_id}/children/{child_id}", subject=True
    ),
    # registry: types
    CtlCommand("types", "list", "GET", "/api/types"),
    CtlCommand("types", "create", "POST", "/api/types", body=True, subject=True),
    CtlCommand("types", "get", "GET", "/api/types/{type_id}"),
    CtlCommand("types", "delete", "DELETE", "/api/types/{type_id}", query=("mode",), subject=True),
    CtlCommand(
        "types", "instantiate", "POST", "/api/types/{type_id}/instantiate", body=True, subject=True
    ),
    # registry: policies
    CtlCommand("policies", "list", "GET", "/api/policies"),
    CtlCommand("policies", "create", "POST", "/api/policies", body=True),
    CtlCommand("policies", "get", "GET", "/api/policies/{policy_id}"),
    CtlCommand("policies", "delete", "DELETE", "/api/policies/{policy_id}"),
    # gateway admin + intake
    CtlCommand("tenants", "list", "GET", "/api/tenants"),
    CtlCommand("tenants", "create", "POST", "/api/tenants", body=True),
    CtlCommand("tenants", "get", "GET", "/api/tenants/{tenant_id}"),
    CtlCommand("tenants", "delete", "DELETE", "/api/tenants/{tenant_id}"),
    CtlCommand("tenants", "set-mapping", "PUT", "/api/tenants/{tenant_id}/mapping", body=True),
    CtlCommand("tenants", "devices", "GET", "/api/tenants/{tenant_id}/devices"),
    CtlCommand("tenants", "add-device", "POST", "/api/tenants/{tenant_id}/devices", body=True),
    CtlCommand(
        "tenants", "delete-device", "DELETE", "/api/tenants/{tenant_id}/devices/{device_id}"
    ),
    CtlCommand(
        "ingest", None, "POST", "/ingest/{tenant_id}/{device_id}", body=True, auth=True
    ),
    # bus introspection
    CtlCommand("bus", "topics", "GET", "/api/bus/topics"),
    CtlCommand("bus", "topic", "GET", "/api/bus/topics/{topic}"),
    CtlCommand("bus", "queues", "GET", "/api/bus/queues"),
    CtlCommand("bus", "queue", "GET", "/api/bus/queues/{queue}"),
    # time series
    CtlCommand(
        "ts",
        "query",
        "GET",
        "/api/ts",
        query=("thing", "feature", "property", "from", "to", "originator", "format"),
    ),
    # watchdog
    CtlCommand("watchdog", "tenants", "GET", "/api/watchdog/tenants"),
    CtlCommand("watchdog", "create-tenant", "POST", "/api/watchdog/tenants", body=True),
    CtlCommand("watchdog", "tenant", "GET", "/api/watchdog/tenants/{tenant_id}"),
    CtlCommand("watchdog", "delete-tenant", "DELETE", "/api/watchdog/tenants/{tenant_id}"),
    CtlCommand(
        "watchdog", "activate-tenant", "POST", "/api/watchdog/tenants/{tenant_id}/activate"
    ),
    CtlCommand(
        "watchdog", "deactivate-tenant", "POST", "/api/watchdog/tenants/{tenant_id}/deactivate"
    ),
    CtlCommand("watchdog", "devices", "GET", "/api/watchdog/tenants/{tenant_id}/devices"),
    CtlCommand(
        "watchdog", "add-device", "POST", "/api/watchdog/tenants/{tenant_id}/devices", body=True
    ),
    CtlCommand(
        "watchdog", "device", "GET", "/api/watchdog/tenants/{tenant_id}/devices/{device_id}"
    ),
    CtlCommand(
        "watchdog",
        "delete-device",
        "DELETE",
        "/api/watchdog/tenants/{tenant_id}/devices/{device_id}",
    ),
    CtlCommand(
        "watchdog",
        "activate-device",
        "POST",
        "/api/watchdog/tenants/{tenant_id}/devices/{device_id}/activate",
    ),
    CtlCommand(
        "watchdog",
        "deactivate-device",
        "POST",
        "/api/watchdog/tenants/{tenant_id}/devices/{device_id}/deactivate",
    ),
    # ml runtime
    CtlCommand("ml", "models", "GET", "/api/ml/models"),
    CtlCommand("ml", "deploy", "POST", "/api/ml/models", body=True),
    CtlCommand("ml", "model", "GET", "/api/ml/models/{model_id}"),
    CtlCommand("ml", "undeploy", "DELETE", "/api/ml/models/{model_id}"),
    # bridges
    CtlCommand("forwarders", "list", "GET", "/api/bridges/forwarders"),
    CtlCommand("forwarders", "create", "POST", "/api/bridges/forwarders", body=True),
    CtlCommand("forwarders", "get", "GET", "/api/bridges/forwarders/{tenant_id}"),
    CtlCommand("forwarders", "delete", "DELETE", "/api/bridges/forwarders/{tenant_id}"),
    CtlCommand(
        "forwarders", "activate", "POST", "/api/bridges/forwarders/{tenant_id}/activate"
    ),
    CtlCommand(
        "forwarders", "deactivate", "POST", "/api/bridges/forwarders/{tenant_id}/deactivate"
    ),
    CtlCommand("routes", "list", "GET", "/api/bridges/routes"),
    CtlCommand("routes", "create", "POST", "/api/bridges/routes", body=True),
    CtlCommand("routes", "get", "GET", "/api/bridges/routes/{route_id}"),
    CtlCommand("routes", "delete", "DELETE", "/api/bridges/routes/{route_id}"),
    CtlCommand("routes", "activate", "POST", "/api/bridges/routes/{route_id}/activate"),
    CtlCommand("routes", "deactivate", "POST", "/api/bridges/routes/{route_id}/deactivate"),
)


def _bad_request(message: str) -> JSONResponse:
    return JSONResponse(status_code=400, content={"error": "BadRequest", "message": message})


def _basic_credentials(request: Request) -> tuple[str, str]:
    header = request.headers.get("authorization", "")
    if not header.lower().startswith("basic "):
        raise AuthFailed("basic auth required")
    try:
        decoded = base64.b64decode(header.split(" ", 1)[1]).decode("utf-8")
    except Exception as exc:
        raise AuthFailed("malformed basic auth header") from exc
    username, sep, password = decoded.partition(":")
    if not sep:
        raise AuthFailed("malformed basic auth credentials")
    return username, password


def _points_csv(points: list[dict]) -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["thing", "feature", "property", "ts", "value", "originator"])
    for p in points:
        writer.writerow(
            [
                p["thing"],
                p["feature"],
                p["property"],
                p["ts"],
                json.dumps(p["value"]),
                p["tags"].get("originator", ""),
            ]
        )
    return out.getvalue()


def build_app(platform: Platform) -> FastAPI:
    app = FastAPI(title="twinforge", openapi_url=None, docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(TwinforgeError)
    async def _domain_error(request: Request, exc: TwinforgeError):
        status = STATUS_BY_CODE.get(exc.code, 400)
        return JSONResponse(status_code=status, content={"error": exc.code, "message": str(exc)})

    # -- meta -------------------------------------------------------------------

    @app.get("/health")
    def health():
        return {"status": "ok", "services": list(Platform.SERVICE_NAMES)}

    @app.get("/metrics")
    def metrics():
        return PlainTextResponse(platform.metrics.render_text())

    # -- registry: things ---------------------------------------------------------

    @app.get("/api/things")
    def list_things(kind: str | None = None):
        if kind not in (None, "twin", "type"):
            return _bad_request("kind must be twin or type")
        return [platform.registry.get(tid) for tid in platform.registry.list_things(kind)]

    @app.post("/api/things", status_code=201)
    def create_thing(body: dict = Body(...), x_subject: str = Header("admin")):
        return platform.registry.create_twin(
            body.get("thingId", ""),
            body.get("policyId", ""),
            body.get("attributes"),
            body.get("features"),
            subject=x_subject,
        )

    @app.get("/api/things/{thing_id}")
    def get_thing(thing_id: str):
        return platform.registry.get(thing_id)

    @app.put("/api/things/{thing_id}")
    def update_thing(thing_id: str, body: dict = Body(...), x_subject: str = Header("admin")):
        if "path" not in body:
            return _bad_request("body needs a path (and optionally a value)")
        envelope = Envelope(
            topic=command_topic(parse_thing_id(thing_id)),
            path=body["path"],
            value=body.get("value"),
            headers={},
        )
        return platform.registry.update(envelope, x_subject)

    @app.delete("/api/things/{thing_id}")
    def delete_thing(thing_id: str, mode: str = "orphan", x_subject: str = Header("admin")):
        if mode not in ("orphan", "cascade"):
            return _bad_request("mode must be orphan or cascade")
        return {"deleted": platform.registry.delete(thing_id, mode=mode, subject=x_subject)}

    @app.get("/api/things/{thing_id}/children")
    def thing_children(thing_id: str):
        return platform.registry.list_children(thing_id)

    @app.get("/api/things/{thing_id}/parents")
    def thing_parents(thing_id: str):
        return platform.registry.list_parents(thing_id)

    @app.put("/api/things/{thing_id}/children/{child_id}")
    def link_things(thing_id: str, child_id: str, x_subject: str = Header("admin")):
        platform.registry.link(thing_id, child_id, subject=x_subject)
        return {"parent": thing_id, "child": child_id}

    # -- registry: types ------------------------------------------------------------

    @app.get("/api/types")
    def list_types():
        return [platform.registry.get(tid) for tid in platform.registry.list_things("type")]

    @app.post("/api/types", status_code=201)
    def create_type(body: dict = Body(...), x_subject: str = Header("admin")):
        return platform.registry.create_type(
            body.get("thingId", ""),
            body.get("policyId", ""),
            body.get("attributes"),
            body.get("features"),
            subject=x_subject,
        )

    @app.get("/api/types/{type_id}")
    def get_type(type_id: str):
        if type_id not in platform.registry.list_things("type"):
            return JSONResponse(
                status_code=404,
                content={"error": "NotFound", "message": f"no type {type_id!r}"},
            )
        return platform.registry.get(type_id)

    @app.delete("/api/types/{type_id}")
    def delete_type(type_id: str, mode: str = "orphan", x_subject: str = Header("admin")):
        if mode not in ("orphan", "cascade"):
            return _bad_request("mode must be orphan or cascade")
        return {"deleted": platform.registry.delete(type_id, mode=mode, subject=x_subject)}

    @app.post("/api/types/{type_id}/instantiate", status_code=201)
    def instantiate_type(type_id: str, body: dict = Body(...), x_subject: str = Header("admin")):
        return platform.registry.instantiate_from_type(
            type_id, body.get("thingId", ""), body.get("policyId", ""), subject=x_subject
        )

    # -- registry: policies -----------------------------------------------------------

    @app.get("/api/policies")
    def list_policies():
        return platform.registry.list_policies()

    @app.post("/api/policies", status_code=201)
    def create_policy(body: dict = Body(...)):
        return platform.registry.create_policy(body.get("policyId", ""), body.get("entries", {}))

    @app.get("/api/policies/{policy_id}")
    def get_policy(policy_id: str):
        return platform.registry.get_policy(policy_id)

    @app.delete("/api/policies/{policy_id}")
    def delete_policy(policy_id: str):
        platform.registry.delete_policy(policy_id)
        return {"deleted": policy_id}

    # -- gateway ---------------------------------------------------------------------

    @app.get("/api/tenants")
    def list_tenants():
        return [platform.gateway.get_tenant(t) for t in platform.gateway.list_tenants()]

    @app.post("/api/tenants", status_code=201)
    def create_tenant(body: dict = Body(...)):
        return platform.gateway.create_tenant(body.get("tenantId", ""), body.get("mapping"))

    @app.get("/api/tenants/{tenant_id}")
    def get_tenant(tenant_id: str):
        return platform.gateway.get_tenant(tenant_id)

    @app.delete("/api/tenants/{tenant_id}")
    def delete_tenant(tenant_id: str):
        platform.gateway.delete_tenant(tenant_id)
        return {"deleted": tenant_id}

    @app.put("/api/tenants/{tenant_id}/mapping")
    def set_mapping(tenant_id: str, body: list = Body(...)):
        platform.gateway.set_mapping(tenant_id, body)
        return platform.gateway.get_tenant(tenant_id)

    @app.get("/api/tenants/{tenant_id}/devices")
    def list_devices(tenant_id: str):
        return platform.gateway.list_devices(tenant_id)

    @app.post("/api/tenants/{tenant_id}/devices", status_code=201)
    def add_device(tenant_id: str, body: dict = Body(...)):
        return platform.gateway.register_device(
            tenant_id,
            body.get("deviceId", ""),
            body.get("username", ""),
            body.get("password", ""),
        )

    @app.delete("/api/tenants/{tenant_id}/devices/{device_id}")
    def delete_device(tenant_id: str, device_id: str):
        platform.gateway.delete_device(tenant_id, device_id)
        return {"deleted": device_id}

    @app.post("/ingest/{tenant_id}/{device_id}", status_code=202)
    async def ingest(tenant_id: str, device_id: str, request: Request):
        username, password = _basic_credentials(request)
        payload = await request.body()
        offset = platform.gateway.ingest(tenant_id, device_id, username, password, payload)
        return {"offset": offset}

    # -- bus --------------------------------------------------------------------------

    @app.get("/api/bus/topics")
    def bus_topics():
        return [
            {"name": t, "end_offset": platform.bus.end_offset(t)} for t in platform.bus.topics()
        ]

    @app.get("/api/bus/topics/{topic:path}")
    def bus_topic(topic: str):
        if topic not in platform.bus.topics():
            return JSONResponse(
                status_code=404, content={"error": "NotFound", "message": f"no topic {topic!r}"}
            )
        return {"name": topic, "end_offset": platform.bus.end_offset(topic)}

    @app.get("/api/bus/queues")
    def bus_queues():
        return [
            {"name": q, "depth": platform.bus.queue_depth(q)} for q in platform.bus.queues()
        ]

    @app.get("/api/bus/queues/{queue:path}")
    def bus_queue(queue: str):
        if queue not in platform.bus.queues():
            return JSONResponse(
                status_code=404, content={"error": "NotFound", "message": f"no queue {queue!r}"}
            )
        return {"name": queue, "depth": platform.bus.queue_depth(queue)}

    # -- time series --------------------------------------------------------------------

    @app.get("/api/ts")
    def ts_query(
        thing: str | None = None,
        feature: str | None = None,
        property: str | None = None,
        originator: str | None = None,
        format: str = "json",
        from_ns: int | None = Query(None, alias="from"),
        to_ns: int | None = Query(None, alias="to"),
    ):
        if format not in ("json", "jsonl", "csv"):
            return _bad_request("format must be json, jsonl or csv")
        points = platform.timeseries.query(
            thing=thing,
            feature=feature,
            prop=property,
            from_ns=from_ns,
            to_ns=to_ns,
            originator=originator,
        )
        if format == "csv":
            return Response(content=_points_csv(points), media_type="text/csv")
        if format == "jsonl":
            lines = "".join(json.dumps(p, separators=(",", ":")) + "\n" for p in points)
            return PlainTextResponse(lines)
        return points

    # -- watchdog --------------------------------------------------------------------------

    @app.get("/api/watchdog/tenants")
    def wd_tenants():
        return platform.watchdog.list_tenants()

    @app.post("/api/watchdog/tenants", status_code=201)
    def wd_create_tenant(body: dict = Body(...)):
        return platform.watchdog.create_tenant(
            body.get("tenantId", ""), bool(body.get("active", False))
        )

    @app.get("/api/watchdog/tenants/{tenant_id}")
    def wd_get_tenant(tenant_id: str):
        return platform.watchdog.get_tenant(tenant_id)

    @app.delete("/api/watchdog/tenants/{tenant_id}")
    def wd_delete_tenant(tenant_id: str):
        platform.watchdog.delete_tenant(tenant_id)
        return {"deleted": tenant_id}

    @app.post("/api/watchdog/tenants/{tenant_id}/activate")
    def wd_activate_tenant(tenant_id: str):
        platform.watchdog.activate_tenant(tenant_id)
        return platform.watchdog.get_tenant(tenant_id)

    @app.post("/api/watchdog/tenants/{tenant_id}/deactivate")
    def wd_deactivate_tenant(tenant_id: str):
        platform.watchdog.deactivate_tenant(tenant_id)
        return platform.watchdog.get_tenant(tenant_id)

    @app.get("/api/watchdog/tenants/{tenant_id}/devices")
    def wd_devices(tenant_id: str):
        return platform.watchdog.get_tenant(tenant_id)["devices"]

    @app.post("/api/watchdog/tenants/{tenant_id}/devices", status_code=201)
    def wd_add_device(tenant_id: str, body: dict = Body(...)):
        return platform.watchdog.add_device(
            tenant_id,
            body.get("deviceId", ""),
            body.get("mlInputTopic", ""),
            body.get("required_values", []),
            bool(body.get("active", True)),
        )

    @app.get("/api/watchdog/tenants/{tenant_id}/devices/{device_id}")
    def wd_get_device(tenant_id: str, device_id: str):
        return platform.watchdog.get_device(tenant_id, device_id)

    @app.delete("/api/watchdog/tenants/{tenant_id}/devices/{device_id}")
    def wd_delete_device(tenant_id: str, device_id: str):
        platform.watchdog.delete_device(tenant_id, device_id)
        return {"deleted": device_id}

    @app.post("/api/watchdog/tenants/{tenant_id}/devices/{device_id}/activate")
    def wd_activate_device(tenant_id: str, device_id: str):
        platform.watchdog.set_device_active(tenant_id, device_id, True)
        return platform.watchdog.get_device(tenant_id, device_id)

    @app.post("/api/watchdog/tenants/{tenant_id}/devices/{device_id}/deactivate")
    def wd_deactivate_device(tenant_id: str, device_id: str):
        platform.watchdog.set_device_active(tenant_id, device_id, False)
        return platform.watchdog.get_device(tenant_id, device_id)

    # -- ml runtime -----------------------------------------------------------------------------

    @app.get("/api/ml/models")
    def ml_models():
        return platform.ml.list_models()

    @app.post("/api/ml/models", status_code=201)
    def ml_deploy(body: dict = Body(...)):
        return platform.ml.deploy(body)

    @app.get("/api/ml/models/{model_id}")
    def ml_model(model_id: str):
        return platform.ml.get(model_id)

    @app.delete("/api/ml/models/{model_id}")
    def ml_undeploy(model_id: str):
        platform.ml.undeploy(model_id)
        return {"deleted": model_id}

    # -- bridges ------------------------------------------------------------------------------------

    @app.get("/api/bridges/forwarders")
    def fwd_list():
        return platform.forwarders.list_forwarders()

    @app.post("/api/bridges/forwarders", status_code=201)
    def fwd_create(body: dict = Body(...)):
        return platform.forwarders.create_forwarder(body)

    @app.get("/api/bridges/forwarders/{tenant_id}")
    def fwd_get(tenant_id: str):
        return platform.forwarders.get_forwarder(tenant_id)

    @app.delete("/api/bridges/forwarders/{tenant_id}")
    def fwd_delete(tenant_id: str):
        platform.forwarders.delete_forwarder(tenant_id)
        return {"deleted": tenant_id}

    @app.post("/api/bridges/forwarders/{tenant_id}/activate")
    def fwd_activate(tenant_id: str):
        platform.forwarders.activate_forwarder(tenant_id)
        return platform.forwarders.get_forwarder(tenant_id)

    @app.post("/api/bridges/forwarders/{tenant_id}/deactivate")
    def fwd_deactivate(tenant_id: str):
        platform.forwarders.deactivate_forwarder(tenant_id)
        return platform.forwarders.get_forwarder(tenant_id)

    @app.get("/api/bridges/routes")
    def route_list():
        return platform.routes.list_routes()

    @app.post("/api/bridges/routes", status_code=201)
    def route_create(body: dict = Body(...)):
        return platform.routes.create_route(body)

    @app.get("/api/bridges/routes/{route_id}")
    def route_get(route_id: str):
        return platform.routes.get_route(route_id)

    @app.delete("/api/bridges/routes/{route_id}")
    def route_delete(route_id: str):
        platform.routes.delete_route(route_id)
        return {"deleted": route_id}

    @app.post("/api/bridges/routes/{route_id}/activate")
    def route_activate(route_id: str):
        platform.routes.activate_route(route_id)
        return platform.routes.get_route(route_id)

    @app.post("/api/bridges/routes/{route_id}/deactivate")
    def route_deactivate(route_id: str):
        platform.routes.deactivate_route(route_id)
        return platform.routes.get_route(route_id)

    return app
