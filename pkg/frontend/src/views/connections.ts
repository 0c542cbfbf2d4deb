// Connections tab: everything that moves data in and out of the twin
// registry. Gateway tenants with their devices, watchdog supervision,
// deployed models, and the two bridge kinds, each section mirroring one
// API family. JSON textareas are used where the backend takes a document
// (mappings, bridge definitions); simple forms elsewhere.

import * as api from "../api.js";
import { clear, el } from "../dom.js";
import { navigate, Route } from "../router.js";
import { errorBox, parseJsonOrNull, row, section } from "./common.js";

export async function renderConnections(container: HTMLElement, route: Route): Promise<void> {
  clear(container);
  const params = new URLSearchParams(window.location.search);
  const sectionName = params.get("section");
  if (sectionName === "tenant" && route.id) return renderTenantDetail(container, route.id);
  return renderOverview(container);
}

async function renderOverview(container: HTMLElement): Promise<void> {
  const errors = errorBox();
  container.append(el("h2", { text: "connections" }), errors.node);

  let tenants: api.TenantRecord[] = [];
  let wdTenants: { tenantId?: string; active?: boolean }[] = [];
  let models: { modelId?: string }[] = [];
  let forwarders: { tenantId?: string; active?: boolean }[] = [];
  let routes: { routeId?: string; active?: boolean }[] = [];
  try {
    tenants = await api.listTenants();
    wdTenants = (await api.listWatchdogTenants()) as typeof wdTenants;
    models = (await api.listModels()) as typeof models;
    forwarders = (await api.listForwarders()) as typeof forwarders;
    routes = (await api.listRoutes()) as typeof routes;
  } catch (err) {
    errors.show(err);
    return;
  }

  const rerender = () => navigate({}); // re-read everything after a mutation

  // -- gateway tenants ------------------------------------------------------
  const tenantList = el("ul", { class: "tenants" });
  for (const tenant of tenants) {
    const tid = tenant.tenantId;
    const link = el("a", { href: "#", text: `${tid} (${tenant.devices?.length ?? 0} devices)` });
    link.addEventListener("click", (ev) => {
      ev.preventDefault();
      navigate({ id: tid, mode: "detail", section: "tenant" });
    });
    tenantList.append(el("li", { class: "tenant-row", "data-id": tid }, link));
  }
  const tenantId = el("input", { type: "text", placeholder: "tenant id", class: "in-tenant-id" });
  const addTenant = el("button", { type: "button", text: "add tenant", class: "btn-add-tenant" });
  addTenant.addEventListener("click", async () => {
    errors.clear();
    try {
      await api.createTenant({ tenantId: tenantId.value.trim() });
      rerender();
    } catch (err) {
      errors.show(err);
    }
  });
  container.append(section("gateway tenants", tenantList, row("new tenant", tenantId), addTenant));

  // -- watchdog -------------------------------------------------------------
  const wdList = el("ul", { class: "watchdogs" });
  for (const tenant of wdTenants) {
    const tid = tenant.tenantId ?? "";
    const toggle = el("button", {
      type: "button",
      class: "btn-wd-toggle",
      text: tenant.active ? "deactivate" : "activate",
    });
    toggle.addEventListener("click", async () => {
      errors.clear();
      try {
        if (tenant.active) await api.deactivateWatchdogTenant(tid);
        else await api.activateWatchdogTenant(tid);
        rerender();
      } catch (err) {
        errors.show(err);
      }
    });
    const drop = el("button", { type: "button", class: "btn-wd-delete", text: "delete" });
    drop.addEventListener("click", async () => {
      errors.clear();
      try {
        await api.deleteWatchdogTenant(tid);
        rerender();
      } catch (err) {
        errors.show(err);
      }
    });
    wdList.append(
      el("li", { class: "watchdog-row", "data-id": tid },
        `${tid} [${tenant.active ? "active" : "inactive"}] `, toggle, " ", drop),
    );
  }
  const wdId = el("input", { type: "text", placeholder: "tenant id", class: "in-wd-id" });
  const addWd = el("button", { type: "button", text: "add watchdog", class: "btn-add-wd" });
  addWd.addEventListener("click", async () => {
    errors.clear();
    try {
      await api.createWatchdogTenant({ tenantId: wdId.value.trim() });
      rerender();
    } catch (err) {
      errors.show(err);
    }
  });
  container.append(section("watchdog tenants", wdList, row("new watchdog", wdId), addWd));

  // -- ML models --------------------------------------------------------------
  const modelList = el("ul", { class: "models" });
  for (const model of models) {
    const mid = model.modelId ?? "";
    const drop = el("button", { type: "button", class: "btn-model-delete", text: "undeploy" });
    drop.addEventListener("click", async () => {
      errors.clear();
      try {
        await api.deleteModel(mid);
        rerender();
      } catch (err) {
        errors.show(err);
      }
    });
    modelList.append(el("li", { class: "model-row", "data-id": mid }, `${mid} `, drop));
  }
  const modelJson = el("textarea", { class: "in-model", rows: "4", placeholder: '{"modelId": ...}' });
  const deployBtn = el("button", { type: "button", text: "deploy model", class: "btn-deploy-model" });
  deployBtn.addEventListener("click", async () => {
    errors.clear();
    const body = parseJsonOrNull(modelJson.value);
    if (body === null) {
      errors.show(new Error("model definition must be valid JSON"));
      return;
    }
    try {
      await api.deployModel(body as object);
      rerender();
    } catch (err) {
      errors.show(err);
    }
  });
  container.append(section("models", modelList, modelJson, deployBtn));

  // -- forwarders and routes ---------------------------------------------------
  container.append(
    bridgeSection("forwarders", forwarders.map((f) => ({
      id: f.tenantId ?? "",
      active: !!f.active,
    })), {
      create: (body) => api.createForwarder(body),
      activate: (id) => api.activateForwarder(id),
      deactivate: (id) => api.deactivateForwarder(id),
      remove: (id) => api.deleteForwarder(id),
    }, errors, rerender),
    bridgeSection("routes", routes.map((r) => ({
      id: r.routeId ?? "",
      active: !!r.active,
    })), {
      create: (body) => api.createRoute(body),
      activate: (id) => api.activateRoute(id),
      deactivate: (id) => api.deactivateRoute(id),
      remove: (id) => api.deleteRoute(id),
    }, errors, rerender),
  );
}

interface BridgeOps {
  create: (body: object) => Promise<object>;
  activate: (id: string) => Promise<object>;
  deactivate: (id: string) => Promise<object>;
  remove: (id: string) => Promise<object>;
}

function bridgeSection(
  kind: "forwarders" | "routes",
  items: { id: string; active: boolean }[],
  ops: BridgeOps,
  errors: ReturnType<typeof errorBox>,
  rerender: () => void,
): HTMLElement {
  const list = el("ul", { class: kind });
  for (const item of items) {
    const toggle = el("button", {
      type: "button",
      class: `btn-${kind}-toggle`,
      text: item.active ? "deactivate" : "activate",
    });
    toggle.addEventListener("click", async () => {
      errors.clear();
      try {
        if (item.active) await ops.deactivate(item.id);
        else await ops.activate(item.id);
        rerender();
      } catch (err) {
        errors.show(err);
      }
    });
    const drop = el("button", { type: "button", class: `btn-${kind}-delete`, text: "delete" });
    drop.addEventListener("click", async () => {
      errors.clear();
      try {
        await ops.remove(item.id);
        rerender();
      } catch (err) {
        errors.show(err);
      }
    });
    list.append(
      el("li", { class: `${kind}-row`, "data-id": item.id },
        `${item.id} [${item.active ? "active" : "inactive"}] `, toggle, " ", drop),
    );
  }
  const jsonBox = el("textarea", { class: `in-${kind}`, rows: "4", placeholder: "definition JSON" });
  const createBtn = el("button", { type: "button", text: `create ${kind.slice(0, -1)}`, class: `btn-create-${kind}` });
  createBtn.addEventListener("click", async () => {
    errors.clear();
    const body = parseJsonOrNull(jsonBox.value);
    if (body === null) {
      errors.show(new Error("definition must be valid JSON"));
      return;
    }
    try {
      await ops.create(body as object);
      rerender();
    } catch (err) {
      errors.show(err);
    }
  });
  return section(kind, list, jsonBox, createBtn);
}

async function renderTenantDetail(container: HTMLElement, tenantId: string): Promise<void> {
  const errors = errorBox();
  const back = el("a", { href: "#", text: "back to connections" });
  back.addEventListener("click", (ev) => {
    ev.preventDefault();
    navigate({ section: null, id: null, mode: "list" });
  });
  container.append(el("h2", { text: `tenant ${tenantId}` }), back, errors.node);

  let tenant: api.TenantRecord;
  try {
    tenant = await api.getTenant(tenantId);
  } catch (err) {
    errors.show(err);
    return;
  }

  container.append(el("p", { class: "hint", text: `telemetry topic: ${tenant.telemetryTopic ?? ""}` }));

  const deviceList = el("ul", { class: "devices" });
  for (const deviceId of tenant.devices ?? []) {
    const drop = el("button", { type: "button", class: "btn-device-delete", text: "remove" });
    drop.addEventListener("click", async () => {
      errors.clear();
      try {
        await api.deleteDevice(tenantId, deviceId);
        navigate({});
      } catch (err) {
        errors.show(err);
      }
    });
    deviceList.append(el("li", { class: "device-row", "data-id": deviceId }, `${deviceId} `, drop));
  }
  const devId = el("input", { type: "text", placeholder: "namespace:name", class: "in-device-id" });
  const devUser = el("input", { type: "text", placeholder: "username", class: "in-device-user" });
  const devPass = el("input", { type: "password", placeholder: "password", class: "in-device-pass" });
  const addDev = el("button", { type: "button", text: "add device", class: "btn-add-device" });
  addDev.addEventListener("click", async () => {
    errors.clear();
    try {
      await api.addDevice(tenantId, {
        deviceId: devId.value.trim(),
        username: devUser.value.trim(),
        password: devPass.value,
      });
      navigate({});
    } catch (err) {
      errors.show(err);
    }
  });
  container.append(
    section("devices", deviceList, row("device id", devId), row("username", devUser), row("password", devPass), addDev),
  );

  const mappingBox = el("textarea", { class: "in-mapping", rows: "6" });
  mappingBox.value = JSON.stringify(tenant.mapping ?? [], null, 1);
  const saveMapping = el("button", { type: "button", text: "save mapping", class: "btn-save-mapping" });
  saveMapping.addEventListener("click", async () => {
    errors.clear();
    const parsed = parseJsonOrNull(mappingBox.value);
    if (!Array.isArray(parsed)) {
      errors.show(new Error("mapping must be a JSON array"));
      return;
    }
    try {
      await api.setTenantMapping(tenantId, parsed);
      navigate({});
    } catch (err) {
      errors.show(err);
    }
  });
  container.append(section("payload mapping", mappingBox, saveMapping));

  const dropTenant = el("button", { type: "button", text: "delete tenant", class: "btn-delete" });
  dropTenant.addEventListener("click", async () => {
    errors.clear();
    try {
      await api.deleteTenant(tenantId);
      navigate({ section: null, id: null, mode: "list" });
    } catch (err) {
      errors.show(err);
    }
  });
  container.append(section("danger", dropTenant));
}
