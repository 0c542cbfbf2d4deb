// HTTP client for a twinforge server.
//
// This is the console's entire backend coupling: every function here is
// one request to one documented endpoint, and the views contain no other
// network access. Keeping the mapping 1:1 is what the interception tests
// assert, so resist the urge to add composite helpers that fan out into
// several calls.

export interface ConsoleConfig {
  server: string;
  subject: string;
}

const STORAGE_KEY = "twinforge-console-config";

let current: ConsoleConfig | null = null;

export function configure(cfg: ConsoleConfig): void {
  current = cfg;
  try {
    localStorage.setItem(STORAGE_KEY, JSON.stringify(cfg));
  } catch {
    // storage may be unavailable (private mode); config still works in-memory
  }
}

export function resetConfig(): void {
  current = null;
  try {
    localStorage.removeItem(STORAGE_KEY);
  } catch {
    // ignore
  }
}

export function activeConfig(): ConsoleConfig | null {
  if (current) return current;
  try {
    const raw = localStorage.getItem(STORAGE_KEY);
    if (raw) {
      const parsed = JSON.parse(raw) as ConsoleConfig;
      if (parsed && typeof parsed.server === "string" && parsed.server) {
        current = { server: parsed.server, subject: parsed.subject || "admin" };
      }
    }
  } catch {
    // malformed stored config is treated as absent
  }
  return current;
}

export function isConfigured(): boolean {
  const cfg = activeConfig();
  return !!cfg && cfg.server.length > 0;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

type Query = Record<string, string | number | undefined>;

async function request<T>(
  method: string,
  path: string,
  opts: { body?: unknown; query?: Query; text?: boolean } = {},
): Promise<T> {
  const cfg = activeConfig();
  if (!cfg) throw new ApiError(0, "NotConfigured", "server connection is not configured");
  let url = cfg.server.replace(/\/$/, "") + path;
  if (opts.query) {
    const params = new URLSearchParams();
    for (const [key, value] of Object.entries(opts.query)) {
      if (value !== undefined && value !== "") params.set(key, String(value));
    }
    const qs = params.toString();
    if (qs) url += "?" + qs;
  }
  const headers: Record<string, string> = { "x-subject": cfg.subject };
  const init: RequestInit = { method, headers };
  if (opts.body !== undefined) {
    headers["content-type"] = "application/json";
    init.body = JSON.stringify(opts.body);
  }
  const res = await fetch(url, init);
  if (!res.ok) {
    let code = "HttpError";
    let message = `${res.status} ${res.statusText}`;
    try {
      const data = await res.json();
      if (data && typeof data.error === "string") code = data.error;
      if (data && typeof data.message === "string") message = data.message;
    } catch {
      // non-JSON error body; keep the status line
    }
    throw new ApiError(res.status, code, message);
  }
  if (opts.text) return (await res.text()) as T;
  return (await res.json()) as T;
}

// ---------------------------------------------------------------------------
// Shapes returned by the server

export interface ThingRecord {
  thingId: string;
  policyId: string;
  attributes: Record<string, unknown> & {
    parent?: string | null | Record<string, number>;
    children?: Record<string, number>;
  };
  features: Record<string, { properties: Record<string, unknown> }>;
}

export interface PolicyRecord {
  policyId: string;
  entries: Record<string, { read: boolean; write: boolean }>;
}

export interface TenantRecord {
  tenantId: string;
  mapping: object[];
  telemetryTopic: string;
  devices: string[];
}

export interface TsPoint {
  thing: string;
  feature: string;
  property: string;
  ts: number;
  value: unknown;
  tags: Record<string, string>;
}

// ---------------------------------------------------------------------------
// Things and types

export const listThings = (kind?: string) =>
  request<ThingRecord[]>("GET", "/api/things", { query: { kind } });
export const getThing = (id: string) => request<ThingRecord>("GET", `/api/things/${id}`);
export const createThing = (body: object) => request<ThingRecord>("POST", "/api/things", { body });
export const updateThing = (id: string, path: string, value: unknown) =>
  request<ThingRecord>("PUT", `/api/things/${id}`, { body: { path, value } });
export const deleteThing = (id: string, mode?: "orphan" | "cascade") =>
  request<object>("DELETE", `/api/things/${id}`, { query: { mode } });
export const listChildren = (id: string) =>
  request<Record<string, number>>("GET", `/api/things/${id}/children`);
export const listParents = (id: string) => request<string[]>("GET", `/api/things/${id}/parents`);
export const linkChild = (parentId: string, childId: string) =>
  request<object>("PUT", `/api/things/${parentId}/children/${childId}`);

export const listTypes = () => request<ThingRecord[]>("GET", "/api/types");
export const getType = (id: string) => request<ThingRecord>("GET", `/api/types/${id}`);
export const createType = (body: object) => request<ThingRecord>("POST", "/api/types", { body });
export const deleteType = (id: string, mode?: "orphan" | "cascade") =>
  request<object>("DELETE", `/api/types/${id}`, { query: { mode } });
export const instantiateType = (id: string, body: object) =>
  request<ThingRecord>("POST", `/api/types/${id}/instantiate`, { body });

// ---------------------------------------------------------------------------
// Policies

export const listPolicies = () => request<PolicyRecord[]>("GET", "/api/policies");
export const getPolicy = (id: string) => request<PolicyRecord>("GET", `/api/policies/${id}`);
export const createPolicy = (body: object) =>
  request<PolicyRecord>("POST", "/api/policies", { body });
export const deletePolicy = (id: string) => request<object>("DELETE", `/api/policies/${id}`);

// ---------------------------------------------------------------------------
// Gateway tenants and devices

export const listTenants = () => request<TenantRecord[]>("GET", "/api/tenants");
export const getTenant = (id: string) => request<TenantRecord>("GET", `/api/tenants/${id}`);
export const createTenant = (body: object) => request<object>("POST", "/api/tenants", { body });
export const deleteTenant = (id: string) => request<object>("DELETE", `/api/tenants/${id}`);
export const setTenantMapping = (id: string, mapping: object[]) =>
  request<object>("PUT", `/api/tenants/${id}/mapping`, { body: mapping });
export const listDevices = (tenantId: string) =>
  request<string[]>("GET", `/api/tenants/${tenantId}/devices`);
export const addDevice = (tenantId: string, body: object) =>
  request<object>("POST", `/api/tenants/${tenantId}/devices`, { body });
export const deleteDevice = (tenantId: string, deviceId: string) =>
  request<object>("DELETE", `/api/tenants/${tenantId}/devices/${deviceId}`);

// ---------------------------------------------------------------------------
// Watchdog

export const listWatchdogTenants = () => request<object[]>("GET", "/api/watchdog/tenants");
export const createWatchdogTenant = (body: object) =>
  request<object>("POST", "/api/watchdog/tenants", { body });
export const deleteWatchdogTenant = (id: string) =>
  request<object>("DELETE", `/api/watchdog/tenants/${id}`);
export const activateWatchdogTenant = (id: string) =>
  request<object>("POST", `/api/watchdog/tenants/${id}/activate`);
export const deactivateWatchdogTenant = (id: string) =>
  request<object>("POST", `/api/watchdog/tenants/${id}/deactivate`);
export const listWatchdogDevices = (tenantId: string) =>
  request<object[]>("GET", `/api/watchdog/tenants/${tenantId}/devices`);
export const addWatchdogDevice = (tenantId: string, body: object) =>
  request<object>("POST", `/api/watchdog/tenants/${tenantId}/devices`, { body });
export const deleteWatchdogDevice = (tenantId: string, deviceId: string) =>
  request<object>("DELETE", `/api/watchdog/tenants/${tenantId}/devices/${deviceId}`);
export const activateWatchdogDevice = (tenantId: string, deviceId: string) =>
  request<object>("POST", `/api/watchdog/tenants/${tenantId}/devices/${deviceId}/activate`);
export const deactivateWatchdogDevice = (tenantId: string, deviceId: string) =>
  request<object>("POST", `/api/watchdog/tenants/${tenantId}/devices/${deviceId}/deactivate`);

// ---------------------------------------------------------------------------
// ML models and bridges

export const listModels = () => request<object[]>("GET", "/api/ml/models");
export const deployModel = (body: object) => request<object>("POST", "/api/ml/models", { body });
export const deleteModel = (id: string) => request<object>("DELETE", `/api/ml/models/${id}`);

export const listForwarders = () => request<object[]>("GET", "/api/bridges/forwarders");
export const createForwarder = (body: object) =>
  request<object>("POST", "/api/bridges/forwarders", { body });
export const deleteForwarder = (tenantId: string) =>
  request<object>("DELETE", `/api/bridges/forwarders/${tenantId}`);
export const activateForwarder = (tenantId: string) =>
  request<object>("POST", `/api/bridges/forwarders/${tenantId}/activate`);
export const deactivateForwarder = (tenantId: string) =>
  request<object>("POST", `/api/bridges/forwarders/${tenantId}/deactivate`);

export const listRoutes = () => request<object[]>("GET", "/api/bridges/routes");
export const createRoute = (body: object) =>
  request<object>("POST", "/api/bridges/routes", { body });
export const deleteRoute = (routeId: string) =>
  request<object>("DELETE", `/api/bridges/routes/${routeId}`);
export const activateRoute = (routeId: string) =>
  request<object>("POST", `/api/bridges/routes/${routeId}/activate`);
export const deactivateRoute = (routeId: string) =>
  request<object>("POST", `/api/bridges/routes/${routeId}/deactivate`);

// ---------------------------------------------------------------------------
// Telemetry and health

export interface TsQuery {
  thing?: string;
  feature?: string;
  property?: string;
  originator?: string;
  from?: number;
  to?: number;
}

export const queryTimeseries = (query: TsQuery) =>
  request<TsPoint[]>("GET", "/api/ts", { query: { ...query } });

export const health = () => request<{ status: string }>("GET", "/health");
