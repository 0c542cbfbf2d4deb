// The server's documented HTTP surface, one (method, path pattern) row per
// endpoint. Console tests assert every request the UI issues matches a row.
// Path parameters never contain "/" except bus topic and queue names, which
// are slash-separated and matched to end of path.

const SEG = "[^/]+";

function exact(template: string): RegExp {
  const pattern = template
    .split("/")
    .map((part) => (part.startsWith("{") && part.endsWith("}") ? SEG : part))
    .join("/");
  return new RegExp(`^${pattern}$`);
}

export const DOCUMENTED: ReadonlyArray<readonly [string, RegExp]> = [
  ["GET", exact("/health")],
  ["GET", exact("/metrics")],

  ["GET", exact("/api/things")],
  ["POST", exact("/api/things")],
  ["GET", exact("/api/things/{thing_id}")],
  ["PUT", exact("/api/things/{thing_id}")],
  ["DELETE", exact("/api/things/{thing_id}")],
  ["GET", exact("/api/things/{thing_id}/children")],
  ["PUT", exact("/api/things/{thing_id}/children/{child_id}")],
  ["GET", exact("/api/things/{thing_id}/parents")],

  ["GET", exact("/api/types")],
  ["POST", exact("/api/types")],
  ["GET", exact("/api/types/{type_id}")],
  ["DELETE", exact("/api/types/{type_id}")],
  ["POST", exact("/api/types/{type_id}/instantiate")],

  ["GET", exact("/api/policies")],
  ["POST", exact("/api/policies")],
  ["GET", exact("/api/policies/{policy_id}")],
  ["DELETE", exact("/api/policies/{policy_id}")],

  ["GET", exact("/api/tenants")],
  ["POST", exact("/api/tenants")],
  ["GET", exact("/api/tenants/{tenant_id}")],
  ["DELETE", exact("/api/tenants/{tenant_id}")],
  ["PUT", exact("/api/tenants/{tenant_id}/mapping")],
  ["GET", exact("/api/tenants/{tenant_id}/devices")],
  ["POST", exact("/api/tenants/{tenant_id}/devices")],
  ["DELETE", exact("/api/tenants/{tenant_id}/devices/{device_id}")],

  ["POST", exact("/ingest/{tenant_id}/{device_id}")],

  ["GET", exact("/api/bus/topics")],
  ["GET", /^\/api\/bus\/topics\/.+$/],
  ["GET", exact("/api/bus/queues")],
  ["GET", /^\/api\/bus\/queues\/.+$/],

  ["GET", exact("/api/ts")],

  ["GET", exact("/api/watchdog/tenants")],
  ["POST", exact("/api/watchdog/tenants")],
  ["GET", exact("/api/watchdog/tenants/{tenant_id}")],
  ["DELETE", exact("/api/watchdog/tenants/{tenant_id}")],
  ["POST", exact("/api/watchdog/tenants/{tenant_id}/activate")],
  ["POST", exact("/api/watchdog/tenants/{tenant_id}/deactivate")],
  ["GET", exact("/api/watchdog/tenants/{tenant_id}/devices")],
  ["POST", exact("/api/watchdog/tenants/{tenant_id}/devices")],
  ["GET", exact("/api/watchdog/tenants/{tenant_id}/devices/{device_id}")],
  ["DELETE", exact("/api/watchdog/tenants/{tenant_id}/devices/{device_id}")],
  ["POST", exact("/api/watchdog/tenants/{tenant_id}/devices/{device_id}/activate")],
  ["POST", exact("/api/watchdog/tenants/{tenant_id}/devices/{device_id}/deactivate")],

  ["GET", exact("/api/ml/models")],
  ["POST", exact("/api/ml/models")],
  ["GET", exact("/api/ml/models/{model_id}")],
  ["DELETE", exact("/api/ml/models/{model_id}")],

  ["GET", exact("/api/bridges/forwarders")],
  ["POST", exact("/api/bridges/forwarders")],
  ["GET", exact("/api/bridges/forwarders/{tenant_id}")],
  ["DELETE", exact("/api/bridges/forwarders/{tenant_id}")],
  ["POST", exact("/api/bridges/forwarders/{tenant_id}/activate")],
  ["POST", exact("/api/bridges/forwarders/{tenant_id}/deactivate")],

  ["GET", exact("/api/bridges/routes")],
  ["POST", exact("/api/bridges/routes")],
  ["GET", exact("/api/bridges/routes/{route_id}")],
  ["DELETE", exact("/api/bridges/routes/{route_id}")],
  ["POST", exact("/api/bridges/routes/{route_id}/activate")],
  ["POST", exact("/api/bridges/routes/{route_id}/deactivate")],
];

export function isDocumented(method: string, path: string): boolean {
  return DOCUMENTED.some(([m, re]) => m === method && re.test(path));
}
