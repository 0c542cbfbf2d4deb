// URL-parameter routing. The whole view state lives in the query string
// (?tab=twins&id=a:b&mode=detail) so any screen is linkable and reload-safe.

export type TabName = "twins" | "types" | "policies" | "connections";

export interface Route {
  tab: TabName;
  id: string | null;
  mode: "list" | "detail" | "create";
}

const TABS: TabName[] = ["twins", "types", "policies", "connections"];

export function currentRoute(): Route {
  const params = new URLSearchParams(window.location.search);
  const rawTab = params.get("tab") ?? "twins";
  const tab = (TABS as string[]).includes(rawTab) ? (rawTab as TabName) : "twins";
  const id = params.get("id");
  const rawMode = params.get("mode");
  let mode: Route["mode"] = id ? "detail" : "list";
  if (rawMode === "create") mode = "create";
  else if (rawMode === "list") mode = "list";
  else if (rawMode === "detail" && id) mode = "detail";
  return { tab, id, mode };
}

type RouteListener = (route: Route) => void;
const listeners = new Set<RouteListener>();

export function onRouteChange(fn: RouteListener): () => void {
  listeners.add(fn);
  return () => listeners.delete(fn);
}

export function navigate(changes: Record<string, string | null>): void {
  const params = new URLSearchParams(window.location.search);
  for (const [key, value] of Object.entries(changes)) {
    if (value === null) params.delete(key);
    else params.set(key, value);
  }
  const qs = params.toString();
  window.history.pushState({}, "", qs ? `?${qs}` : window.location.pathname);
  emit();
}

function emit(): void {
  const route = currentRoute();
  for (const fn of [...listeners]) fn(route);
}

window.addEventListener("popstate", emit);
