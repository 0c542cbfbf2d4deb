// Application shell: tab bar, entity area, and the dashboard (schematic
// plus telemetry chart). Until the server connection is configured the
// tabs are disabled and only the settings page works.

import { isConfigured } from "./api.js";
import { TelemetryChart } from "./charts.js";
import { clear, el } from "./dom.js";
import { currentRoute, navigate, onRouteChange, Route, TabName } from "./router.js";
import { DEFAULT_SCENE, parseScene } from "./scene.js";
import { SchematicPanel } from "./schematic.js";
import { DashboardState } from "./state.js";
import { renderConfigPage } from "./views/config.js";
import { renderConnections } from "./views/connections.js";
import { renderPolicies } from "./views/policies.js";
import { renderTwins } from "./views/twins.js";
import { renderTypes } from "./views/types.js";

const TAB_NAMES: TabName[] = ["twins", "types", "policies", "connections"];

export interface App {
  state: DashboardState;
  chart: TelemetryChart;
  schematic: SchematicPanel;
  rerender: () => Promise<void>;
  dispose: () => void;
}

export function initApp(root: HTMLElement): App {
  const state = new DashboardState();

  const tabBar = el("nav", { class: "tabs" });
  const configBtn = el("button", { type: "button", class: "tab config-tab", text: "settings" });
  const entityArea = el("main", { class: "entity-area" });
  const schematicArea = el("div", { class: "schematic-area" });
  const chartArea = el("div", { class: "chart-area" });

  root.append(
    el("header", {}, el("h1", { text: "twin console" }), tabBar),
    entityArea,
    el("section", { class: "dashboard" },
      el("h2", { text: "dashboard" }),
      schematicArea,
      chartArea,
    ),
  );

  const schematic = new SchematicPanel(schematicArea, state);
  const chart = new TelemetryChart(chartArea, state);

  // scene loader: default scene plus a paste box for custom layouts
  const sceneBox = el("textarea", { class: "scene-input", rows: "3", placeholder: "paste scene JSON to replace the schematic" });
  const sceneBtn = el("button", { type: "button", class: "btn-load-scene", text: "load scene" });
  const sceneErr = el("p", { class: "error scene-error", text: "" });
  sceneBtn.addEventListener("click", () => {
    sceneErr.textContent = "";
    try {
      schematic.load(parseScene(JSON.parse(sceneBox.value)));
    } catch (err) {
      sceneErr.textContent = String(err);
    }
  });
  schematicArea.append(sceneBox, sceneBtn, sceneErr);
  schematic.load(DEFAULT_SCENE);

  // latest value per thing flows back onto the schematic labels
  chart.onData = (points) => {
    const latest = new Map<string, { ts: number; value: unknown }>();
    for (const p of points) {
      const seen = latest.get(p.thing);
      if (!seen || p.ts >= seen.ts) latest.set(p.thing, { ts: p.ts, value: p.value });
    }
    for (const [thing, entry] of latest) {
      schematic.pushValue(thing, String(entry.value));
    }
  };

  let showConfig = !isConfigured();
  configBtn.addEventListener("click", () => {
    showConfig = true;
    void render(currentRoute());
  });

  function renderTabBar(active: TabName): void {
    clear(tabBar);
    for (const name of TAB_NAMES) {
      const btn = el("button", {
        type: "button",
        class: `tab${name === active && !showConfig ? " active" : ""}`,
        "data-tab": name,
        text: name,
      });
      if (!isConfigured()) btn.setAttribute("disabled", "");
      btn.addEventListener("click", () => {
        showConfig = false;
        navigate({ tab: name, id: null, mode: null, section: null });
      });
      tabBar.append(btn);
    }
    tabBar.append(configBtn);
  }

  async function render(route: Route): Promise<void> {
    renderTabBar(route.tab);
    clear(entityArea);
    if (showConfig || !isConfigured()) {
      renderConfigPage(entityArea, () => {
        showConfig = false;
        if (isConfigured()) chart.start();
        void render(currentRoute());
      });
      if (!isConfigured()) {
        // the dashboard cannot poll without a server either
        chart.stop();
      }
      return;
    }
    switch (route.tab) {
      case "twins":
        return renderTwins(entityArea, route, state);
      case "types":
        return renderTypes(entityArea, route);
      case "policies":
        return renderPolicies(entityArea, route);
      case "connections":
        return renderConnections(entityArea, route);
    }
  }

  const unsubscribe = onRouteChange((route) => void render(route));
  void render(currentRoute());
  if (isConfigured()) chart.start();

  const dispose = () => {
    unsubscribe();
    chart.stop();
  };
  return { state, chart, schematic, rerender: () => render(currentRoute()), dispose };
}
