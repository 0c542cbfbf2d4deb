// Telemetry chart: measured and predicted points for the same twin carry
// different originator tags and must come out as separate series. Also
// covers the staleness guard (an older in-flight response must never
// overwrite a newer one) and the query parameters the controls drive.

import { afterEach, describe, expect, it, vi } from "vitest";
import { splitByOriginator, TelemetryChart } from "../src/charts";
import { DashboardState } from "../src/state";
import { FakeServer, flush, freshConfigured, tsPoint } from "./helpers";

function makeChart() {
  const host = document.createElement("div");
  document.body.append(host);
  const state = new DashboardState();
  const chart = new TelemetryChart(host, state);
  return { host, state, chart };
}

afterEach(() => {
  vi.unstubAllGlobals();
  document.body.innerHTML = "";
});

describe("splitByOriginator", () => {
  it("groups by tag, keeps tags apart, sorts by name", () => {
    const series = splitByOriginator([
      tsPoint("a:x", 1, "route:acc", 300),
      tsPoint("a:x", 2, "gateway", 100),
      tsPoint("a:x", 3, "gateway", 200),
      { thing: "a:x", feature: "f", property: "value", ts: 400, value: 4, tags: {} },
    ]);
    expect(series.map((s) => s.originator)).toEqual(["gateway", "route:acc", "untagged"]);
    expect(series[0].points).toHaveLength(2);
    expect(series[1].points).toHaveLength(1);
  });
});

describe("TelemetryChart", () => {
  it("renders measured and predicted as visually distinct series", async () => {
    const server = new FakeServer().on("GET", /^\/api\/ts$/, [
      tsPoint("a:x", 10.0, "gateway", 1_000),
      tsPoint("a:x", 11.0, "gateway", 2_000),
      tsPoint("a:x", -12.5, "route:acc", 1_500, "freezing_point"),
      tsPoint("a:x", -12.9, "route:acc", 2_500, "freezing_point"),
    ]);
    freshConfigured(server);
    const { host, chart } = makeChart();

    await chart.refresh();
    await flush();

    const lines = [...host.querySelectorAll("polyline.series")];
    expect(lines.map((l) => l.getAttribute("data-originator"))).toEqual(["gateway", "route:acc"]);
    const [measured, predicted] = lines;
    expect(measured.getAttribute("stroke")).not.toBe(predicted.getAttribute("stroke"));
    // predictions are dashed so the split survives without color
    expect(measured.getAttribute("stroke-dasharray")).toBeNull();
    expect(predicted.getAttribute("stroke-dasharray")).toBe("6 3");

    const legend = [...host.querySelectorAll(".legend-item")];
    expect(legend.map((n) => n.getAttribute("data-originator"))).toEqual(["gateway", "route:acc"]);
    expect(legend[0].textContent).toContain("gateway (2)");
    expect(host.querySelector(".chart-message")?.textContent).toBe("");
  });

  it("says so when the window is empty", async () => {
    const server = new FakeServer().on("GET", /^\/api\/ts$/, []);
    freshConfigured(server);
    const { host, chart } = makeChart();
    await chart.refresh();
    await flush();
    expect(host.querySelectorAll("polyline.series")).toHaveLength(0);
    expect(host.querySelector(".chart-message")?.textContent).toBe("no points in window");
  });

  it("discards a stale response that resolves after a newer one", async () => {
    const pending: Array<(points: unknown) => void> = [];
    const server = new FakeServer().on(
      "GET",
      /^\/api\/ts$/,
      () => new Promise((resolve) => pending.push(resolve)),
    );
    freshConfigured(server);
    const { host, state } = makeChart();

    state.select("a:one");
    state.select("a:two");
    expect(pending).toHaveLength(2);

    // newer query answers first
    pending[1]([tsPoint("a:two", 2, "fresh", 2_000)]);
    await flush();
    expect(host.querySelector(".legend-item")?.getAttribute("data-originator")).toBe("fresh");

    // older answer arrives late and must be dropped
    pending[0]([tsPoint("a:one", 1, "stale", 1_000)]);
    await flush();
    const legend = [...host.querySelectorAll(".legend-item")];
    expect(legend).toHaveLength(1);
    expect(legend[0].getAttribute("data-originator")).toBe("fresh");
  });

  it("window and feature controls re-query with new parameters", async () => {
    const server = new FakeServer().on("GET", /^\/api\/ts$/, []);
    freshConfigured(server);
    const { host, chart } = makeChart();

    await chart.refresh();
    await flush();
    const firstFrom = Number(server.calls[0].query.get("from"));
    expect(Number.isFinite(firstFrom)).toBe(true);

    const slider = host.querySelector<HTMLInputElement>(".window-slider")!;
    slider.value = "10";
    slider.dispatchEvent(new Event("change"));
    await flush();
    const secondFrom = Number(server.calls[1].query.get("from"));
    // shrinking the window moves the lower bound forward
    expect(secondFrom).toBeGreaterThan(firstFrom);

    const filter = host.querySelector<HTMLInputElement>(".feature-filter")!;
    filter.value = "freezing_point";
    filter.dispatchEvent(new Event("change"));
    await flush();
    expect(server.calls[2].query.get("feature")).toBe("freezing_point");
  });

  it("selection changes re-query even for the same value", async () => {
    const server = new FakeServer().on("GET", /^\/api\/ts$/, []);
    freshConfigured(server);
    const { state } = makeChart();

    state.select("a:x");
    state.select("a:x");
    await flush();
    expect(server.calls).toHaveLength(2);
    for (const call of server.calls) expect(call.query.get("thing")).toBe("a:x");

    state.select(null);
    await flush();
    expect(server.calls[2].query.get("thing")).toBeNull();
  });
});
