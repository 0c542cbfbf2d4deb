// Live telemetry chart: short-polled time series, one line per originator.
//
// The same twin can carry measured points (originator "gateway") and
// predicted points (originator "route:<id>"); rendering them as separate
// series is the whole point of the originator tag, so the grouping here
// must never collapse tags together.

import { clear, el, svgEl } from "./dom.js";
import { queryTimeseries, TsPoint } from "./api.js";
import { DashboardState } from "./state.js";

const POLL_MS = 1000;
const PLOT_W = 720;
const PLOT_H = 240;
const PAD = 34;

// Fixed palette; route originators additionally get a dash pattern so the
// measured/predicted distinction survives a monochrome screen.
const COLORS = ["#1767aa", "#c2521c", "#2a803b", "#8333a8", "#a81f3d", "#5c5f66"];

export interface SeriesView {
  originator: string;
  points: TsPoint[];
}

export function splitByOriginator(points: TsPoint[]): SeriesView[] {
  const byTag = new Map<string, TsPoint[]>();
  for (const point of points) {
    const tag = point.tags?.originator ?? "untagged";
    let bucket = byTag.get(tag);
    if (!bucket) {
      bucket = [];
      byTag.set(tag, bucket);
    }
    bucket.push(point);
  }
  return [...byTag.entries()]
    .sort((a, b) => a[0].localeCompare(b[0]))
    .map(([originator, pts]) => ({ originator, points: pts }));
}

export class TelemetryChart {
  windowSeconds = 300;
  feature = "";
  onData: ((points: TsPoint[]) => void) | null = null;

  private seq = 0;
  private timer: ReturnType<typeof setInterval> | null = null;
  private plot: SVGElement;
  private legend: HTMLElement;
  private message: HTMLElement;
  private controls: HTMLElement;

  constructor(
    private container: HTMLElement,
    private state: DashboardState,
  ) {
    this.plot = svgEl("svg", { viewBox: `0 0 ${PLOT_W} ${PLOT_H}`, class: "chart" });
    this.legend = el("div", { class: "legend" });
    this.message = el("p", { class: "chart-message", text: "" });
    this.controls = this.buildControls();
    this.container.append(this.controls, this.plot, this.legend, this.message);
    // every variable change re-executes the query, no caching in between
    this.state.onChange(() => void this.refresh());
  }

  start(): void {
    if (this.timer !== null) return;
    void this.refresh();
    this.timer = setInterval(() => void this.refresh(), POLL_MS);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  async refresh(): Promise<void> {
    const seq = ++this.seq;
    const selected = this.state.get();
    const nowMs = Date.now();
    const fromNs = Math.floor((nowMs - this.windowSeconds * 1000) * 1e6);
    let points: TsPoint[];
    try {
      points = await queryTimeseries({
        thing: selected?.value,
        feature: this.feature || undefined,
        from: fromNs,
      });
    } catch (err) {
      if (seq === this.seq) this.message.textContent = `query failed: ${(err as Error).message}`;
      return;
    }
    // a newer query superseded this one while it was in flight
    if (seq !== this.seq) return;
    this.render(splitByOriginator(points));
    if (this.onData) this.onData(points);
  }

  private render(series: SeriesView[]): void {
    clear(this.plot);
    clear(this.legend);
    if (series.length === 0) {
      this.message.textContent = "no points in window";
      return;
    }
    this.message.textContent = "";

    const all = series.flatMap((s) => s.points);
    const numeric = all.filter((p) => typeof p.value === "number");
    const ts = all.map((p) => p.ts);
    const values = numeric.map((p) => p.value as number);
    const tMin = Math.min(...ts);
    const tMax = Math.max(...ts);
    const vMin = values.length ? Math.min(...values) : 0;
    const vMax = values.length ? Math.max(...values) : 1;
    const tSpan = tMax - tMin || 1;
    const vSpan = vMax - vMin || 1;
    const x = (t: number) => PAD + ((t - tMin) / tSpan) * (PLOT_W - 2 * PAD);
    const y = (v: number) => PLOT_H - PAD - ((v - vMin) / vSpan) * (PLOT_H - 2 * PAD);

    this.plot.append(
      svgEl("line", { x1: `${PAD}`, y1: `${PLOT_H - PAD}`, x2: `${PLOT_W - PAD}`, y2: `${PLOT_H - PAD}`, class: "axis" }),
      svgEl("line", { x1: `${PAD}`, y1: `${PAD}`, x2: `${PAD}`, y2: `${PLOT_H - PAD}`, class: "axis" }),
    );

    series.forEach((s, i) => {
      const color = COLORS[i % COLORS.length];
      const pts = s.points
        .filter((p) => typeof p.value === "number")
        .sort((a, b) => a.ts - b.ts)
        .map((p) => `${x(p.ts).toFixed(1)},${y(p.value as number).toFixed(1)}`)
        .join(" ");
      const line = svgEl("polyline", {
        points: pts,
        class: "series",
        "data-originator": s.originator,
        fill: "none",
        stroke: color,
        "stroke-width": "2",
      });
      if (s.originator.startsWith("route:")) line.setAttribute("stroke-dasharray", "6 3");
      this.plot.append(line);

      const swatch = el("span", { class: "swatch" });
      swatch.style.background = color;
      this.legend.append(
        el("span", { class: "legend-item", "data-originator": s.originator }, swatch, ` ${s.originator} (${s.points.length})`),
      );
    });
  }

  private buildControls(): HTMLElement {
    const windowLabel = el("span", { text: `window ${this.windowSeconds}s` });
    const slider = el("input", {
      type: "range",
      min: "10",
      max: "3600",
      value: String(this.windowSeconds),
      class: "window-slider",
    });
    slider.addEventListener("change", () => {
      this.windowSeconds = Number(slider.value);
      windowLabel.textContent = `window ${this.windowSeconds}s`;
      void this.refresh();
    });
    const featureBox = el("input", {
      type: "text",
      placeholder: "feature filter",
      class: "feature-filter",
    });
    featureBox.addEventListener("change", () => {
      this.feature = featureBox.value.trim();
      void this.refresh();
    });
    return el("div", { class: "chart-controls" }, windowLabel, slider, featureBox);
  }
}
