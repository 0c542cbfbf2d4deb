// Clickable SVG plant schematic.
//
// Clicking an element publishes its id as the dashboard variable; the
// selected element is highlighted, and live values pushed from the
// telemetry layer refresh the element's value label. The panel itself
// never talks to the network.

import { clear, el, svgEl } from "./dom.js";
import { DashboardState } from "./state.js";
import { SceneElement } from "./scene.js";

const VIEW_W = 720;
const VIEW_H = 360;

export class SchematicPanel {
  private svg: SVGElement;
  private groups = new Map<string, SVGElement>();
  private valueLabels = new Map<string, SVGElement>();
  private statusLine: HTMLElement;

  constructor(
    private container: HTMLElement,
    private state: DashboardState,
  ) {
    this.svg = svgEl("svg", {
      viewBox: `0 0 ${VIEW_W} ${VIEW_H}`,
      class: "schematic",
      role: "img",
    });
    this.statusLine = el("p", { class: "schematic-status", text: "no selection" });
    this.container.append(this.svg, this.statusLine);
    this.state.onChange((sel) => this.highlight(sel?.value ?? null));
  }

  load(elements: SceneElement[]): void {
    clear(this.svg);
    this.groups.clear();
    this.valueLabels.clear();
    for (const element of elements) {
      const group = svgEl("g", {
        class: "schematic-el",
        "data-element-id": element.elementId,
        transform: `translate(${element.position.x},${element.position.y})`,
      });
      group.append(this.drawShape(element.shape));

      const label = svgEl("text", { x: "0", y: "52", class: "schematic-label" });
      label.textContent = element.label;
      group.append(label);

      const value = svgEl("text", { x: "0", y: "68", class: "schematic-value" });
      value.textContent = "";
      group.append(value);
      this.valueLabels.set(element.elementId, value);

      group.addEventListener("click", () => this.state.select(element.elementId));
      this.groups.set(element.elementId, group);
      this.svg.append(group);
    }
    this.highlight(this.state.get()?.value ?? null);
  }

  // Live data hook: the dashboard pushes the latest observed value for a
  // thing and the matching element (if any) refreshes its value label.
  pushValue(elementId: string, text: string): void {
    const label = this.valueLabels.get(elementId);
    if (label) label.textContent = text;
  }

  elementIds(): string[] {
    return [...this.groups.keys()];
  }

  private highlight(selectedId: string | null): void {
    for (const [id, group] of this.groups) {
      if (id === selectedId) group.classList.add("selected");
      else group.classList.remove("selected");
    }
    this.statusLine.textContent = selectedId ? `selected: ${selectedId}` : "no selection";
  }

  private drawShape(shape: SceneElement["shape"]): SVGElement {
    switch (shape) {
      case "circle":
        return svgEl("circle", { cx: "0", cy: "20", r: "18", class: "shape" });
      case "tank":
        return svgEl("rect", { x: "-40", y: "0", width: "80", height: "44", rx: "10", class: "shape" });
      case "valve":
        return svgEl("polygon", { points: "-16,4 16,4 0,36", class: "shape" });
      case "rect":
        return svgEl("rect", { x: "-24", y: "4", width: "48", height: "32", class: "shape" });
    }
  }
}
