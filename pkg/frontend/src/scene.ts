// Schematic scene model.
//
// A scene file is a JSON list of drawable elements. Element ids must be
// registry thing ids: the click contract forwards them verbatim as the
// dashboard selection, and telemetry lookups use them as-is.

export interface SceneElement {
  elementId: string;
  shape: "rect" | "circle" | "tank" | "valve";
  position: { x: number; y: number };
  label: string;
}

export function parseScene(raw: unknown): SceneElement[] {
  if (!Array.isArray(raw)) throw new Error("scene must be a JSON array");
  return raw.map((item, i) => {
    if (typeof item !== "object" || item === null) {
      throw new Error(`scene element ${i} is not an object`);
    }
    const e = item as Record<string, unknown>;
    if (typeof e.elementId !== "string" || !e.elementId) {
      throw new Error(`scene element ${i} is missing elementId`);
    }
    const pos = e.position as { x?: unknown; y?: unknown } | undefined;
    if (!pos || typeof pos.x !== "number" || typeof pos.y !== "number") {
      throw new Error(`scene element ${i} (${e.elementId}) needs numeric position.x/y`);
    }
    const shape = typeof e.shape === "string" ? e.shape : "rect";
    return {
      elementId: e.elementId,
      shape: (["rect", "circle", "tank", "valve"].includes(shape) ? shape : "rect") as SceneElement["shape"],
      position: { x: pos.x, y: pos.y },
      label: typeof e.label === "string" ? e.label : e.elementId,
    };
  });
}

// Default scene: the distillation unit of the worked example config,
// its feed/pressure instruments, and a few bed temperature sensors.
export const DEFAULT_SCENE: SceneElement[] = [
  { elementId: "cepsa:LSRC3002", shape: "tank", position: { x: 320, y: 60 }, label: "LSRC3002 unit" },
  { elementId: "cepsa:LSRC3002.PF", shape: "valve", position: { x: 80, y: 120 }, label: "PF feed" },
  { elementId: "cepsa:LSRC3002.PI3001", shape: "circle", position: { x: 80, y: 220 }, label: "PI3001" },
  { elementId: "cepsa:LSRC3002.TI3101", shape: "circle", position: { x: 560, y: 100 }, label: "TI3101" },
  { elementId: "cepsa:LSRC3002.TI3102", shape: "circle", position: { x: 560, y: 180 }, label: "TI3102" },
  { elementId: "cepsa:LSRC3002.TI3103", shape: "circle", position: { x: 560, y: 260 }, label: "TI3103" },
];
