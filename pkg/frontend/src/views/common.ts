// Shared bits for the entity views.

import { ApiError } from "../api.js";
import { el } from "../dom.js";

export function errorBox(): { node: HTMLElement; show: (err: unknown) => void; clear: () => void } {
  const node = el("p", { class: "error", text: "" });
  return {
    node,
    show(err: unknown) {
      node.textContent =
        err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
    },
    clear() {
      node.textContent = "";
    },
  };
}

// Feature values typed into forms arrive as strings; numbers should stay
// numbers on the wire.
export function parseScalar(text: string): unknown {
  const trimmed = text.trim();
  if (trimmed === "") return "";
  if (trimmed === "true") return true;
  if (trimmed === "false") return false;
  if (trimmed === "null") return null;
  const num = Number(trimmed);
  return Number.isFinite(num) ? num : text;
}

export function parseJsonOrNull(text: string): unknown | null {
  try {
    return JSON.parse(text);
  } catch {
    return null;
  }
}

export function section(title: string, ...children: (Node | string)[]): HTMLElement {
  return el("section", { class: "panel" }, el("h3", { text: title }), ...children);
}

export function row(label: string, input: HTMLElement): HTMLElement {
  return el("div", { class: "form-row" }, el("label", { text: label }), input);
}
