// Connection settings page. The console is useless without a server
// address, so until the form is filled every other part of the UI stays
// disabled and a banner says why.

import { activeConfig, ApiError, configure, health, isConfigured } from "../api.js";
import { el } from "../dom.js";

export function renderConfigPage(container: HTMLElement, onConfigured: () => void): void {
  const cfg = activeConfig();
  const status = el("p", { class: "config-status", text: "" });

  const serverInput = el("input", {
    type: "text",
    id: "cfg-server",
    placeholder: "http://127.0.0.1:8080",
    value: cfg?.server ?? "",
  });
  const subjectInput = el("input", {
    type: "text",
    id: "cfg-subject",
    placeholder: "admin",
    value: cfg?.subject ?? "admin",
  });

  const save = el("button", { type: "button", id: "cfg-save", text: "save and connect" });
  save.addEventListener("click", async () => {
    const server = serverInput.value.trim();
    if (!server) {
      status.textContent = "server address is required";
      return;
    }
    configure({ server, subject: subjectInput.value.trim() || "admin" });
    try {
      await health();
      status.textContent = "connected";
      onConfigured();
    } catch (err) {
      const detail = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
      // stay on this page: a re-render here would wipe the message
      status.textContent = `connection failed (${detail}); settings kept, fix and retry`;
    }
  });

  container.append(
    el("h2", { text: "server connection" }),
    isConfigured()
      ? el("p", { class: "hint", text: "connected configuration below; edit to repoint the console" })
      : el("p", { class: "banner", id: "config-banner", text: "Not configured: fill in the server address to enable the console." }),
    el("div", { class: "form-row" }, el("label", { for: "cfg-server", text: "server URL" }), serverInput),
    el("div", { class: "form-row" }, el("label", { for: "cfg-subject", text: "subject (policy principal)" }), subjectInput),
    save,
    status,
  );
}
