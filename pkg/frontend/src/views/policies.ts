// Policies tab: subject grants per policy, plain CRUD.

import * as api from "../api.js";
import { clear, el } from "../dom.js";
import { navigate, Route } from "../router.js";
import { errorBox, parseJsonOrNull, row, section } from "./common.js";

export async function renderPolicies(container: HTMLElement, route: Route): Promise<void> {
  clear(container);
  if (route.mode === "create") return renderCreate(container);
  if (route.mode === "detail" && route.id) return renderDetail(container, route.id);
  return renderList(container);
}

async function renderList(container: HTMLElement): Promise<void> {
  const errors = errorBox();
  const newBtn = el("button", { type: "button", text: "new policy" });
  newBtn.addEventListener("click", () => navigate({ mode: "create", id: null }));
  container.append(el("h2", { text: "policies" }), newBtn, errors.node);

  let policies: api.PolicyRecord[];
  try {
    policies = await api.listPolicies();
  } catch (err) {
    errors.show(err);
    return;
  }
  const list = el("ul", { class: "entity-list" });
  for (const policy of policies) {
    const link = el("a", { href: "#", text: policy.policyId });
    link.addEventListener("click", (ev) => {
      ev.preventDefault();
      navigate({ id: policy.policyId, mode: "detail" });
    });
    list.append(el("li", { class: "entity-row", "data-id": policy.policyId }, link));
  }
  container.append(list);
  if (policies.length === 0) container.append(el("p", { class: "hint", text: "no policies yet" }));
}

async function renderDetail(container: HTMLElement, id: string): Promise<void> {
  const errors = errorBox();
  const back = el("a", { href: "#", text: "back to list" });
  back.addEventListener("click", (ev) => {
    ev.preventDefault();
    navigate({ id: null, mode: "list" });
  });
  container.append(el("h2", { text: id }), back, errors.node);

  let policy: api.PolicyRecord;
  try {
    policy = await api.getPolicy(id);
  } catch (err) {
    errors.show(err);
    return;
  }
  const table = el("table", { class: "kv" });
  table.append(el("tr", {}, el("th", { text: "subject" }), el("th", { text: "read" }), el("th", { text: "write" })));
  for (const [subject, grant] of Object.entries(policy.entries)) {
    table.append(
      el("tr", {},
        el("td", { text: subject }),
        el("td", { text: grant.read ? "yes" : "no" }),
        el("td", { text: grant.write ? "yes" : "no" }),
      ),
    );
  }
  container.append(section("grants", table));

  const del = el("button", { type: "button", text: "delete policy", class: "btn-delete" });
  del.addEventListener("click", async () => {
    errors.clear();
    try {
      await api.deletePolicy(id);
      navigate({ id: null, mode: "list" });
    } catch (err) {
      errors.show(err);
    }
  });
  container.append(section("danger", del));
}

function renderCreate(container: HTMLElement): void {
  const errors = errorBox();
  const policyId = el("input", { type: "text", placeholder: "namespace:policy", class: "in-policy-id" });
  const entries = el("textarea", {
    class: "in-entries",
    placeholder: '{"admin": {"read": true, "write": true}}',
    rows: "5",
  });
  const createBtn = el("button", { type: "button", text: "create policy", class: "btn-create" });
  createBtn.addEventListener("click", async () => {
    errors.clear();
    const parsed = parseJsonOrNull(entries.value || "{}");
    if (parsed === null || typeof parsed !== "object") {
      errors.show(new Error("entries must be a JSON object"));
      return;
    }
    try {
      const created = await api.createPolicy({ policyId: policyId.value.trim(), entries: parsed });
      navigate({ id: created.policyId, mode: "detail" });
    } catch (err) {
      errors.show(err);
    }
  });
  container.append(
    el("h2", { text: "new policy" }),
    errors.node,
    row("policy id", policyId),
    row("entries (JSON)", entries),
    createBtn,
  );
}
