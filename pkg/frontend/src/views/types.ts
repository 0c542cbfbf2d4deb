// Types tab: the template side of the hierarchy. The headline action is
// instantiate, which expands a type subtree into fresh twins server-side.

import * as api from "../api.js";
import { clear, el } from "../dom.js";
import { navigate, Route } from "../router.js";
import { errorBox, row, section } from "./common.js";

export async function renderTypes(container: HTMLElement, route: Route): Promise<void> {
  clear(container);
  if (route.mode === "create") return renderCreate(container);
  if (route.mode === "detail" && route.id) return renderDetail(container, route.id);
  return renderList(container);
}

async function renderList(container: HTMLElement): Promise<void> {
  const errors = errorBox();
  const newBtn = el("button", { type: "button", text: "new type" });
  newBtn.addEventListener("click", () => navigate({ mode: "create", id: null }));
  container.append(el("h2", { text: "types" }), newBtn, errors.node);

  let types: api.ThingRecord[];
  try {
    types = await api.listTypes();
  } catch (err) {
    errors.show(err);
    return;
  }
  const table = el("table", { class: "entity-list" });
  table.append(el("tr", {}, el("th", { text: "typeId" }), el("th", { text: "children" })));
  for (const type of types) {
    const link = el("a", { href: "#", text: type.thingId });
    link.addEventListener("click", (ev) => {
      ev.preventDefault();
      navigate({ id: type.thingId, mode: "detail" });
    });
    table.append(
      el("tr", { class: "entity-row", "data-id": type.thingId },
        el("td", {}, link),
        el("td", { text: String(Object.keys(type.attributes.children ?? {}).length) }),
      ),
    );
  }
  container.append(table);
  if (types.length === 0) container.append(el("p", { class: "hint", text: "no types defined" }));
}

async function renderDetail(container: HTMLElement, id: string): Promise<void> {
  const errors = errorBox();
  const back = el("a", { href: "#", text: "back to list" });
  back.addEventListener("click", (ev) => {
    ev.preventDefault();
    navigate({ id: null, mode: "list" });
  });
  container.append(el("h2", { text: id }), back, errors.node);

  let type: api.ThingRecord;
  try {
    type = await api.getType(id);
  } catch (err) {
    errors.show(err);
    return;
  }

  const children = el("ul", { class: "children" });
  for (const [cid, mult] of Object.entries((type.attributes.children as Record<string, number>) ?? {})) {
    children.append(el("li", { text: mult > 1 ? `${cid} x${mult}` : cid }));
  }
  if (!children.firstChild) children.append(el("li", { class: "hint", text: "(no child types)" }));
  container.append(section("child types", children));

  // create a twin subtree from this template: one instantiate call
  const twinId = el("input", { type: "text", placeholder: "namespace:name", class: "in-instance-id" });
  const policyId = el("input", { type: "text", placeholder: "namespace:policy", class: "in-policy-id" });
  const instBtn = el("button", { type: "button", text: "create twin from type", class: "btn-instantiate" });
  instBtn.addEventListener("click", async () => {
    errors.clear();
    try {
      const twin = await api.instantiateType(id, {
        thingId: twinId.value.trim(),
        policyId: policyId.value.trim(),
      });
      navigate({ tab: "twins", id: twin.thingId, mode: "detail" });
    } catch (err) {
      errors.show(err);
    }
  });
  container.append(section("instantiate", row("new twin id", twinId), row("policy id", policyId), instBtn));

  const del = el("button", { type: "button", text: "delete type", class: "btn-delete" });
  del.addEventListener("click", async () => {
    errors.clear();
    try {
      await api.deleteType(id);
      navigate({ id: null, mode: "list" });
    } catch (err) {
      errors.show(err);
    }
  });
  container.append(section("danger", del));
}

function renderCreate(container: HTMLElement): void {
  const errors = errorBox();
  const typeId = el("input", { type: "text", placeholder: "namespace:name", class: "in-type-id" });
  const policyId = el("input", { type: "text", placeholder: "namespace:policy", class: "in-policy-id" });
  const createBtn = el("button", { type: "button", text: "create type", class: "btn-create" });
  createBtn.addEventListener("click", async () => {
    errors.clear();
    try {
      const created = await api.createType({
        thingId: typeId.value.trim(),
        policyId: policyId.value.trim(),
      });
      navigate({ id: created.thingId, mode: "detail" });
    } catch (err) {
      errors.show(err);
    }
  });
  container.append(el("h2", { text: "new type" }), errors.node, row("type id", typeId), row("policy id", policyId), createBtn);
}
