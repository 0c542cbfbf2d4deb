// Twins tab: root-level list, twin detail with hierarchy management,
// create form. The root list only shows twins without a parent; children
// are reached through their parent's detail page.

import * as api from "../api.js";
import { clear, el } from "../dom.js";
import { navigate, Route } from "../router.js";
import { DashboardState } from "../state.js";
import { errorBox, parseScalar, row, section } from "./common.js";

export async function renderTwins(
  container: HTMLElement,
  route: Route,
  state: DashboardState,
): Promise<void> {
  clear(container);
  if (route.mode === "create") return renderCreate(container);
  if (route.mode === "detail" && route.id) return renderDetail(container, route.id, state);
  return renderList(container);
}

async function renderList(container: HTMLElement): Promise<void> {
  const errors = errorBox();
  const newBtn = el("button", { type: "button", text: "new twin" });
  newBtn.addEventListener("click", () => navigate({ mode: "create", id: null }));
  container.append(el("h2", { text: "twins" }), newBtn, errors.node);

  let twins: api.ThingRecord[];
  try {
    twins = await api.listThings("twin");
  } catch (err) {
    errors.show(err);
    return;
  }
  // root list: twins that belong to no other twin
  const roots = twins.filter((t) => !t.attributes.parent);
  const table = el("table", { class: "entity-list" });
  table.append(
    el("tr", {}, el("th", { text: "thingId" }), el("th", { text: "policy" }), el("th", { text: "children" })),
  );
  for (const twin of roots) {
    const link = el("a", { href: "#", text: twin.thingId });
    link.addEventListener("click", (ev) => {
      ev.preventDefault();
      navigate({ id: twin.thingId, mode: "detail" });
    });
    const childCount = Object.keys(twin.attributes.children ?? {}).length;
    table.append(
      el("tr", { class: "entity-row", "data-id": twin.thingId },
        el("td", {}, link),
        el("td", { text: twin.policyId }),
        el("td", { text: String(childCount) }),
      ),
    );
  }
  container.append(table);
  if (roots.length === 0) container.append(el("p", { class: "hint", text: "no root twins yet" }));
}

async function renderDetail(container: HTMLElement, id: string, state: DashboardState): Promise<void> {
  const errors = errorBox();
  const back = el("a", { href: "#", text: "back to list" });
  back.addEventListener("click", (ev) => {
    ev.preventDefault();
    navigate({ id: null, mode: "list" });
  });
  container.append(el("h2", { text: id }), back, errors.node);

  let twin: api.ThingRecord;
  let children: Record<string, number>;
  let parents: string[];
  try {
    twin = await api.getThing(id);
    children = await api.listChildren(id);
    parents = await api.listParents(id);
  } catch (err) {
    errors.show(err);
    return;
  }

  const selectBtn = el("button", { type: "button", text: "select in dashboard" });
  selectBtn.addEventListener("click", () => state.select(id));
  container.append(selectBtn);

  const attrs = el("table", { class: "kv" });
  for (const [key, value] of Object.entries(twin.attributes)) {
    attrs.append(el("tr", {}, el("td", { text: key }), el("td", { text: JSON.stringify(value) })));
  }
  container.append(section("attributes", attrs));

  const features = el("table", { class: "kv features" });
  for (const [name, feature] of Object.entries(twin.features)) {
    for (const [prop, value] of Object.entries(feature.properties)) {
      features.append(
        el("tr", {},
          el("td", { text: `${name}.${prop}` }),
          el("td", { text: JSON.stringify(value), "data-feature": name, "data-property": prop }),
        ),
      );
    }
  }
  container.append(section("features", features));

  const parentList = el("ul", { class: "parents" });
  for (const pid of parents) {
    const link = el("a", { href: "#", text: pid });
    link.addEventListener("click", (ev) => {
      ev.preventDefault();
      navigate({ id: pid, mode: "detail" });
    });
    parentList.append(el("li", {}, link));
  }
  if (parents.length === 0) parentList.append(el("li", { class: "hint", text: "(root twin)" }));
  container.append(section("parents", parentList));

  const childList = el("ul", { class: "children" });
  for (const [cid, mult] of Object.entries(children)) {
    const link = el("a", { href: "#", text: cid });
    link.addEventListener("click", (ev) => {
      ev.preventDefault();
      navigate({ id: cid, mode: "detail" });
    });
    childList.append(el("li", {}, link, mult > 1 ? ` x${mult}` : ""));
  }
  if (Object.keys(children).length === 0) childList.append(el("li", { class: "hint", text: "(no children)" }));
  container.append(section("children", childList));

  // set one feature property: a single PUT
  const featName = el("input", { type: "text", placeholder: "feature", class: "in-feature" });
  const propName = el("input", { type: "text", placeholder: "property", value: "value", class: "in-property" });
  const propValue = el("input", { type: "text", placeholder: "new value", class: "in-value" });
  const setBtn = el("button", { type: "button", text: "set", class: "btn-set-feature" });
  setBtn.addEventListener("click", async () => {
    errors.clear();
    try {
      await api.updateThing(id, `/features/${featName.value}/properties/${propName.value}`, parseScalar(propValue.value));
      navigate({ id, mode: "detail" }); // re-render with fresh state
    } catch (err) {
      errors.show(err);
    }
  });
  container.append(section("set feature", row("feature", featName), row("property", propName), row("value", propValue), setBtn));

  // link an existing twin as child: a single PUT
  const childId = el("input", { type: "text", placeholder: "namespace:name", class: "in-child" });
  const linkBtn = el("button", { type: "button", text: "link child", class: "btn-link-child" });
  linkBtn.addEventListener("click", async () => {
    errors.clear();
    try {
      await api.linkChild(id, childId.value.trim());
      navigate({ id, mode: "detail" });
    } catch (err) {
      errors.show(err);
    }
  });
  container.append(section("link child", row("child id", childId), linkBtn));

  const delOrphan = el("button", { type: "button", text: "delete (orphan children)", class: "btn-delete" });
  delOrphan.addEventListener("click", async () => {
    errors.clear();
    try {
      await api.deleteThing(id, "orphan");
      navigate({ id: null, mode: "list" });
    } catch (err) {
      errors.show(err);
    }
  });
  const delCascade = el("button", { type: "button", text: "delete subtree", class: "btn-delete-cascade" });
  delCascade.addEventListener("click", async () => {
    errors.clear();
    try {
      await api.deleteThing(id, "cascade");
      navigate({ id: null, mode: "list" });
    } catch (err) {
      errors.show(err);
    }
  });
  container.append(section("danger", delOrphan, delCascade));
}

function renderCreate(container: HTMLElement): void {
  const errors = errorBox();
  const thingId = el("input", { type: "text", placeholder: "namespace:name", class: "in-thing-id" });
  const policyId = el("input", { type: "text", placeholder: "namespace:policy", class: "in-policy-id" });
  const feature = el("input", { type: "text", placeholder: "optional first feature", class: "in-first-feature" });
  const createBtn = el("button", { type: "button", text: "create twin", class: "btn-create" });
  createBtn.addEventListener("click", async () => {
    errors.clear();
    const body: Record<string, unknown> = {
      thingId: thingId.value.trim(),
      policyId: policyId.value.trim(),
    };
    if (feature.value.trim()) {
      body.features = { [feature.value.trim()]: { properties: { value: null } } };
    }
    try {
      const created = await api.createThing(body);
      navigate({ id: created.thingId, mode: "detail" });
    } catch (err) {
      errors.show(err);
    }
  });
  const cancel = el("a", { href: "#", text: "cancel" });
  cancel.addEventListener("click", (ev) => {
    ev.preventDefault();
    navigate({ mode: "list", id: null });
  });
  container.append(
    el("h2", { text: "new twin" }),
    errors.node,
    row("thing id", thingId),
    row("policy id", policyId),
    row("feature", feature),
    createBtn,
    cancel,
  );
}
