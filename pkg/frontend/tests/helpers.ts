// Shared test scaffolding: a fake backend installed as the global fetch.
//
// Every request the console makes lands here, which gives the tests a real
// network boundary to assert against: what was called, how often, with what
// body. Handlers are (method, path regex) rows; anything unmatched answers
// with an empty list or object so read-only renders do not need exhaustive
// stubbing.

import { vi } from "vitest";
import { configure, resetConfig } from "../src/api";

export interface RecordedCall {
  method: string;
  path: string;
  query: URLSearchParams;
  body: unknown;
  headers: Record<string, string>;
}

export class HttpFailure {
  constructor(
    public status: number,
    public body: unknown,
  ) {}
}

export function fail(status: number, error: string, message: string): HttpFailure {
  return new HttpFailure(status, { error, message });
}

type Responder = (match: RegExpExecArray, call: RecordedCall) => unknown;

interface HandlerRow {
  method: string;
  pattern: RegExp;
  respond: Responder;
  status: number;
}

function jsonResponse(status: number, data: unknown) {
  return {
    ok: status >= 200 && status < 300,
    status,
    statusText: `status ${status}`,
    json: async () => data,
    text: async () => JSON.stringify(data),
  };
}

export class FakeServer {
  calls: RecordedCall[] = [];
  private handlers: HandlerRow[] = [];

  /** Register a route. `respond` may be a value, a function, or a Promise. */
  on(method: string, pattern: RegExp, respond: Responder, status?: number): this;
  on(method: string, pattern: RegExp, respond: unknown, status?: number): this;
  on(method: string, pattern: RegExp, respond: Responder | unknown, status = 200): this {
    const fn: Responder = typeof respond === "function" ? (respond as Responder) : () => respond;
    this.handlers.push({ method, pattern, respond: fn, status });
    return this;
  }

  install(): this {
    vi.stubGlobal("fetch", async (url: string, init?: RequestInit) => {
      const u = new URL(url);
      const method = init?.method ?? "GET";
      const call: RecordedCall = {
        method,
        path: u.pathname,
        query: u.searchParams,
        body: init?.body !== undefined ? JSON.parse(String(init.body)) : undefined,
        headers: (init?.headers as Record<string, string>) ?? {},
      };
      this.calls.push(call);
      for (const h of this.handlers) {
        if (h.method !== method) continue;
        const m = h.pattern.exec(u.pathname);
        if (!m) continue;
        const data = await h.respond(m, call);
        if (data instanceof HttpFailure) return jsonResponse(data.status, data.body);
        return jsonResponse(h.status, data ?? {});
      }
      return jsonResponse(200, method === "GET" ? [] : {});
    });
    return this;
  }

  nonGets(): RecordedCall[] {
    return this.calls.filter((c) => c.method !== "GET");
  }

  /** Forget recorded calls; handlers stay. */
  reset(): void {
    this.calls = [];
  }
}

export const TEST_CONFIG = { server: "http://twin.test", subject: "console-user" };

/** Clean slate with a working config: most tests start here. */
export function freshConfigured(server: FakeServer): void {
  localStorage.clear();
  resetConfig();
  configure({ ...TEST_CONFIG });
  server.install();
}

/** Clean slate with no config at all. */
export function freshUnconfigured(server: FakeServer): void {
  localStorage.clear();
  resetConfig();
  server.install();
}

/** Drain pending promise chains (fetch stubs resolve on microtasks). */
export async function flush(rounds = 40): Promise<void> {
  for (let i = 0; i < rounds; i++) await Promise.resolve();
}

/** Set the page URL that currentRoute() reads, without a reload. */
export function setLocation(search: string): void {
  window.history.pushState({}, "", search ? `/?${search}` : "/");
}

export function click(node: Element | null): void {
  if (!node) throw new Error("click target not found");
  // cancelable, so views can preventDefault() anchor navigation
  node.dispatchEvent(new MouseEvent("click", { bubbles: true, cancelable: true }));
}

export function setInput(scope: Element, selector: string, value: string): void {
  const input = scope.querySelector(selector) as HTMLInputElement | HTMLTextAreaElement | null;
  if (!input) throw new Error(`input not found: ${selector}`);
  input.value = value;
}

// A stored telemetry point shaped like the server returns it.
export function tsPoint(
  thing: string,
  value: number,
  originator: string,
  ts: number,
  feature = "last_measured",
) {
  return { thing, feature, property: "value", ts, value, tags: { originator } };
}

// A twin record shaped like the server returns it.
export function twin(
  thingId: string,
  opts: {
    parent?: string | null;
    children?: Record<string, number>;
    features?: Record<string, Record<string, unknown>>;
    attrs?: Record<string, unknown>;
  } = {},
) {
  const features: Record<string, { properties: Record<string, unknown> }> = {};
  for (const [name, props] of Object.entries(opts.features ?? {})) {
    features[name] = { properties: props };
  }
  return {
    thingId,
    policyId: "core:default",
    attributes: {
      parent: opts.parent ?? null,
      children: opts.children ?? {},
      ...(opts.attrs ?? {}),
    },
    features,
  };
}
