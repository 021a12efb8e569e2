/** Wires the store, the gateway socket, and the static page skeleton.
 *
 * The page never polls for alerts: the only alert path is the push
 * socket. GET /engines and GET /subscriptions are control-plane reads,
 * fetched once per press of the refresh button.
 */

import { GatewaySocket, clientId, wsUrl } from "./transport.js";
import { Store } from "./store.js";
import {
  ServerFrame,
  subFrame,
  ctxReqFrame,
  decodeCtxSeries,
  EngineLoad,
  SubscriptionRow,
} from "./protocol.js";
import {
  badgeHtml,
  connHtml,
  contextHtml,
  feedHtml,
  fleetHtml,
  fmtTs,
  mySubsHtml,
  validationHtml,
} from "./render.js";

const CONTEXT_SPAN_MS = 10 * 60 * 1000; // default drill-in range

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

export function startApp(): void {
  const store = new Store();
  const sock = new GatewaySocket(wsUrl(window.location, clientId(window.localStorage)));

  const regions = {
    feed: el("feed"),
    validation: el("validation"),
    mysubs: el("mysubs"),
    fleetBody: el("fleet-body"),
    context: el("context"),
    badge: el("badge"),
    conn: el("conn"),
  };
  const rule = el<HTMLTextAreaElement>("rule");
  const submit = el<HTMLButtonElement>("submit");
  const tabs: Record<string, HTMLElement> = {
    feed: el("tab-feed"),
    editor: el("tab-editor"),
    fleet: el("tab-fleet"),
    context: el("tab-context"),
  };

  function render(): void {
    regions.feed.innerHTML = feedHtml(store.feed);
    regions.validation.innerHTML = validationHtml(store.draft);
    regions.mysubs.innerHTML = mySubsHtml(store.mySubs);
    regions.fleetBody.innerHTML = fleetHtml(store.fleet);
    regions.context.innerHTML = contextHtml(store.context);
    regions.badge.innerHTML = badgeHtml(store.unreadCount());
    regions.conn.innerHTML = connHtml(store.conn);
    submit.disabled = !store.canSubmit();
    for (const [name, section] of Object.entries(tabs)) {
      section.hidden = name !== store.tab;
    }
    document.querySelectorAll<HTMLButtonElement>("nav button[data-tab]").forEach((b) => {
      b.classList.toggle("active", b.dataset.tab === store.tab);
    });
    // The textarea is part of the static skeleton and is never
    // re-rendered, so typing focus survives every state change. Only
    // sync it when the store cleared the draft (successful submit).
    if (store.draft.text === "" && rule.value !== "") rule.value = "";
  }
  store.subscribe(render);

  sock.onStatus = (s) => store.setConn(s);
  sock.onFrame = (f: ServerFrame) => {
    switch (f.t) {
      case "ALERT":
        store.ingestAlert(f, Date.now());
        break;
      case "SUB_OK":
        store.subAccepted(f.id);
        break;
      case "SUB_ERR":
        store.subRejected(f.msg);
        break;
      case "CTX_RESP":
        store.contextReady(decodeCtxSeries(f), f.partial === true);
        break;
      default:
        // PING keepalives and anything newer than us: ignore, never reply.
        break;
    }
  };

  let debounce: ReturnType<typeof setTimeout> | null = null;
  rule.addEventListener("input", () => {
    if (debounce !== null) clearTimeout(debounce);
    debounce = setTimeout(() => store.setDraftText(rule.value), 150);
  });

  function trySubmit(): void {
    store.setDraftText(rule.value); // don't trust a stale debounce
    const canonical = store.takeSubmission();
    if (canonical === null) return;
    if (!sock.send(subFrame(canonical))) store.submitInterrupted();
  }
  submit.addEventListener("click", trySubmit);
  regions.validation.addEventListener("click", (ev) => {
    if ((ev.target as HTMLElement).id === "retry-btn") trySubmit();
  });

  regions.feed.addEventListener("click", (ev) => {
    const btn = (ev.target as HTMLElement).closest<HTMLElement>(".ctx-btn");
    if (!btn) return;
    const entry = store.feed.find((e) => e.key === btn.dataset.key);
    if (!entry) return;
    const from = entry.sampleTs - CONTEXT_SPAN_MS;
    const title = `${entry.sub} at ${fmtTs(entry.sampleTs)}`;
    store.contextLoading(title, entry.sampleTs);
    store.setTab("context");
    if (!sock.send(ctxReqFrame(entry.endpoints, from, entry.sampleTs))) {
      store.contextReady([], false); // renders the expired/not-retained notice
    }
  });
  regions.context.addEventListener("click", (ev) => {
    if ((ev.target as HTMLElement).id === "ctx-close") {
      store.contextClosed();
      store.setTab("feed");
    }
  });

  el("fleet-refresh").addEventListener("click", async () => {
    try {
      const [engRes, subRes] = await Promise.all([
        fetch("/engines"),
        fetch("/subscriptions"),
      ]);
      if (!engRes.ok || !subRes.ok)
        throw new Error(`control API: ${engRes.status}/${subRes.status}`);
      const engines = (await engRes.json()) as Record<string, EngineLoad | null>;
      const subs = (await subRes.json()) as SubscriptionRow[];
      store.setFleet(engines, subs);
    } catch (e) {
      store.setFleetError(e instanceof Error ? e.message : String(e));
    }
  });

  document.querySelectorAll<HTMLButtonElement>("nav button[data-tab]").forEach((b) => {
    b.addEventListener("click", () => store.setTab(b.dataset.tab as Store["tab"]));
  });

  render();
  sock.connect();
}

if (typeof document !== "undefined" && document.getElementById("feed")) {
  startApp();
}
