/** HTML/SVG string builders. Pure functions of store state, so the
 * interesting rendering rules (pairing, caret placement, panel layout)
 * are testable without a DOM. */

import { Series, EngineLoad, SubscriptionRow } from "./protocol.js";
import { AlertFeedEntry, ContextState, ConnState, Draft, Fleet, MySub } from "./store.js";

export function escapeHtml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function fmtTs(ms: number): string {
  return new Date(ms).toISOString().slice(11, 19);
}

export function fmtDur(ms: number): string {
  const s = Math.round(ms / 1000);
  if (s < 60) return `${s}s`;
  const m = Math.floor(s / 60);
  const rem = s % 60;
  return rem ? `${m}m ${rem}s` : `${m}m`;
}

function fmtVal(v: number): string {
  if (Number.isInteger(v)) return String(v);
  return String(parseFloat(v.toPrecision(4)));
}

// --- alert feed -----------------------------------------------------------

export function feedEntryHtml(e: AlertFeedEntry): string {
  const cls = e.transition === "RAISED" ? "raised" : "cleared";
  const unread = !e.read && e.transition === "RAISED" ? " unread" : "";
  const eps = e.endpoints.map(escapeHtml).join(", ");
  const scope =
    e.group !== null
      ? `${escapeHtml(e.group)} (${e.arity ?? e.endpoints.length} endpoints)`
      : eps;
  const episode =
    e.transition === "CLEARED" && e.episodeMs !== null
      ? `<span class="episode">after ${fmtDur(e.episodeMs)}</span>`
      : "";
  return (
    `<article class="alert ${cls}${unread}" data-key="${escapeHtml(e.key)}">` +
    `<header><span class="tr">${e.transition}</span>` +
    `<span class="sub">${escapeHtml(e.sub)}</span>${episode}` +
    `<time>${fmtTs(e.sampleTs)}</time></header>` +
    `<p>${scope}</p>` +
    `<p class="obs">observed ${fmtVal(e.observed)} vs ${fmtVal(e.threshold)}</p>` +
    `<button class="ctx-btn" data-key="${escapeHtml(e.key)}">context</button>` +
    `</article>`
  );
}

export function feedHtml(feed: AlertFeedEntry[]): string {
  if (feed.length === 0) {
    return `<div class="empty">No alerts yet. Notifications are pushed here the moment an engine raises one.</div>`;
  }
  return feed.map(feedEntryHtml).join("");
}

export function badgeHtml(unread: number): string {
  return unread > 0 ? `<span class="badge">${unread}</span>` : "";
}

// --- rule editor ----------------------------------------------------------

/** The offending line with a caret under the reported column. */
export function caretHtml(text: string, col: number): string {
  const line = text.split("\n")[0] ?? "";
  const n = Math.max(0, Math.min(col - 1, line.length));
  return `<pre class="caret">${escapeHtml(line)}\n${" ".repeat(n)}^</pre>`;
}

export function validationHtml(draft: Draft): string {
  const v = draft.validation;
  const retry = draft.pendingRetry
    ? `<div class="retry">Connection dropped before the reply arrived. The rule text is kept; ` +
      `<button id="retry-btn">retry submit</button></div>`
    : "";
  if (v.state === "unchecked") {
    return `${retry}<div class="hint">e.g. WHEN MEAN(user_cpu) OVER LAST 5 SAMPLES &gt; 80 ON NODE h001</div>`;
  }
  if (v.state === "ok") {
    return `${retry}<div class="ok">✓ ${escapeHtml(v.canonical)}</div>`;
  }
  const caret = v.col !== undefined ? caretHtml(draft.text, v.col) : "";
  return `${retry}<div class="err">${escapeHtml(v.message)}</div>${caret}`;
}

export function mySubsHtml(subs: MySub[]): string {
  if (subs.length === 0) return `<div class="empty">Nothing submitted from this session.</div>`;
  const rows = subs
    .map(
      (s) =>
        `<li><code>${escapeHtml(s.id)}</code> <span class="dsl">${escapeHtml(s.dsl)}</span></li>`,
    )
    .join("");
  return `<ul class="mysubs">${rows}</ul>`;
}

// --- context panels ---------------------------------------------------------

const PANEL_W = 320;
const PANEL_H = 72;

/** One metric, one endpoint, one line. The alert instant gets a vertical rule. */
export function panelHtml(s: Series, markTs: number): string {
  const title = `${escapeHtml(s.endpoint)} · ${escapeHtml(s.metric)}`;
  if (s.points.length === 0) {
    return `<figure class="panel"><figcaption>${title}</figcaption><div class="nodata">no samples</div></figure>`;
  }
  const t0 = s.points[0].ts;
  const t1 = s.points[s.points.length - 1].ts;
  const vs = s.points.map((p) => p.v);
  let lo = Math.min(...vs);
  let hi = Math.max(...vs);
  if (lo === hi) {
    lo -= 1;
    hi += 1;
  }
  const x = (ts: number) => (t1 === t0 ? PANEL_W / 2 : ((ts - t0) / (t1 - t0)) * PANEL_W);
  const y = (v: number) => PANEL_H - ((v - lo) / (hi - lo)) * (PANEL_H - 8) - 4;
  const pts = s.points.map((p) => `${x(p.ts).toFixed(1)},${y(p.v).toFixed(1)}`).join(" ");
  const mark =
    markTs >= t0 && markTs <= t1
      ? `<line class="mark" x1="${x(markTs).toFixed(1)}" y1="0" x2="${x(markTs).toFixed(1)}" y2="${PANEL_H}"/>`
      : "";
  const shape =
    s.points.length === 1
      ? `<circle cx="${x(t0).toFixed(1)}" cy="${y(vs[0]).toFixed(1)}" r="2"/>`
      : `<polyline points="${pts}"/>`;
  return (
    `<figure class="panel"><figcaption>${title}` +
    `<span class="range">${fmtVal(lo)}–${fmtVal(hi)}</span></figcaption>` +
    `<svg viewBox="0 0 ${PANEL_W} ${PANEL_H}" preserveAspectRatio="none">${shape}${mark}</svg>` +
    `</figure>`
  );
}

export function contextHtml(ctx: ContextState): string {
  if (ctx.state === "idle") return "";
  const head = `<header class="ctx-head"><button id="ctx-close">← back</button><h2>${escapeHtml(ctx.title)}</h2></header>`;
  if (ctx.state === "loading") return `${head}<div class="empty">loading context…</div>`;
  if (ctx.series.length === 0) {
    return `${head}<div class="empty">context expired or not retained</div>`;
  }
  const warn = ctx.partial
    ? `<div class="warn">partial: some engines did not answer in time</div>`
    : "";
  return head + warn + ctx.series.map((s) => panelHtml(s, ctx.markTs)).join("");
}

// --- fleet -------------------------------------------------------------------

export function enginesHtml(engines: Record<string, EngineLoad | null>): string {
  const ids = Object.keys(engines).sort();
  if (ids.length === 0) return `<div class="empty">No engines registered.</div>`;
  const rows = ids
    .map((id) => {
      const r = engines[id];
      if (r === null)
        return `<tr><td>${escapeHtml(id)}</td><td colspan="5" class="offline">no report yet</td></tr>`;
      return (
        `<tr><td>${escapeHtml(id)}</td><td>${r.subscription_count}</td>` +
        `<td>${fmtVal(r.batches_per_sec)}</td><td>${fmtVal(r.eval_lag_ms)}</td>` +
        `<td>${r.windows}</td><td>${r.stored_samples}</td></tr>`
      );
    })
    .join("");
  return (
    `<table class="fleet"><thead><tr><th>engine</th><th>subs</th><th>batch/s</th>` +
    `<th>lag ms</th><th>windows</th><th>stored</th></tr></thead><tbody>${rows}</tbody></table>`
  );
}

export function subsHtml(rows: SubscriptionRow[]): string {
  if (rows.length === 0) return `<div class="empty">No active subscriptions.</div>`;
  const body = rows
    .map(
      (s) =>
        `<tr class="${s.raised ? "hot" : ""}"><td><code>${escapeHtml(s.id)}</code></td>` +
        `<td class="dsl">${escapeHtml(s.dsl)}</td><td>${s.arity}</td>` +
        `<td>${s.offloaded ? "offloaded" : escapeHtml(s.engines.join(" "))}</td>` +
        `<td>${s.raised ? "RAISED" : ""}</td></tr>`,
    )
    .join("");
  return (
    `<table class="fleet"><thead><tr><th>id</th><th>rule</th><th>arity</th>` +
    `<th>placement</th><th></th></tr></thead><tbody>${body}</tbody></table>`
  );
}

export function fleetHtml(fleet: Fleet): string {
  const err = fleet.error ? `<div class="err">${escapeHtml(fleet.error)}</div>` : "";
  const at = fleet.fetchedAt
    ? `<div class="hint">fetched ${fmtTs(fleet.fetchedAt)}</div>`
    : `<div class="hint">press refresh to query the control API</div>`;
  return (
    err +
    at +
    `<h3>Engines</h3>` +
    enginesHtml(fleet.engines) +
    `<h3>Subscriptions</h3>` +
    subsHtml(fleet.subscriptions)
  );
}

export function connHtml(state: ConnState): string {
  const label = state === "open" ? "live" : state;
  return `<span class="conn ${state}">${label}</span>`;
}
