/** Single mutable app state; every view renders from here and every
 * event (socket frame, user input, fetch result) lands here first. */

import { AlertFrame, EngineLoad, Series, SubscriptionRow } from "./protocol.js";
import { Validation, checkRule, colFromMessage } from "./dsl.js";

export interface AlertFeedEntry {
  key: string; // sub|transition|sample_ts, the at-most-once identity
  sub: string;
  transition: "RAISED" | "CLEARED";
  endpoints: string[];
  observed: number;
  threshold: number;
  sampleTs: number;
  group: string | null;
  arity: number | null;
  receivedAt: number;
  read: boolean;
  episodeMs: number | null; // CLEARED only: time since the paired RAISED
}

export interface MySub {
  id: string;
  dsl: string;
  at: number;
}

export interface Draft {
  text: string;
  validation: Validation;
  pendingRetry: boolean; // a submit went out and the socket dropped
}

export type ContextState =
  | { state: "idle" }
  | { state: "loading"; title: string; markTs: number }
  | { state: "ready"; title: string; markTs: number; series: Series[]; partial: boolean };

export type ConnState = "connecting" | "open" | "closed";

export interface Fleet {
  engines: Record<string, EngineLoad | null>;
  subscriptions: SubscriptionRow[];
  fetchedAt: number | null;
  error: string | null;
}

const FEED_CAP = 500;

export class Store {
  feed: AlertFeedEntry[] = []; // newest first
  private seen = new Set<string>();

  draft: Draft = { text: "", validation: { state: "unchecked" }, pendingRetry: false };
  private inFlight: string | null = null; // canonical dsl of the submit awaiting SUB_OK

  mySubs: MySub[] = [];
  context: ContextState = { state: "idle" };
  conn: ConnState = "connecting";
  fleet: Fleet = { engines: {}, subscriptions: [], fetchedAt: null, error: null };
  tab: "feed" | "editor" | "fleet" | "context" = "feed";

  private listeners: Array<() => void> = [];

  subscribe(fn: () => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  // --- alerts ---------------------------------------------------------

  ingestAlert(f: AlertFrame, receivedAt: number): void {
    const key = `${f.sub}|${f.tr}|${f.ts}`;
    if (this.seen.has(key)) return; // reconnects may replay
    this.seen.add(key);
    let episodeMs: number | null = null;
    if (f.tr === "CLEARED") {
      const open = this.feed.find(
        (e) => e.sub === f.sub && e.transition === "RAISED" && e.episodeMs === null,
      );
      if (open) {
        episodeMs = f.ts - open.sampleTs;
        open.episodeMs = episodeMs; // mark the episode closed on both ends
      }
    }
    this.feed.unshift({
      key,
      sub: f.sub,
      transition: f.tr,
      endpoints: f.eps,
      observed: f.obs,
      threshold: f.thr,
      sampleTs: f.ts,
      group: f.g ?? null,
      arity: f.n ?? null,
      receivedAt,
      read: false,
      episodeMs,
    });
    if (this.feed.length > FEED_CAP) {
      for (const dropped of this.feed.splice(FEED_CAP)) this.seen.delete(dropped.key);
    }
    this.emit();
  }

  unreadCount(): number {
    let n = 0;
    for (const e of this.feed) if (!e.read && e.transition === "RAISED") n += 1;
    return n;
  }

  markAllRead(): void {
    let changed = false;
    for (const e of this.feed) {
      if (!e.read) {
        e.read = true;
        changed = true;
      }
    }
    if (changed) this.emit();
  }

  // --- rule editor ------------------------------------------------------

  setDraftText(text: string): void {
    this.draft.text = text;
    this.draft.validation = checkRule(text);
    this.emit();
  }

  canSubmit(): boolean {
    return this.draft.validation.state === "ok" && this.conn === "open";
  }

  /** Returns the canonical text to put on the wire, or null. */
  takeSubmission(): string | null {
    if (this.draft.validation.state !== "ok") return null;
    this.inFlight = this.draft.validation.canonical;
    this.draft.pendingRetry = false;
    this.emit();
    return this.inFlight;
  }

  subAccepted(id: string): void {
    const dsl = this.inFlight ?? this.draft.text;
    this.inFlight = null;
    this.mySubs.unshift({ id, dsl, at: Date.now() });
    this.draft = { text: "", validation: { state: "unchecked" }, pendingRetry: false };
    this.emit();
  }

  subRejected(msg: string): void {
    this.inFlight = null;
    this.draft.validation = { state: "error", message: msg, col: colFromMessage(msg) };
    this.emit();
  }

  /** Socket dropped (or send failed) while a submit was outstanding:
   * keep the text, surface a retry. */
  submitInterrupted(): void {
    if (this.inFlight === null) return;
    this.inFlight = null;
    this.draft.pendingRetry = true;
    this.emit();
  }

  hasInFlight(): boolean {
    return this.inFlight !== null;
  }

  // --- context drill-in ---------------------------------------------------

  contextLoading(title: string, markTs: number): void {
    this.context = { state: "loading", title, markTs };
    this.emit();
  }

  contextReady(series: Series[], partial: boolean): void {
    if (this.context.state === "idle") return;
    const { title, markTs } = this.context;
    this.context = { state: "ready", title, markTs, series, partial };
    this.emit();
  }

  contextClosed(): void {
    this.context = { state: "idle" };
    this.emit();
  }

  // --- connection and fleet -------------------------------------------------

  setConn(state: ConnState): void {
    this.conn = state;
    if (state !== "open" && this.inFlight !== null) {
      this.inFlight = null;
      this.draft.pendingRetry = true;
    }
    this.emit();
  }

  setFleet(engines: Record<string, EngineLoad | null>, subs: SubscriptionRow[]): void {
    this.fleet = { engines, subscriptions: subs, fetchedAt: Date.now(), error: null };
    this.emit();
  }

  setFleetError(msg: string): void {
    this.fleet = { ...this.fleet, error: msg };
    this.emit();
  }

  setTab(tab: Store["tab"]): void {
    this.tab = tab;
    if (tab === "feed") this.markAllRead();
    else this.emit();
  }
}
