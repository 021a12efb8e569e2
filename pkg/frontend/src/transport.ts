/** WebSocket wrapper for the gateway client channel: reconnect with
 * capped backoff, frame decode, nothing else. Frame semantics live in
 * the app layer. */

import { ServerFrame, decodeFrame } from "./protocol.js";

const BACKOFF_MIN_MS = 1000;
const BACKOFF_MAX_MS = 15000;

export type SocketStatus = "connecting" | "open" | "closed";

export function clientId(storage: Pick<Storage, "getItem" | "setItem">): string {
  // Stable per browser so the gateway can dedupe notifications per client.
  const existing = storage.getItem("dcmon-client");
  if (existing) return existing;
  const fresh =
    typeof crypto !== "undefined" && "randomUUID" in crypto
      ? crypto.randomUUID().slice(0, 13)
      : Math.random().toString(36).slice(2, 15);
  storage.setItem("dcmon-client", fresh);
  return fresh;
}

export function wsUrl(loc: { protocol: string; host: string }, id: string): string {
  const scheme = loc.protocol === "https:" ? "wss:" : "ws:";
  return `${scheme}//${loc.host}/ws?client=${encodeURIComponent(id)}`;
}

export class GatewaySocket {
  onFrame: (f: ServerFrame) => void = () => {};
  onStatus: (s: SocketStatus) => void = () => {};

  private ws: WebSocket | null = null;
  private backoff = BACKOFF_MIN_MS;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private closed = false;

  constructor(private url: string) {}

  connect(): void {
    this.closed = false;
    this.open();
  }

  private open(): void {
    this.onStatus("connecting");
    const ws = new WebSocket(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.backoff = BACKOFF_MIN_MS;
      this.onStatus("open");
    };
    ws.onmessage = (ev: MessageEvent) => {
      if (typeof ev.data !== "string") return;
      let frame: ServerFrame;
      try {
        frame = decodeFrame(ev.data);
      } catch {
        return; // tolerate junk; the server is versioned ahead of us
      }
      this.onFrame(frame);
    };
    ws.onclose = () => {
      this.ws = null;
      this.onStatus("closed");
      if (!this.closed) this.scheduleReconnect();
    };
    ws.onerror = () => {
      // onclose follows; nothing to do here
    };
  }

  private scheduleReconnect(): void {
    if (this.timer !== null) return;
    this.timer = setTimeout(() => {
      this.timer = null;
      if (!this.closed) this.open();
    }, this.backoff);
    this.backoff = Math.min(this.backoff * 2, BACKOFF_MAX_MS);
  }

  /** True if the frame went out on an open socket. */
  send(obj: object): boolean {
    if (this.ws === null || this.ws.readyState !== WebSocket.OPEN) return false;
    this.ws.send(JSON.stringify(obj));
    return true;
  }

  close(): void {
    this.closed = true;
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    this.ws?.close();
  }
}
