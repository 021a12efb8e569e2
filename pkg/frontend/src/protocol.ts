/** Frame types and codecs for the gateway WebSocket channel.
 *
 * Every message is one JSON object with a short "t" tag; some arrive
 * with a trailing newline, some without, so decode trims. Context
 * series come packed as columns (shared start timestamp, step or
 * explicit offsets, values as scaled integers) and are expanded here.
 */

export interface AlertFrame {
  t: "ALERT";
  sub: string;
  tr: "RAISED" | "CLEARED";
  eps: string[];
  obs: number;
  thr: number;
  ts: number;
  g?: string;
  n?: number;
}

export interface SubOkFrame {
  t: "SUB_OK";
  id: string;
}

export interface SubErrFrame {
  t: "SUB_ERR";
  msg: string;
}

/** [host, vm, metric, ts0, step-or-offsets, k_scale, ints] */
export type WireSeries = [
  string,
  number | null,
  string,
  number,
  number | number[],
  number,
  number[],
];

export interface CtxRespFrame {
  t: "CTX_RESP";
  s: WireSeries[];
  partial?: boolean;
}

export type ServerFrame =
  | AlertFrame
  | SubOkFrame
  | SubErrFrame
  | CtxRespFrame
  | { t: "PING" }
  | { t: "PONG" };

export function decodeFrame(raw: string): ServerFrame {
  return JSON.parse(raw.trim()) as ServerFrame;
}

export function subFrame(dsl: string): { t: "SUB"; dsl: string } {
  return { t: "SUB", dsl };
}

export function ctxReqFrame(
  eps: string[],
  from: number,
  to: number,
): { t: "CTX_REQ"; eps: string[]; from: number; to: number } {
  return { t: "CTX_REQ", eps, from, to };
}

export interface Point {
  ts: number;
  v: number;
}

export interface Series {
  endpoint: string;
  metric: string;
  points: Point[];
}

export function endpointName(host: string, vm: number | null): string {
  return vm === null ? host : `${host}/vm${vm}`;
}

export function decodeCtxSeries(frame: CtxRespFrame): Series[] {
  const out: Series[] = [];
  for (const [host, vm, metric, ts0, step, k, ints] of frame.s) {
    const factor = Math.pow(10, k);
    const points: Point[] = ints.map((iv, i) => ({
      ts: Array.isArray(step) ? ts0 + (step[i] ?? 0) : ts0 + i * step,
      v: iv * factor,
    }));
    out.push({ endpoint: endpointName(host, vm), metric, points });
  }
  return out;
}

/** GET /engines row; null when the engine has not reported yet. */
export interface EngineLoad {
  engine_id: string;
  at: number;
  subscription_count: number;
  batches_per_sec: number;
  eval_lag_ms: number;
  windows: number;
  involved_endpoints: number;
  stored_samples: number;
}

/** GET /subscriptions row. */
export interface SubscriptionRow {
  id: string;
  dsl: string;
  arity: number;
  offloaded: boolean;
  engines: string[];
  raised: boolean;
}
