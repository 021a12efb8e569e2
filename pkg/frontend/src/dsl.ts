/** Client-side check of the rule language, for editor feedback only.
 *
 * Mirrors the server grammar: same token charset (numbers and idents
 * overlap, longer match wins, numbers win ties), same error wording,
 * same "(line 1, col N)" convention, same canonical rendering. The
 * server stays authoritative; whatever it rejects is shown as-is.
 */

export type Validation =
  | { state: "unchecked" }
  | { state: "ok"; canonical: string }
  | { state: "error"; message: string; col?: number };

const AGGS = [
  "VALUE",
  "MIN",
  "MAX",
  "MEAN",
  "MEDIAN",
  "STDDEV",
  "VARIANCE",
  "PERCENTILE",
] as const;

const KEYWORDS = new Set<string>([
  "WHEN",
  "OVER",
  "LAST",
  "SAMPLES",
  "SECONDS",
  "ON",
  "NODE",
  "GROUP",
  ...AGGS,
]);

const NUMBER_RE = /^-?(?:\d+(?:\.\d+)?|\.\d+)(?:[eE][+-]?\d+)?/;
const IDENT_RE = /^[A-Za-z0-9_./-]+/;
const CMP_RE = /^(?:>=|<=|>|<)/;

interface Tok {
  kind: "IDENT" | "NUMBER" | "CMP" | "LPAREN" | "RPAREN" | "LBRACKET" | "RBRACKET" | "EOF";
  text: string;
  line: number;
  col: number; // 1-based
}

class RuleError extends Error {
  line?: number;
  col?: number;

  constructor(message: string, line?: number, col?: number) {
    super(col === undefined ? message : `${message} (line ${line}, col ${col})`);
    this.line = line;
    this.col = col;
  }
}

const PUNCT_KIND: Record<string, Tok["kind"]> = {
  "(": "LPAREN",
  ")": "RPAREN",
  "[": "LBRACKET",
  "]": "RBRACKET",
};

function tokenize(text: string): Tok[] {
  const toks: Tok[] = [];
  let pos = 0;
  let line = 1;
  let col = 1;
  while (pos < text.length) {
    const rest = text.slice(pos);
    let kind: Tok["kind"] | "WS";
    let tokText: string;
    const ws = /^\s+/.exec(rest);
    const cmp = CMP_RE.exec(rest);
    if (ws) {
      kind = "WS";
      tokText = ws[0];
    } else if (cmp) {
      kind = "CMP";
      tokText = cmp[0];
    } else if (PUNCT_KIND[rest[0]]) {
      kind = PUNCT_KIND[rest[0]];
      tokText = rest[0];
    } else {
      // Idents may contain digits, dots, and dashes (hostnames), so
      // numbers and idents overlap; take the longer match, numbers
      // winning ties so thresholds lex as numbers.
      const mn = NUMBER_RE.exec(rest);
      const mi = IDENT_RE.exec(rest);
      if (!mn && !mi) throw new RuleError(`unexpected character '${rest[0]}'`, line, col);
      if (mi && (!mn || mi[0].length > mn[0].length)) {
        kind = "IDENT";
        tokText = mi[0];
      } else {
        kind = "NUMBER";
        tokText = (mn as RegExpExecArray)[0];
      }
    }
    if (kind !== "WS") toks.push({ kind, text: tokText, line, col });
    const nl = tokText.split("\n").length - 1;
    if (nl) {
      line += nl;
      col = tokText.length - tokText.lastIndexOf("\n");
    } else {
      col += tokText.length;
    }
    pos += tokText.length;
  }
  toks.push({ kind: "EOF", text: "", line, col });
  return toks;
}

function fmtNum(v: number): string {
  // Same visible form as the server's renderer for practical thresholds:
  // integral floats print as integers, the rest as shortest round-trip.
  return String(v);
}

function isIdentText(text: string): boolean {
  const m = IDENT_RE.exec(text);
  return m !== null && m[0] === text;
}

function endpointCanonical(text: string): string | null {
  if (text.includes("/")) {
    const idx = text.lastIndexOf("/");
    const host = text.slice(0, idx);
    const m = /^vm(\d+)$/.exec(text.slice(idx + 1));
    if (!m || !host) return null;
    return `${host}/vm${Number(m[1])}`;
  }
  return text;
}

class Parser {
  private toks: Tok[];
  private i = 0;

  constructor(text: string) {
    this.toks = tokenize(text);
  }

  private get cur(): Tok {
    return this.toks[this.i];
  }

  private fail(want: string): RuleError {
    const t = this.cur;
    const got = t.kind === "EOF" ? "end of input" : `'${t.text}'`;
    return new RuleError(`expected ${want}, got ${got}`, t.line, t.col);
  }

  private advance(): Tok {
    const t = this.cur;
    if (t.kind !== "EOF") this.i += 1;
    return t;
  }

  private expect(kind: Tok["kind"], want: string): Tok {
    if (this.cur.kind !== kind) throw this.fail(want);
    return this.advance();
  }

  private keyword(...words: string[]): string {
    const t = this.cur;
    if (t.kind === "IDENT" && words.includes(t.text.toUpperCase())) {
      this.advance();
      return t.text.toUpperCase();
    }
    throw this.fail(words.join(" or "));
  }

  private peekKeyword(...words: string[]): boolean {
    const t = this.cur;
    return t.kind === "IDENT" && words.includes(t.text.toUpperCase());
  }

  private ident(what: string): Tok {
    const t = this.cur;
    // A pure number is a legal ident too (hosts like "42"), as long as
    // its spelling stays inside the ident charset (no +, no spaces).
    if (t.kind === "NUMBER" && isIdentText(t.text)) return this.advance();
    if (t.kind !== "IDENT") throw this.fail(what);
    if (KEYWORDS.has(t.text.toUpperCase()))
      throw new RuleError(`expected ${what}, got keyword '${t.text}'`, t.line, t.col);
    return this.advance();
  }

  private number(what: string): Tok {
    return this.expect("NUMBER", what);
  }

  private integer(what: string): [number, Tok] {
    const t = this.expect("NUMBER", what);
    if (!/^-?\d+$/.test(t.text))
      throw new RuleError(`expected ${what} (an integer), got '${t.text}'`, t.line, t.col);
    return [Number(t.text), t];
  }

  parse(): string {
    this.keyword("WHEN");
    const agg = this.agg();
    this.expect("LPAREN", "'(' after aggregator");
    const metric = this.ident("metric name").text;
    this.expect("RPAREN", "')' after metric name");

    let window: string | null = null;
    if (this.peekKeyword("OVER")) window = this.window(agg);

    const cmpTok = this.expect("CMP", "comparison operator");
    const thrTok = this.number("threshold");
    const threshold = Number(thrTok.text);
    if (!Number.isFinite(threshold))
      throw new RuleError(`threshold must be finite, got ${thrTok.text}`);

    this.keyword("ON");
    const scope = this.scope();
    this.expect("EOF", "end of rule");

    if (agg === "VALUE" && window !== null)
      throw new RuleError("VALUE admits no window clause; it always reads the latest sample");

    const parts = [`WHEN ${this.aggHead}(${metric})`];
    if (window !== null) parts.push(window);
    parts.push(`${cmpTok.text} ${fmtNum(threshold)}`);
    parts.push(`ON ${scope}`);
    return parts.join(" ");
  }

  private aggHead = "";

  private agg(): string {
    const word = this.keyword(...AGGS);
    if (word !== "PERCENTILE") {
      this.aggHead = word;
      return word;
    }
    this.expect("LBRACKET", "'[' after PERCENTILE");
    const tok = this.number("percentile rank");
    this.expect("RBRACKET", "']' after percentile rank");
    const p = Number(tok.text);
    if (!(p > 0 && p < 100))
      throw new RuleError(`percentile rank must be strictly between 0 and 100, got ${tok.text}`);
    this.aggHead = `PERCENTILE[${fmtNum(p)}]`;
    return word;
  }

  private window(agg: string): string {
    void agg; // VALUE check happens after the full rule parses, like the server
    this.keyword("OVER");
    this.keyword("LAST");
    const [n] = this.integer("window length");
    const unit = this.keyword("SAMPLES", "SECONDS");
    if (n < 1) throw new RuleError(`window length must be >= 1, got ${n}`);
    return `OVER LAST ${n} ${unit}`;
  }

  private scope(): string {
    const word = this.keyword("NODE", "GROUP");
    if (word === "NODE") {
      const tok = this.ident("endpoint (host or host/vmN)");
      const ep = endpointCanonical(tok.text);
      if (ep === null)
        throw new RuleError(`bad endpoint '${tok.text}': want host or host/vmN`);
      return `NODE ${ep}`;
    }
    const tok = this.ident("group name");
    return `GROUP ${tok.text}`;
  }
}

export function checkRule(text: string): Validation {
  if (text.trim() === "") return { state: "unchecked" };
  try {
    return { state: "ok", canonical: new Parser(text).parse() };
  } catch (e) {
    if (e instanceof RuleError) {
      const col = e.line === 1 ? e.col : undefined;
      return { state: "error", message: e.message, col };
    }
    throw e;
  }
}

/** Pull a caret position out of a server-side error message. */
export function colFromMessage(msg: string): number | undefined {
  const m = /\(line 1, col (\d+)\)/.exec(msg);
  return m ? Number(m[1]) : undefined;
}
