import { describe, expect, it } from "vitest";
import {
  badgeHtml,
  caretHtml,
  contextHtml,
  enginesHtml,
  feedEntryHtml,
  feedHtml,
  fmtDur,
  fmtTs,
  panelHtml,
  subsHtml,
  validationHtml,
} from "../src/render.js";
import { AlertFeedEntry, ContextState } from "../src/store.js";
import { decodeCtxSeries, CtxRespFrame, WireSeries } from "../src/protocol.js";

function entry(over: Partial<AlertFeedEntry> = {}): AlertFeedEntry {
  return {
    key: "s-000001|RAISED|171000",
    sub: "s-000001",
    transition: "RAISED",
    endpoints: ["h1/vm0"],
    observed: 97.25,
    threshold: 90,
    sampleTs: 171000,
    group: null,
    arity: null,
    receivedAt: 171200,
    read: false,
    episodeMs: null,
    ...over,
  };
}

describe("feed", () => {
  it("shows an explicit empty state before any alert arrives", () => {
    expect(feedHtml([])).toContain("No alerts yet");
  });

  it("marks unread RAISED entries and renders the sample time", () => {
    const html = feedEntryHtml(entry());
    expect(html).toContain("raised unread");
    expect(html).toContain("00:02:51");
    expect(html).toContain("observed 97.25 vs 90");
  });

  it("shows the episode duration on a paired CLEARED", () => {
    const html = feedEntryHtml(
      entry({ transition: "CLEARED", episodeMs: 60000, read: true }),
    );
    expect(html).toContain("after 1m");
    expect(html).not.toContain("unread");
  });

  it("summarizes group alerts by group name and arity", () => {
    const html = feedEntryHtml(entry({ group: "cellA", arity: 12 }));
    expect(html).toContain("cellA (12 endpoints)");
  });

  it("escapes whatever came off the wire", () => {
    const html = feedEntryHtml(entry({ endpoints: ["<img>"] }));
    expect(html).toContain("&lt;img&gt;");
    expect(html).not.toContain("<img>");
  });
});

describe("badge", () => {
  it("renders a count only when something is unread", () => {
    expect(badgeHtml(0)).toBe("");
    expect(badgeHtml(3)).toContain(">3<");
  });
});

describe("rule validation view", () => {
  it("puts the caret under the reported column", () => {
    const html = caretHtml("WHEN BOGUS(x) > 1 ON NODE h1", 6);
    const lines = html.replace("<pre class=\"caret\">", "").split("\n");
    expect(lines[1].startsWith(" ".repeat(5) + "^")).toBe(true);
  });

  it("clamps a column past the end of the line", () => {
    const html = caretHtml("WHEN", 99);
    expect(html).toContain("WHEN\n    ^");
  });

  it("renders ok state with the canonical echo", () => {
    const html = validationHtml({
      text: "when value(x) > 1 on node h1",
      validation: { state: "ok", canonical: "WHEN VALUE(x) > 1 ON NODE h1" },
      pendingRetry: false,
    });
    expect(html).toContain("WHEN VALUE(x) &gt; 1 ON NODE h1");
  });

  it("renders an error inline with a caret when it has a position", () => {
    const html = validationHtml({
      text: "WHEN BOGUS(x) > 1 ON NODE h1",
      validation: { state: "error", message: "expected VALUE..., got 'BOGUS' (line 1, col 6)", col: 6 },
      pendingRetry: false,
    });
    expect(html).toContain("err");
    expect(html).toContain("caret");
  });

  it("offers a retry when a submit was interrupted", () => {
    const html = validationHtml({
      text: "WHEN VALUE(x) > 1 ON NODE h1",
      validation: { state: "ok", canonical: "WHEN VALUE(x) > 1 ON NODE h1" },
      pendingRetry: true,
    });
    expect(html).toContain("retry-btn");
    expect(html).toContain("The rule text is kept");
  });
});

describe("context view", () => {
  const ready = (series: ContextState & { state: "ready" }): string => contextHtml(series);

  it("renders one panel per metric per endpoint from a single response", () => {
    // A VM alert pulls context for the VM and its host: 2 endpoints x 7
    // metrics packed into one CTX_RESP.
    const metrics = [
      "user_cpu",
      "system_cpu",
      "io_wait",
      "net_rx",
      "net_tx",
      "entropy",
      "ambient_temp",
    ];
    const s: WireSeries[] = [];
    for (const vm of [null, 0] as Array<number | null>) {
      for (const m of metrics) {
        s.push(["h1", vm, m, 100000, 15000, -2, [3500, 3600, 3700]]);
      }
    }
    const frame: CtxRespFrame = { t: "CTX_RESP", s };
    const html = ready({
      state: "ready",
      title: "s-000001 at 00:02:51",
      markTs: 130000,
      series: decodeCtxSeries(frame),
      partial: false,
    });
    expect(html.match(/<figure class="panel">/g)).toHaveLength(14);
    expect(html).toContain("h1 · user_cpu");
    expect(html).toContain("h1/vm0 · ambient_temp");
    expect(html).not.toContain("partial");
  });

  it("notices an empty slice instead of rendering nothing", () => {
    const html = ready({
      state: "ready",
      title: "x",
      markTs: 0,
      series: [],
      partial: false,
    });
    expect(html).toContain("context expired or not retained");
  });

  it("flags a partial answer", () => {
    const html = ready({
      state: "ready",
      title: "x",
      markTs: 0,
      series: [{ endpoint: "h1", metric: "user_cpu", points: [{ ts: 0, v: 1 }] }],
      partial: true,
    });
    expect(html).toContain("partial");
  });

  it("marks the alert instant inside the plotted range", () => {
    const series = {
      endpoint: "h1",
      metric: "user_cpu",
      points: [
        { ts: 0, v: 10 },
        { ts: 1000, v: 20 },
        { ts: 2000, v: 15 },
      ],
    };
    expect(panelHtml(series, 1000)).toContain('class="mark"');
    expect(panelHtml(series, 99999)).not.toContain('class="mark"');
  });

  it("shows a loading state", () => {
    expect(contextHtml({ state: "loading", title: "x", markTs: 0 })).toContain("loading");
    expect(contextHtml({ state: "idle" })).toBe("");
  });
});

describe("fleet tables", () => {
  it("renders engines that have not reported as offline", () => {
    const html = enginesHtml({
      E1: {
        engine_id: "E1",
        at: 1000,
        subscription_count: 12,
        batches_per_sec: 4.5,
        eval_lag_ms: 3.2,
        windows: 9,
        involved_endpoints: 2,
        stored_samples: 4096,
      },
      E2: null,
    });
    expect(html).toContain("E1");
    expect(html).toContain("no report yet");
  });

  it("highlights raised subscriptions", () => {
    const html = subsHtml([
      {
        id: "s-000001",
        dsl: "WHEN VALUE(x) > 1 ON NODE h1",
        arity: 1,
        offloaded: false,
        engines: ["E1"],
        raised: true,
      },
    ]);
    expect(html).toContain('class="hot"');
    expect(html).toContain("RAISED");
  });
});

describe("formatting", () => {
  it("prints durations compactly", () => {
    expect(fmtDur(4000)).toBe("4s");
    expect(fmtDur(60000)).toBe("1m");
    expect(fmtDur(200000)).toBe("3m 20s");
  });

  it("prints sample timestamps as UTC time of day", () => {
    expect(fmtTs(171000)).toBe("00:02:51");
  });
});
