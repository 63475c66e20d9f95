/**
 * Dashboard model tests: the model is a pure projection of service payloads,
 * and folding in a feedback ack agrees with refetching the report.
 */

import { describe, expect, it } from "vitest";
import type { DscMeans, FeedbackAck, ReportPayload, SampleRow } from "../src/api.js";
import { applyAck, fromReport, withSample } from "../src/dashboard.js";

function row(index: number, r1: number, rx: number): SampleRow {
  return {
    index,
    sample_id: `s${index}`,
    domain: "targetA",
    rater: "R2",
    chosen_head: "main",
    dsc_r1: r1,
    dsc_r1_od: r1 + 0.01,
    dsc_r1_oc: r1 - 0.01,
    dsc_rx: rx,
    dsc_rx_od: rx + 0.01,
    dsc_rx_oc: rx - 0.01,
    mdiv_mean: 0.02,
    failed: false,
    mask: { h: 1, w: 1, runs: [0, 1] },
  };
}

function means(rows: SampleRow[]): DscMeans {
  const mean = (xs: number[]) => (xs.length ? xs.reduce((a, b) => a + b, 0) / xs.length : 0);
  return {
    n: rows.length,
    vs_r1: mean(rows.map((r) => r.dsc_r1)),
    vs_r1_od: mean(rows.map((r) => r.dsc_r1_od)),
    vs_r1_oc: mean(rows.map((r) => r.dsc_r1_oc)),
    vs_rstar: mean(rows.map((r) => r.dsc_rx)),
    vs_rstar_od: mean(rows.map((r) => r.dsc_rx_od)),
    vs_rstar_oc: mean(rows.map((r) => r.dsc_rx_oc)),
  };
}

function report(rows: SampleRow[], cursor: number): ReportPayload {
  return {
    method: "hitta",
    seed: 0,
    config_fingerprint: "abc123",
    domains: ["targetA"],
    rows,
    traces: Object.fromEntries(rows.map((r) => [r.sample_id, [0.05, 0.04, 0.03]])),
    aggregate: { overall: means(rows), per_domain: { targetA: means(rows) } },
    phase: "ready",
    cursor,
    stream_length: 8,
  };
}

describe("dashboard projection", () => {
  it("reads counts, running means and the newest trace straight from the report", () => {
    const model = fromReport(report([row(0, 0.8, 0.7), row(1, 0.9, 0.85)], 2));
    expect(model.completed).toBe(2);
    expect(model.streamLength).toBe(8);
    expect(model.remaining).toBe(6);
    expect(model.running).toEqual({ n: 2, vs_r1: (0.8 + 0.9) / 2, vs_rstar: (0.7 + 0.85) / 2 });
    expect(model.points.map((p) => p.vsR1)).toEqual([0.8, 0.9]);
    expect(model.lastTrace).toEqual([0.05, 0.04, 0.03]);
    expect(model.lastDurationS).toBeNull();
  });

  it("shows no running means before the first commit", () => {
    const model = fromReport(report([], 0));
    expect(model.completed).toBe(0);
    expect(model.running).toBeNull();
    expect(model.points).toEqual([]);
    expect(model.lastTrace).toEqual([]);
  });

  it("applying an ack agrees with refetching the report", () => {
    const before = report([row(0, 0.8, 0.7)], 1);
    const after = report([row(0, 0.8, 0.7), row(1, 0.9, 0.85)], 2);
    const overall = after.aggregate.overall;
    const ack: FeedbackAck = {
      row: after.rows[1],
      running: { n: overall.n, vs_r1: overall.vs_r1, vs_rstar: overall.vs_rstar },
      loss_trace: [{ total: 0.5 }, { total: 0.4 }],
      duration_s: 2.5,
      phase: "ready",
      cursor: 2,
    };

    // the presented sample carried its own trace before the commit
    const presented = withSample(fromReport(before), {
      done: false,
      index: 1,
      sample_id: "s1",
      domain: "targetA",
      rater: "R2",
      h: 1,
      w: 1,
      image_png_b64: "",
      masks: {},
      mdiv: null,
      loss_trace: [0.05, 0.04, 0.03],
      failed: false,
      phase: "awaiting_feedback",
    });

    const patched = applyAck(presented, ack);
    const refetched = fromReport(after);
    expect(patched.completed).toBe(refetched.completed);
    expect(patched.remaining).toBe(refetched.remaining);
    expect(patched.running).toEqual(refetched.running);
    expect(patched.points).toEqual(refetched.points);
    expect(patched.lastTrace).toEqual(refetched.lastTrace);
    expect(patched.lastDurationS).toBe(2.5); // the one field only the ack carries
  });
});
