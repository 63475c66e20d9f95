/**
 * Dashboard model: a pure projection of service payloads.
 *
 * Every number here is lifted verbatim from a response field — the client
 * never recomputes a metric, it only rearranges served values for display.
 * `fromReport` builds the model from a get_report snapshot; `withSample` and
 * `applyAck` patch it from the next-sample and feedback responses so the
 * view stays in step without refetching. Applying an ack must agree with
 * refetching the report — that equivalence is pinned by tests.
 */

import type { FeedbackAck, ReportPayload, RunningMeans, SamplePayload, SampleRow } from "./api.js";

export interface DscPoint {
  index: number;
  vsR1: number;
  vsRstar: number;
  domain: string;
  failed: boolean;
}

export interface DashboardModel {
  completed: number; // rows committed so far (aggregate n / running n)
  streamLength: number;
  remaining: number; // stream_length - cursor, both service fields
  running: RunningMeans | null; // null until the first commit
  points: DscPoint[]; // per-sample DSC chart, straight from rows
  lastTrace: number[]; // pre-stage L_div trace of the newest sample
  lastDurationS: number | null; // wall-clock of the last adaptation
}

function pointOf(row: SampleRow): DscPoint {
  return {
    index: row.index,
    vsR1: row.dsc_r1,
    vsRstar: row.dsc_rx,
    domain: row.domain,
    failed: row.failed,
  };
}

export function fromReport(report: ReportPayload): DashboardModel {
  const overall = report.aggregate.overall;
  const rows = report.rows;
  const last = rows.length ? rows[rows.length - 1] : null;
  return {
    completed: overall.n,
    streamLength: report.stream_length,
    remaining: report.stream_length - report.cursor,
    running:
      overall.n > 0 ? { n: overall.n, vs_r1: overall.vs_r1, vs_rstar: overall.vs_rstar } : null,
    points: rows.map(pointOf),
    lastTrace: last ? (report.traces[last.sample_id] ?? []) : [],
    lastDurationS: null,
  };
}

/** A newly presented sample carries its own pre-stage trace. */
export function withSample(model: DashboardModel, sample: SamplePayload): DashboardModel {
  return { ...model, lastTrace: sample.loss_trace };
}

/** Fold one feedback ack in; equivalent to refetching the report. */
export function applyAck(model: DashboardModel, ack: FeedbackAck): DashboardModel {
  return {
    ...model,
    completed: ack.running.n,
    remaining: model.streamLength - ack.cursor,
    running: ack.running,
    points: [...model.points, pointOf(ack.row)],
    lastDurationS: ack.duration_s,
  };
}
