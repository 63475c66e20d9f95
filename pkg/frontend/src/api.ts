/**
 * Typed client for the review service HTTP API.
 *
 * The client is configured by base URL alone. It moves payloads, nothing
 * else: every metric the UI displays is a field lifted verbatim from one of
 * these responses — no segmentation math happens on this side of the wire.
 */

import type { RleMask } from "./rle.js";

export interface SessionInfo {
  session_id: string;
  method: string;
  phase: string;
  cursor: number;
  stream_length: number;
  config: Record<string, unknown>;
}

export interface MdivSummary {
  mean: number;
  max: number;
}

/** One presented sample: image, every head's mask, and the pre-stage trace. */
export interface SamplePayload {
  done: false;
  index: number;
  sample_id: string;
  domain: string;
  rater: string;
  h: number;
  w: number;
  image_png_b64: string;
  masks: Record<string, RleMask>; // "main" always, "pref" once the preference head exists
  mdiv: MdivSummary | null;
  loss_trace: number[];
  failed: boolean;
  phase: string;
}

export interface DoneMarker {
  done: true;
  phase: string;
  cursor: number;
}

export type NextPayload = SamplePayload | DoneMarker;

/** Scored result for one committed sample, as reported by the service. */
export interface SampleRow {
  index: number;
  sample_id: string;
  domain: string;
  rater: string;
  chosen_head: string;
  dsc_r1: number;
  dsc_r1_od: number;
  dsc_r1_oc: number;
  dsc_rx: number;
  dsc_rx_od: number;
  dsc_rx_oc: number;
  mdiv_mean: number | null;
  failed: boolean;
  mask: RleMask;
}

export interface DscMeans {
  n: number;
  vs_r1: number;
  vs_r1_od: number;
  vs_r1_oc: number;
  vs_rstar: number;
  vs_rstar_od: number;
  vs_rstar_oc: number;
}

export interface RunningMeans {
  n: number;
  vs_r1: number;
  vs_rstar: number;
}

export interface FeedbackAck {
  row: SampleRow;
  running: RunningMeans;
  loss_trace: Array<Record<string, number>>; // post-stage loss terms per step
  duration_s: number | null; // wall-clock seconds the adaptation took
  phase: string;
  cursor: number;
}

export interface ReportPayload {
  method: string;
  seed: number;
  config_fingerprint: string;
  domains: string[];
  rows: SampleRow[];
  traces: Record<string, number[]>; // sample id -> pre-stage loss trace
  aggregate: { overall: DscMeans; per_domain: Record<string, DscMeans> };
  phase: string;
  cursor: number;
  stream_length: number;
}

/** Non-2xx response, carrying the service's `detail` message and HTTP status. */
export class ServiceError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ServiceError";
  }

  /** 409s mean "legal in another phase" — recoverable by reloading state. */
  get isPhaseConflict(): boolean {
    return this.status === 409;
  }
}

export class ServiceClient {
  readonly baseUrl: string;

  constructor(baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await fetch(this.baseUrl + path, init);
    } catch (err) {
      throw new ServiceError(0, `service unreachable at ${this.baseUrl}: ${String(err)}`);
    }
    const text = await response.text();
    let body: unknown = null;
    try {
      body = text ? JSON.parse(text) : null;
    } catch {
      // fall through: non-JSON bodies surface via the status check below
    }
    if (!response.ok) {
      const detail =
        body && typeof body === "object" && "detail" in body
          ? String((body as { detail: unknown }).detail)
          : text || response.statusText;
      throw new ServiceError(response.status, detail);
    }
    return body as T;
  }

  healthz(): Promise<{ status: string }> {
    return this.request("/healthz");
  }

  createSession(body: { method?: string; config?: Record<string, unknown> }): Promise<SessionInfo> {
    return this.request("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  nextSample(sessionId: string): Promise<NextPayload> {
    return this.request(`/sessions/${sessionId}/next`);
  }

  submitFeedback(sessionId: string, mask: RleMask, chosenHead: string): Promise<FeedbackAck> {
    return this.request(`/sessions/${sessionId}/feedback`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ mask, chosen_head: chosenHead }),
    });
  }

  report(sessionId: string): Promise<ReportPayload> {
    return this.request(`/sessions/${sessionId}/report`);
  }
}
