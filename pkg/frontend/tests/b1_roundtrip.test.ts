/**
 * B1 — full UI round-trip against a real service process.
 *
 * Spins up `hitta serve` on desk-size artifacts (built once via the CLI and
 * cached under .artifacts/), then drives the same code paths the browser
 * uses: decode the served masks, paint a correction with the editor, submit,
 * and read the dashboard. Verifies the service recorded the FeedbackRecord,
 * ran the adaptation, bumped the dashboard count — and that the *next*
 * sample's prediction differs from a no-feedback control session
 * (method hitta_no_hf, identical seeds), i.e. the feedback actually moved
 * the model and not just the cursor.
 */

import { execFile, spawn, type ChildProcess } from "node:child_process";
import { existsSync, mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { promisify } from "node:util";
import { afterAll, beforeAll, expect, it } from "vitest";
import { ServiceClient, type SamplePayload } from "../src/api.js";
import { applyAck, fromReport } from "../src/dashboard.js";
import { MaskEditor } from "../src/editor.js";
import { decodeMask, type RleMask } from "../src/rle.js";

const run = promisify(execFile);
const FRONTEND_ROOT = new URL("..", import.meta.url).pathname;
const ARTIFACTS = join(FRONTEND_ROOT, ".artifacts");
const DATA_ROOT = join(ARTIFACTS, "data");
const CHECKPOINT = join(ARTIFACTS, "checkpoint.zip");

let service: ChildProcess | null = null;
let serviceLog = "";
let stateDir: string;
let client: ServiceClient;

async function ensureArtifacts(): Promise<void> {
  if (!existsSync(join(DATA_ROOT, "manifest.json"))) {
    await run(
      "hitta",
      [
        "gen-data",
        "--root", DATA_ROOT,
        "--image-size", "64",
        "--source-train", "10",
        "--source-val", "4",
        "--target-count", "4",
        "--overwrite",
      ],
      { timeout: 300_000 },
    );
  }
  if (!existsSync(CHECKPOINT)) {
    await run(
      "hitta",
      [
        "train-source",
        "--data", DATA_ROOT,
        "--out", CHECKPOINT,
        "--epochs", "60",
        "--batch-size", "2",
        "--base-width", "16",
        "--levels", "3",
      ],
      { timeout: 600_000 },
    );
  }
}

async function startService(): Promise<void> {
  const port = 18000 + (process.pid % 2000);
  stateDir = mkdtempSync(join(tmpdir(), "hitta-ui-"));
  service = spawn(
    "hitta",
    ["serve", "--host", "127.0.0.1", "--port", String(port), "--state-dir", stateDir],
    { cwd: FRONTEND_ROOT },
  );
  service.stderr?.on("data", (chunk) => (serviceLog += chunk));
  service.stdout?.on("data", (chunk) => (serviceLog += chunk));
  client = new ServiceClient(`http://127.0.0.1:${port}`);
  const deadline = Date.now() + 120_000;
  for (;;) {
    try {
      await client.healthz();
      return;
    } catch {
      if (Date.now() > deadline || service.exitCode !== null) {
        throw new Error(`service never came up; log tail:\n${serviceLog.slice(-2000)}`);
      }
      await new Promise((resolve) => setTimeout(resolve, 500));
    }
  }
}

beforeAll(async () => {
  await ensureArtifacts();
  await startService();
});

afterAll(async () => {
  if (service && service.exitCode === null) {
    service.kill("SIGTERM");
    await new Promise((resolve) => setTimeout(resolve, 1500));
    if (service.exitCode === null) service.kill("SIGKILL");
  }
});

// Tiny but real run: 2 samples of one shifted domain, shortened adaptation.
const SESSION_CONFIG = {
  dataset_root: DATA_ROOT,
  checkpoint: CHECKPOINT,
  seed: 0,
  domains: ["targetA"],
  limit: 2,
  pre: { steps: 3, b: 3 },
  post: { steps: 5, b: 3 },
};

function maskKey(mask: RleMask): string {
  return JSON.stringify({ h: mask.h, w: mask.w, runs: mask.runs });
}

/** Paint a disc blob just past the served disc's right edge — a real correction. */
function paintCorrection(sample: SamplePayload): { mask: RleMask; changed: number } {
  const masks: Record<string, Uint8Array> = {};
  for (const [tag, wire] of Object.entries(sample.masks)) masks[tag] = decodeMask(wire).pixels;
  const editor = new MaskEditor(sample.h, sample.w, masks, "main");

  const main = masks.main;
  let maxX = -1;
  let sumY = 0;
  let count = 0;
  for (let y = 0; y < sample.h; y++) {
    for (let x = 0; x < sample.w; x++) {
      if (main[y * sample.w + x] >= 1) {
        if (x > maxX) maxX = x;
        sumY += y;
        count += 1;
      }
    }
  }
  expect(count, "served disc should not be empty").toBeGreaterThan(0);
  const cy = Math.round(sumY / count);
  const cx = Math.min(sample.w - 2, maxX + 2);

  editor.activeClass = "disc";
  editor.tool = "brush";
  editor.brushRadius = 5;
  editor.beginStroke();
  editor.applyBrush(cx, cy);
  editor.endStroke();
  expect(editor.dirty).toBe(true);

  const result = editor.commit();
  expect(result.ok).toBe(true);
  let changed = 0;
  const corrected = decodeMask(result.mask!).pixels;
  for (let i = 0; i < corrected.length; i++) if (corrected[i] !== main[i]) changed += 1;
  expect(changed, "the painted correction should flip pixels").toBeGreaterThan(0);
  return { mask: result.mask!, changed };
}

async function firstSample(sessionId: string): Promise<SamplePayload> {
  const payload = await client.nextSample(sessionId);
  expect(payload.done).toBe(false);
  return payload as SamplePayload;
}

it("B1: paint, submit, adapt — and the next prediction moves vs a no-feedback control", async () => {
  const live = await client.createSession({ method: "hitta", config: SESSION_CONFIG });
  const control = await client.createSession({ method: "hitta_no_hf", config: SESSION_CONFIG });
  expect(live.stream_length).toBe(2);
  expect(control.stream_length).toBe(2);

  // empty dashboards before anything happens
  const dashBefore = fromReport(await client.report(live.session_id));
  expect(dashBefore.completed).toBe(0);
  expect(dashBefore.remaining).toBe(2);

  // sample 0 must be identical in both sessions: same seeds, same pre stage —
  // this is what makes the control a control
  const sample0 = await firstSample(live.session_id);
  const control0 = await firstSample(control.session_id);
  expect(sample0.sample_id).toBe(control0.sample_id);
  expect(maskKey(control0.masks.main)).toBe(maskKey(sample0.masks.main));

  // paint a correction in the editor and submit it with the chosen head
  const { mask: corrected, changed } = paintCorrection(sample0);
  const ack = await client.submitFeedback(live.session_id, corrected, "main");
  expect(ack.row.sample_id).toBe(sample0.sample_id);
  expect(ack.row.chosen_head).toBe("main");
  expect(ack.running.n).toBe(1);
  expect(ack.phase).toBe("ready");
  expect(ack.loss_trace.length).toBe(SESSION_CONFIG.post.steps); // adaptation really ran
  expect(ack.duration_s).toBeGreaterThan(0);

  // the service flushed the FeedbackRecord for the committed sample
  const recordPath = join(stateDir, live.session_id, "records", "00000.json");
  expect(existsSync(recordPath)).toBe(true);
  const record = JSON.parse(readFileSync(recordPath, "utf-8"));
  expect(record.sample_id).toBe(sample0.sample_id);
  expect(record.chosen_head).toBe("main");
  expect(maskKey(record.corrected)).toBe(maskKey(corrected));

  // dashboard count increments, and patching with the ack mirrors a refetch
  const patched = applyAck(dashBefore, ack);
  const refetched = fromReport(await client.report(live.session_id));
  expect(patched.completed).toBe(1);
  expect(refetched.completed).toBe(1);
  expect(patched.remaining).toBe(refetched.remaining);
  expect(patched.running).toEqual(refetched.running);
  expect(patched.points).toEqual(refetched.points);

  // control session commits the SAME correction, but its method learns nothing
  const controlAck = await client.submitFeedback(control.session_id, corrected, "main");
  expect(controlAck.running.n).toBe(1);
  expect(controlAck.loss_trace).toEqual([]); // no feedback stage ran

  // next sample: the live session's prediction reflects the feedback,
  // the control's does not — the hashes must differ
  const sample1 = await firstSample(live.session_id);
  const control1 = await firstSample(control.session_id);
  expect(sample1.index).toBe(1);
  expect(sample1.sample_id).toBe(control1.sample_id);
  const liveKey = maskKey(sample1.masks.main);
  const controlKey = maskKey(control1.masks.main);
  expect(liveKey).not.toBe(controlKey);

  console.log(
    `B1 PASS — correction (${changed} px) recorded, adaptation ran ` +
      `${ack.loss_trace.length} steps in ${ack.duration_s?.toFixed(1)}s, dashboard 0→1, ` +
      `next-sample prediction hash diverged from the no-feedback control`,
  );
});
