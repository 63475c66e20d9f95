/**
 * Single-page review client.
 *
 * Wires the pure modules (rle, api, editor, dashboard) to the DOM: a zoomable
 * canvas stack for the image, the served head overlays and the editable mask,
 * a tool panel, and a dashboard pane that mirrors the service report. All
 * state transitions follow the service's phase machine — one request in
 * flight, submit disabled while the service adapts.
 *
 * Keyboard: B brush, E eraser, F fill, D disc, C cup, [ ] brush size,
 * Ctrl+Z undo, N next sample, Enter submit.
 */

import { ServiceClient, ServiceError, type SamplePayload, type SessionInfo } from "./api.js";
import { applyAck, fromReport, withSample, type DashboardModel } from "./dashboard.js";
import { LABEL, MaskEditor, type MaskClass, type Tool } from "./editor.js";
import { decodeMask } from "./rle.js";

type UiPhase = "idle" | "ready" | "editing" | "adapting" | "done";

// Per-head overlay tints and editable-layer colors, as [r, g, b, alpha].
type Rgba = [number, number, number, number];
const OVERLAY_COLORS: Record<string, { disc: Rgba; cup: Rgba }> = {
  main: { disc: [64, 156, 255, 90], cup: [0, 90, 220, 120] },
  pref: { disc: [255, 154, 60, 90], cup: [230, 80, 0, 120] },
};
const FALLBACK_COLOR = { disc: [160, 160, 160, 90] as Rgba, cup: [90, 90, 90, 120] as Rgba };
const EDIT_DISC: Rgba = [70, 200, 120, 110];
const EDIT_CUP: Rgba = [240, 220, 70, 140];
const VIOLATION: Rgba = [255, 40, 40, 210];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class App {
  private client: ServiceClient | null = null;
  private session: SessionInfo | null = null;
  private sample: SamplePayload | null = null;
  private editor: MaskEditor | null = null;
  private model: DashboardModel | null = null;
  private phase: UiPhase = "idle";
  private violationView: Uint8Array | null = null;

  // stage transform
  private scale = 4;
  private tx = 0;
  private ty = 0;
  private panning: { x: number; y: number } | null = null;
  private stroking = false;
  private lastPaint: { x: number; y: number } | null = null;
  private spaceHeld = false;

  private readonly stage = el<HTMLDivElement>("stage");
  private readonly wrap = el<HTMLDivElement>("canvas-wrap");
  private readonly imageCanvas = el<HTMLCanvasElement>("image-canvas");
  private readonly overlayCanvas = el<HTMLCanvasElement>("overlay-canvas");
  private readonly editCanvas = el<HTMLCanvasElement>("edit-canvas");
  private readonly banner = el<HTMLDivElement>("banner");
  private readonly sampleInfo = el<HTMLDivElement>("sample-info");
  private readonly headChoices = el<HTMLDivElement>("head-choices");
  private readonly overlayToggles = el<HTMLDivElement>("overlay-toggles");

  start(): void {
    el<HTMLInputElement>("base-url").value = window.location.origin;
    el<HTMLButtonElement>("connect").addEventListener("click", () => void this.connect());
    el<HTMLButtonElement>("new-session").addEventListener("click", () => void this.newSession());
    el<HTMLButtonElement>("next").addEventListener("click", () => void this.loadNext());
    el<HTMLButtonElement>("submit").addEventListener("click", () => void this.submit());
    el<HTMLButtonElement>("undo").addEventListener("click", () => this.undo());
    el<HTMLButtonElement>("sync-report").addEventListener("click", () => void this.syncReport());

    for (const tool of ["brush", "eraser", "fill"] as Tool[]) {
      el<HTMLInputElement>(`tool-${tool}`).addEventListener("change", () => this.setTool(tool));
    }
    for (const cls of ["disc", "cup"] as MaskClass[]) {
      el<HTMLInputElement>(`class-${cls}`).addEventListener("change", () => this.setClass(cls));
    }
    const radius = el<HTMLInputElement>("brush-radius");
    radius.addEventListener("input", () => {
      if (this.editor) this.editor.brushRadius = radius.valueAsNumber;
      el<HTMLSpanElement>("radius-label").textContent = `${radius.valueAsNumber}px`;
    });

    this.bindStage();
    this.bindKeys();
    this.render();
  }

  // -- session lifecycle -------------------------------------------------------

  private async connect(): Promise<void> {
    const base = el<HTMLInputElement>("base-url").value.trim();
    const client = new ServiceClient(base);
    try {
      await client.healthz();
    } catch (err) {
      this.showBanner("error", `health check failed: ${(err as Error).message}`);
      return;
    }
    this.client = client;
    this.showBanner("info", `connected to ${client.baseUrl}`);
    this.render();
  }

  private async newSession(): Promise<void> {
    if (!this.client) return;
    let config: Record<string, unknown>;
    try {
      config = JSON.parse(el<HTMLTextAreaElement>("session-config").value || "{}");
    } catch (err) {
      this.showBanner("error", `session config is not valid JSON: ${(err as Error).message}`);
      return;
    }
    const method = el<HTMLSelectElement>("method").value;
    try {
      this.session = await this.client.createSession({ method, config });
    } catch (err) {
      this.showBanner("error", `session creation failed: ${(err as Error).message}`);
      return;
    }
    this.sample = null;
    this.editor = null;
    this.phase = this.session.phase === "done" ? "done" : "ready";
    this.showBanner(
      "info",
      `session ${this.session.session_id}: ${this.session.method}, ${this.session.stream_length} samples`,
    );
    await this.syncReport();
    this.render();
  }

  private async loadNext(): Promise<void> {
    if (!this.client || !this.session || this.phase !== "ready") return;
    try {
      const payload = await this.client.nextSample(this.session.session_id);
      if (payload.done) {
        this.phase = "done";
        this.sample = null;
        this.editor = null;
        this.showBanner("info", "stream exhausted — the report below is final");
        this.render();
        return;
      }
      this.presentSample(payload);
    } catch (err) {
      this.explainServiceError(err, "loading the next sample");
    }
  }

  private presentSample(payload: SamplePayload): void {
    this.sample = payload;
    this.violationView = null;
    const masks: Record<string, Uint8Array> = {};
    for (const [tag, rle] of Object.entries(payload.masks)) {
      masks[tag] = decodeMask(rle).pixels;
    }
    const editor = new MaskEditor(payload.h, payload.w, masks, "main" in masks ? "main" : Object.keys(masks)[0]);
    editor.brushRadius = el<HTMLInputElement>("brush-radius").valueAsNumber;
    this.editor = editor;
    this.phase = "editing";
    if (this.model) this.model = withSample(this.model, payload);

    for (const canvas of [this.imageCanvas, this.overlayCanvas, this.editCanvas]) {
      canvas.width = payload.w;
      canvas.height = payload.h;
    }
    const image = new Image();
    image.onload = () => {
      const ctx = this.imageCanvas.getContext("2d")!;
      ctx.imageSmoothingEnabled = false;
      ctx.drawImage(image, 0, 0);
    };
    image.src = `data:image/png;base64,${payload.image_png_b64}`;
    this.fitStage(payload.w, payload.h);

    this.sampleInfo.textContent =
      `#${payload.index} ${payload.sample_id} — domain ${payload.domain}, rater ${payload.rater}` +
      (payload.mdiv ? `, M_div mean ${payload.mdiv.mean.toFixed(4)}` : "") +
      (payload.failed ? " — adaptation SKIPPED (numeric failure), frozen prediction shown" : "");
    this.buildHeadChoices();
    this.buildOverlayToggles();
    drawSeries(el<HTMLCanvasElement>("trace-chart"), [{ values: payload.loss_trace, color: "#d08300" }]);
    this.showBanner("none", "");
    this.render();
  }

  private async submit(): Promise<void> {
    if (!this.client || !this.session || !this.editor || this.phase !== "editing") return;
    const result = this.editor.commit();
    if (!result.ok) {
      this.violationView = result.violations;
      this.showBanner(
        "error",
        `cup extends outside disc on ${result.violationCount} px (highlighted) — paint disc under it or erase the cup`,
      );
      this.redrawEdit();
      return;
    }
    this.violationView = null;
    this.phase = "adapting";
    this.render();
    try {
      const ack = await this.client.submitFeedback(
        this.session.session_id,
        result.mask!,
        this.editor.startingHead,
      );
      if (this.model) {
        this.model = applyAck(this.model, ack);
        this.renderDashboard();
      }
      const totals = ack.loss_trace.map((step) => step.total ?? 0);
      drawSeries(el<HTMLCanvasElement>("post-trace-chart"), [{ values: totals, color: "#7a3fd1" }]);
      this.phase = ack.phase === "done" ? "done" : "ready";
      const r = ack.row;
      this.showBanner(
        "info",
        `committed #${r.index} (${ack.row.chosen_head}): DSC vs R1 ${r.dsc_r1.toFixed(4)}, ` +
          `vs R* ${r.dsc_rx.toFixed(4)}` +
          (ack.duration_s != null ? ` — adaptation ${ack.duration_s.toFixed(1)}s` : ""),
      );
    } catch (err) {
      this.phase = "editing";
      this.explainServiceError(err, "submitting the correction");
    }
    this.render();
  }

  private async syncReport(): Promise<void> {
    if (!this.client || !this.session) return;
    try {
      const report = await this.client.report(this.session.session_id);
      this.model = fromReport(report);
      this.renderDashboard();
    } catch (err) {
      this.explainServiceError(err, "fetching the report");
    }
  }

  private explainServiceError(err: unknown, doing: string): void {
    if (err instanceof ServiceError && err.isPhaseConflict) {
      this.showBanner("error", `out of step while ${doing}: ${err.message} — use Sync report, then Next`);
    } else {
      this.showBanner("error", `while ${doing}: ${(err as Error).message}`);
    }
  }

  // -- editor controls ------------------------------------------------------------

  private setTool(tool: Tool): void {
    if (this.editor) this.editor.tool = tool;
  }

  private setClass(cls: MaskClass): void {
    if (this.editor) this.editor.activeClass = cls;
  }

  private undo(): void {
    if (this.editor?.undo()) {
      this.violationView = null;
      this.redrawEdit();
    }
  }

  private buildHeadChoices(): void {
    this.headChoices.textContent = "";
    if (!this.editor) return;
    for (const tag of this.editor.headTags()) {
      const label = document.createElement("label");
      const radio = document.createElement("input");
      radio.type = "radio";
      radio.name = "starting-head";
      radio.value = tag;
      radio.checked = tag === this.editor.startingHead;
      radio.addEventListener("change", () => this.onHeadRadio(tag, radio));
      label.append(radio, ` ${tag}`);
      this.headChoices.append(label);
    }
  }

  private onHeadRadio(tag: string, radio: HTMLInputElement): void {
    if (!this.editor) return;
    const outcome = this.editor.requestStartingHead(tag);
    if (outcome === "confirm-required") {
      if (window.confirm(`Discard your edits and start from the ${tag} mask?`)) {
        this.editor.confirmStartingHead(tag);
      } else {
        radio.checked = false;
        for (const input of this.headChoices.querySelectorAll("input")) {
          (input as HTMLInputElement).checked = (input as HTMLInputElement).value === this.editor.startingHead;
        }
        return;
      }
    }
    this.violationView = null;
    this.redrawEdit();
  }

  private buildOverlayToggles(): void {
    this.overlayToggles.textContent = "";
    if (!this.editor) return;
    for (const tag of this.editor.headTags()) {
      for (const cls of ["disc", "cup"] as MaskClass[]) {
        const label = document.createElement("label");
        const box = document.createElement("input");
        box.type = "checkbox";
        box.checked = this.editor.overlayVisible(tag, cls);
        box.addEventListener("change", () => {
          this.editor?.toggleOverlay(tag, cls);
          this.redrawOverlays();
        });
        label.append(box, ` ${tag}/${cls}`);
        this.overlayToggles.append(label);
      }
    }
  }

  // -- stage: zoom, pan, paint ------------------------------------------------------

  private bindStage(): void {
    this.stage.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      if (!this.sample) return;
      const rect = this.stage.getBoundingClientRect();
      const px = ev.clientX - rect.left;
      const py = ev.clientY - rect.top;
      const factor = Math.pow(1.0015, -ev.deltaY);
      const next = Math.min(32, Math.max(0.5, this.scale * factor));
      // keep the pixel under the cursor fixed while zooming
      this.tx = px - ((px - this.tx) / this.scale) * next;
      this.ty = py - ((py - this.ty) / this.scale) * next;
      this.scale = next;
      this.applyTransform();
    }, { passive: false });

    this.stage.addEventListener("pointerdown", (ev) => {
      if (ev.button === 1 || this.spaceHeld) {
        ev.preventDefault(); // middle button must pan, not autoscroll
        this.panning = { x: ev.clientX - this.tx, y: ev.clientY - this.ty };
        this.stage.setPointerCapture(ev.pointerId);
        return;
      }
      if (ev.button !== 0 || !this.editor || this.phase !== "editing") return;
      const pos = this.canvasPos(ev);
      this.stage.setPointerCapture(ev.pointerId);
      if (this.editor.tool === "fill") {
        this.editor.fill(pos.x, pos.y);
        this.violationView = null;
        this.redrawEdit();
        return;
      }
      this.stroking = true;
      this.lastPaint = pos;
      this.editor.beginStroke();
      this.editor.applyBrush(pos.x, pos.y);
      this.violationView = null;
      this.redrawEdit();
    });

    this.stage.addEventListener("pointermove", (ev) => {
      if (this.panning) {
        this.tx = ev.clientX - this.panning.x;
        this.ty = ev.clientY - this.panning.y;
        this.applyTransform();
        return;
      }
      if (!this.stroking || !this.editor || !this.lastPaint) return;
      const pos = this.canvasPos(ev);
      // stamp along the segment so fast pointer moves leave no gaps
      const steps = Math.max(1, Math.ceil(Math.hypot(pos.x - this.lastPaint.x, pos.y - this.lastPaint.y)));
      for (let s = 1; s <= steps; s++) {
        this.editor.applyBrush(
          this.lastPaint.x + ((pos.x - this.lastPaint.x) * s) / steps,
          this.lastPaint.y + ((pos.y - this.lastPaint.y) * s) / steps,
        );
      }
      this.lastPaint = pos;
      this.redrawEdit();
    });

    const finish = () => {
      this.panning = null;
      if (this.stroking && this.editor) {
        this.editor.endStroke();
        this.stroking = false;
        this.lastPaint = null;
      }
    };
    this.stage.addEventListener("pointerup", finish);
    this.stage.addEventListener("pointercancel", finish);
  }

  private canvasPos(ev: PointerEvent): { x: number; y: number } {
    const rect = this.stage.getBoundingClientRect();
    return {
      x: (ev.clientX - rect.left - this.tx) / this.scale,
      y: (ev.clientY - rect.top - this.ty) / this.scale,
    };
  }

  private fitStage(w: number, h: number): void {
    const rect = this.stage.getBoundingClientRect();
    this.scale = Math.max(1, Math.floor(Math.min(rect.width / w, rect.height / h)));
    this.tx = (rect.width - w * this.scale) / 2;
    this.ty = (rect.height - h * this.scale) / 2;
    this.applyTransform();
  }

  private applyTransform(): void {
    this.wrap.style.transform = `translate(${this.tx}px, ${this.ty}px) scale(${this.scale})`;
  }

  // -- keyboard ---------------------------------------------------------------------

  private bindKeys(): void {
    window.addEventListener("keydown", (ev) => {
      if (ev.target instanceof HTMLInputElement || ev.target instanceof HTMLTextAreaElement) return;
      if (ev.code === "Space") {
        this.spaceHeld = true;
        ev.preventDefault();
        return;
      }
      if (ev.key === "z" && (ev.ctrlKey || ev.metaKey)) {
        ev.preventDefault();
        this.undo();
        return;
      }
      const pickTool = (tool: Tool) => {
        this.setTool(tool);
        el<HTMLInputElement>(`tool-${tool}`).checked = true;
      };
      const pickClass = (cls: MaskClass) => {
        this.setClass(cls);
        el<HTMLInputElement>(`class-${cls}`).checked = true;
      };
      switch (ev.key) {
        case "b": pickTool("brush"); break;
        case "e": pickTool("eraser"); break;
        case "f": pickTool("fill"); break;
        case "d": pickClass("disc"); break;
        case "c": pickClass("cup"); break;
        case "[": this.nudgeRadius(-1); break;
        case "]": this.nudgeRadius(1); break;
        case "n": void this.loadNext(); break;
        case "Enter": void this.submit(); break;
      }
    });
    window.addEventListener("keyup", (ev) => {
      if (ev.code === "Space") this.spaceHeld = false;
    });
  }

  private nudgeRadius(delta: number): void {
    const input = el<HTMLInputElement>("brush-radius");
    input.valueAsNumber = Math.min(32, Math.max(1, input.valueAsNumber + delta));
    input.dispatchEvent(new Event("input"));
  }

  // -- rendering ----------------------------------------------------------------------

  private redrawOverlays(): void {
    if (!this.editor || !this.sample) return;
    const { h, w } = this.sample;
    const ctx = this.overlayCanvas.getContext("2d")!;
    const img = ctx.createImageData(w, h);
    for (const tag of this.editor.headTags()) {
      const colors = OVERLAY_COLORS[tag] ?? FALLBACK_COLOR;
      const labels = this.editor.servedLabels(tag);
      const discOn = this.editor.overlayVisible(tag, "disc");
      const cupOn = this.editor.overlayVisible(tag, "cup");
      for (let i = 0; i < labels.length; i++) {
        if (discOn && labels[i] >= LABEL.disc) blend(img.data, i, colors.disc);
        if (cupOn && labels[i] === LABEL.cup) blend(img.data, i, colors.cup);
      }
    }
    ctx.putImageData(img, 0, 0);
  }

  private redrawEdit(): void {
    if (!this.editor || !this.sample) return;
    const { h, w } = this.sample;
    const ctx = this.editCanvas.getContext("2d")!;
    const img = ctx.createImageData(w, h);
    const labels = this.editor.editedLabels();
    for (let i = 0; i < labels.length; i++) {
      if (labels[i] >= LABEL.disc) blend(img.data, i, EDIT_DISC);
      if (labels[i] === LABEL.cup) blend(img.data, i, EDIT_CUP);
      if (this.violationView && this.violationView[i]) blend(img.data, i, VIOLATION);
    }
    ctx.putImageData(img, 0, 0);
  }

  private renderDashboard(): void {
    const model = this.model;
    if (!model) return;
    el<HTMLSpanElement>("count-done").textContent = String(model.completed);
    el<HTMLSpanElement>("count-left").textContent = String(model.remaining);
    el<HTMLSpanElement>("running-r1").textContent = model.running ? model.running.vs_r1.toFixed(4) : "—";
    el<HTMLSpanElement>("running-rstar").textContent = model.running ? model.running.vs_rstar.toFixed(4) : "—";
    el<HTMLSpanElement>("last-duration").textContent =
      model.lastDurationS != null ? `${model.lastDurationS.toFixed(1)}s` : "—";
    drawSeries(el<HTMLCanvasElement>("dsc-chart"), [
      { values: model.points.map((p) => p.vsR1), color: "#2c7be5" },
      { values: model.points.map((p) => p.vsRstar), color: "#1fa65a" },
    ]);
    drawSeries(el<HTMLCanvasElement>("trace-chart"), [{ values: model.lastTrace, color: "#d08300" }]);
  }

  private render(): void {
    el<HTMLButtonElement>("new-session").disabled = !this.client;
    el<HTMLButtonElement>("next").disabled = this.phase !== "ready";
    el<HTMLButtonElement>("submit").disabled = this.phase !== "editing";
    el<HTMLButtonElement>("undo").disabled = this.phase !== "editing";
    el<HTMLButtonElement>("sync-report").disabled = !this.session;
    el<HTMLSpanElement>("phase-badge").textContent = this.phase;
    el<HTMLSpanElement>("phase-badge").dataset.phase = this.phase;
    this.redrawOverlays();
    this.redrawEdit();
  }

  private showBanner(kind: "info" | "error" | "none", text: string): void {
    this.banner.textContent = text;
    this.banner.dataset.kind = kind;
  }
}

function blend(data: Uint8ClampedArray, pixel: number, [r, g, b, a]: Rgba): void {
  const at = pixel * 4;
  const alpha = a / 255;
  data[at] = data[at] * (1 - alpha) + r * alpha;
  data[at + 1] = data[at + 1] * (1 - alpha) + g * alpha;
  data[at + 2] = data[at + 2] * (1 - alpha) + b * alpha;
  data[at + 3] = Math.min(255, data[at + 3] + a);
}

/** Minimal polyline chart; scales every series to the shared min/max. */
function drawSeries(canvas: HTMLCanvasElement, series: Array<{ values: number[]; color: string }>): void {
  const ctx = canvas.getContext("2d")!;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const all = series.flatMap((s) => s.values);
  if (!all.length) return;
  const lo = Math.min(...all);
  const hi = Math.max(...all);
  const span = hi - lo || 1;
  const pad = 4;
  for (const { values, color } of series) {
    if (!values.length) continue;
    ctx.strokeStyle = color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    values.forEach((v, i) => {
      const x = pad + (i / Math.max(1, values.length - 1)) * (canvas.width - 2 * pad);
      const y = canvas.height - pad - ((v - lo) / span) * (canvas.height - 2 * pad);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
  }
  ctx.fillStyle = "#888";
  ctx.font = "9px system-ui";
  ctx.fillText(hi.toPrecision(3), 2, 9);
  ctx.fillText(lo.toPrecision(3), 2, canvas.height - 2);
}

new App().start();
