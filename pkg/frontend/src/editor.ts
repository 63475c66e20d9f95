/**
 * Editable mask state for one presented sample.
 *
 * The served label encoding (0 background, 1 disc rim, 2 cup) is unpacked
 * into two independent boolean layers — disc extent and cup extent — so each
 * anatomical class paints without disturbing the other. The cup-inside-disc
 * rule is deliberately NOT enforced while painting: `commit()` reports the
 * violating pixels so the view can highlight them, and refuses to produce a
 * wire mask until they are resolved.
 *
 * Served head masks are kept immutable next to the editable layers: overlay
 * visibility is pure view state, and switching the starting head re-seeds the
 * editable layers — destructive, hence gated behind an explicit confirm once
 * any edit exists.
 */

import { encodeMask, type RleMask } from "./rle.js";

export type Tool = "brush" | "eraser" | "fill";
export type MaskClass = "disc" | "cup";

export const LABEL = { background: 0, disc: 1, cup: 2 } as const;
export const UNDO_LIMIT = 50;

export interface CommitResult {
  ok: boolean;
  mask?: RleMask; // present iff ok
  violations: Uint8Array; // 1 where cup lies outside disc (all zero iff ok)
  violationCount: number;
}

interface Layers {
  disc: Uint8Array; // 1 = inside disc extent (rim or cup)
  cup: Uint8Array; // 1 = inside cup
}

function layersFromLabels(labels: Uint8Array): Layers {
  const disc = new Uint8Array(labels.length);
  const cup = new Uint8Array(labels.length);
  for (let i = 0; i < labels.length; i++) {
    if (labels[i] >= LABEL.disc) disc[i] = 1;
    if (labels[i] === LABEL.cup) cup[i] = 1;
  }
  return { disc, cup };
}

export class MaskEditor {
  readonly h: number;
  readonly w: number;

  tool: Tool = "brush";
  brushRadius = 4;
  activeClass: MaskClass = "disc";

  private readonly served = new Map<string, Uint8Array>(); // head tag -> label map
  private readonly visible = new Map<string, { disc: boolean; cup: boolean }>();
  private layers: Layers;
  private undoStack: Layers[] = [];
  private editCount = 0;
  private startingHeadTag: string;
  private strokeSnapshot: Layers | null = null;
  private strokeChanged = false;

  constructor(h: number, w: number, masks: Record<string, Uint8Array>, startingHead = "main") {
    if (!(startingHead in masks)) {
      throw new Error(`starting head ${JSON.stringify(startingHead)} not among served masks`);
    }
    this.h = h;
    this.w = w;
    for (const [tag, labels] of Object.entries(masks)) {
      if (labels.length !== h * w) {
        throw new Error(`mask ${JSON.stringify(tag)} has ${labels.length} pixels, expected ${h * w}`);
      }
      this.served.set(tag, Uint8Array.from(labels));
      this.visible.set(tag, { disc: true, cup: true });
    }
    this.startingHeadTag = startingHead;
    this.layers = layersFromLabels(this.served.get(startingHead)!);
  }

  // -- read-only views ---------------------------------------------------------

  get dirty(): boolean {
    return this.editCount > 0;
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  get startingHead(): string {
    return this.startingHeadTag;
  }

  headTags(): string[] {
    return [...this.served.keys()];
  }

  servedLabels(tag: string): Uint8Array {
    const labels = this.served.get(tag);
    if (!labels) throw new Error(`no served mask ${JSON.stringify(tag)}`);
    return Uint8Array.from(labels);
  }

  /** Editable layers composed for display; cup-outside-disc still renders as cup. */
  editedLabels(): Uint8Array {
    const labels = new Uint8Array(this.h * this.w);
    for (let i = 0; i < labels.length; i++) {
      labels[i] = this.layers.cup[i] ? LABEL.cup : this.layers.disc[i] ? LABEL.disc : LABEL.background;
    }
    return labels;
  }

  layer(cls: MaskClass): Uint8Array {
    return Uint8Array.from(this.layers[cls]);
  }

  // -- overlay visibility (pure view state, never touches the editable layers) --

  overlayVisible(tag: string, cls: MaskClass): boolean {
    const entry = this.visible.get(tag);
    return entry ? entry[cls] : false;
  }

  toggleOverlay(tag: string, cls: MaskClass): void {
    const entry = this.visible.get(tag);
    if (!entry) throw new Error(`no served mask ${JSON.stringify(tag)}`);
    entry[cls] = !entry[cls];
  }

  // -- starting head -------------------------------------------------------------

  /**
   * Re-seed the editable layers from another head's mask. With edits present
   * this is destructive, so it only happens via `confirmStartingHead`.
   */
  requestStartingHead(tag: string): "switched" | "confirm-required" {
    if (!this.served.has(tag)) throw new Error(`no served mask ${JSON.stringify(tag)}`);
    if (tag === this.startingHeadTag) return "switched";
    if (this.dirty) return "confirm-required";
    this.seedFrom(tag);
    return "switched";
  }

  confirmStartingHead(tag: string): void {
    if (!this.served.has(tag)) throw new Error(`no served mask ${JSON.stringify(tag)}`);
    this.seedFrom(tag);
  }

  private seedFrom(tag: string): void {
    this.startingHeadTag = tag;
    this.layers = layersFromLabels(this.served.get(tag)!);
    this.undoStack = [];
    this.editCount = 0;
    this.strokeSnapshot = null;
    this.strokeChanged = false;
  }

  // -- painting -----------------------------------------------------------------

  /** Start a brush/eraser stroke; one stroke is one undo step. */
  beginStroke(): void {
    if (this.tool === "fill") return;
    this.strokeSnapshot = this.snapshot();
    this.strokeChanged = false;
  }

  /** Stamp the brush at (x, y); call repeatedly along the pointer path. */
  applyBrush(x: number, y: number): void {
    if (this.tool === "fill") return;
    const value = this.tool === "brush" ? 1 : 0;
    const layer = this.layers[this.activeClass];
    const r = this.brushRadius;
    const cx = Math.floor(x);
    const cy = Math.floor(y);
    for (let dy = -r; dy <= r; dy++) {
      const py = cy + dy;
      if (py < 0 || py >= this.h) continue;
      for (let dx = -r; dx <= r; dx++) {
        const px = cx + dx;
        if (px < 0 || px >= this.w) continue;
        if (dx * dx + dy * dy > r * r) continue;
        const at = py * this.w + px;
        if (layer[at] !== value) {
          layer[at] = value;
          this.strokeChanged = true;
        }
      }
    }
  }

  /** Finish the stroke; drops the undo entry if nothing actually changed. */
  endStroke(): void {
    if (!this.strokeSnapshot) return;
    if (this.strokeChanged) {
      this.pushUndo(this.strokeSnapshot);
      this.editCount += 1;
    }
    this.strokeSnapshot = null;
    this.strokeChanged = false;
  }

  /**
   * Paint-bucket: set the 4-connected region of unpainted pixels around
   * (x, y) in the active class layer. Clicking inside already-painted area
   * is a no-op (use the eraser to clear).
   */
  fill(x: number, y: number): void {
    const px = Math.floor(x);
    const py = Math.floor(y);
    if (px < 0 || px >= this.w || py < 0 || py >= this.h) return;
    const layer = this.layers[this.activeClass];
    if (layer[py * this.w + px] === 1) return;
    const before = this.snapshot();
    const stack = [py * this.w + px];
    layer[py * this.w + px] = 1;
    while (stack.length) {
      const at = stack.pop()!;
      const ay = Math.floor(at / this.w);
      const ax = at - ay * this.w;
      for (const [nx, ny] of [
        [ax - 1, ay],
        [ax + 1, ay],
        [ax, ay - 1],
        [ax, ay + 1],
      ]) {
        if (nx < 0 || nx >= this.w || ny < 0 || ny >= this.h) continue;
        const nat = ny * this.w + nx;
        if (layer[nat] === 0) {
          layer[nat] = 1;
          stack.push(nat);
        }
      }
    }
    this.pushUndo(before);
    this.editCount += 1;
  }

  undo(): boolean {
    const prev = this.undoStack.pop();
    if (!prev) return false;
    this.layers = prev;
    this.editCount = Math.max(0, this.editCount - 1);
    return true;
  }

  private snapshot(): Layers {
    return { disc: Uint8Array.from(this.layers.disc), cup: Uint8Array.from(this.layers.cup) };
  }

  private pushUndo(entry: Layers): void {
    this.undoStack.push(entry);
    if (this.undoStack.length > UNDO_LIMIT) this.undoStack.shift();
  }

  // -- commit ---------------------------------------------------------------------

  /** Pixels where cup lies outside disc — the nesting rule the commit enforces. */
  violations(): Uint8Array {
    const bad = new Uint8Array(this.h * this.w);
    for (let i = 0; i < bad.length; i++) {
      if (this.layers.cup[i] === 1 && this.layers.disc[i] === 0) bad[i] = 1;
    }
    return bad;
  }

  /** Produce the wire mask, or refuse with the violating pixels highlighted. */
  commit(): CommitResult {
    const violations = this.violations();
    let violationCount = 0;
    for (const v of violations) violationCount += v;
    if (violationCount > 0) {
      return { ok: false, violations, violationCount };
    }
    return { ok: true, mask: encodeMask(this.editedLabels(), this.h, this.w), violations, violationCount };
  }
}
