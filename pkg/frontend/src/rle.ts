/**
 * Lossless run-length codec for label masks — the service wire format.
 *
 * A mask travels as `{h, w, runs: [label, count, label, count, ...]}`: the
 * (h, w) label map is scanned row-major and every maximal run of equal labels
 * emits a (label, count) pair. Counts are positive and sum to h*w; labels are
 * integers in [0, 255]. Because runs are maximal the form is canonical, so
 * encode(decode(wire)) reproduces the wire object exactly and
 * decode(encode(pixels)) reproduces every pixel.
 */

export interface RleMask {
  h: number;
  w: number;
  runs: number[];
}

export class MaskCodecError extends Error {}

export interface PixelMask {
  pixels: Uint8Array; // row-major labels, length h*w
  h: number;
  w: number;
}

export function encodeMask(pixels: Uint8Array, h: number, w: number): RleMask {
  if (!Number.isInteger(h) || !Number.isInteger(w) || h < 1 || w < 1) {
    throw new MaskCodecError(`mask dimensions must be positive integers, got ${h}x${w}`);
  }
  if (pixels.length !== h * w) {
    throw new MaskCodecError(`expected ${h * w} pixels for ${h}x${w}, got ${pixels.length}`);
  }
  const runs: number[] = [];
  let label = pixels[0];
  let count = 0;
  for (const value of pixels) {
    if (value === label) {
      count += 1;
    } else {
      runs.push(label, count);
      label = value;
      count = 1;
    }
  }
  runs.push(label, count);
  return { h, w, runs };
}

export function decodeMask(obj: RleMask): PixelMask {
  const { h, w, runs } = obj;
  if (!Number.isInteger(h) || !Number.isInteger(w) || h < 1 || w < 1) {
    throw new MaskCodecError(`mask dimensions must be positive integers, got ${h}x${w}`);
  }
  if (!Array.isArray(runs) || runs.length % 2 !== 0) {
    throw new MaskCodecError("runs must be an even-length [label, count, ...] array");
  }
  let total = 0;
  for (let i = 0; i < runs.length; i += 2) {
    const label = runs[i];
    const count = runs[i + 1];
    if (!Number.isInteger(label) || label < 0 || label > 255) {
      throw new MaskCodecError(`labels must be integers in [0, 255], got ${label}`);
    }
    if (!Number.isInteger(count) || count < 1) {
      throw new MaskCodecError(`run counts must be positive integers, got ${count}`);
    }
    total += count;
  }
  if (total !== h * w) {
    throw new MaskCodecError(`runs cover ${total} pixels, expected ${h * w}`);
  }
  const pixels = new Uint8Array(h * w);
  let at = 0;
  for (let i = 0; i < runs.length; i += 2) {
    pixels.fill(runs[i], at, at + runs[i + 1]);
    at += runs[i + 1];
  }
  return { pixels, h, w };
}
