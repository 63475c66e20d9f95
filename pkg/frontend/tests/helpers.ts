/** Shared test utilities: a seeded PRNG and mask builders. */

/** Deterministic 32-bit PRNG (mulberry32) so test inputs are reproducible. */
export function seededRng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function randInt(rng: () => number, lo: number, hi: number): number {
  return lo + Math.floor(rng() * (hi - lo + 1));
}

/** Random label map with values in [0, maxLabel]. */
export function randomMask(rng: () => number, h: number, w: number, maxLabel: number): Uint8Array {
  const pixels = new Uint8Array(h * w);
  for (let i = 0; i < pixels.length; i++) pixels[i] = randInt(rng, 0, maxLabel);
  return pixels;
}

/** Nested disc/cup label map (0/1/2) like the ones the service serves. */
export function nestedMask(h: number, w: number, cy: number, cx: number, rDisc: number, rCup: number): Uint8Array {
  const pixels = new Uint8Array(h * w);
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      const d2 = (y - cy) ** 2 + (x - cx) ** 2;
      if (d2 <= rCup * rCup) pixels[y * w + x] = 2;
      else if (d2 <= rDisc * rDisc) pixels[y * w + x] = 1;
    }
  }
  return pixels;
}
