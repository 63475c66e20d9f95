/**
 * B2 — mask codec against the service's own encoder.
 *
 * A stub HTTP server serves 100 random masks that were encoded by the
 * Python-side codec (ground-truth pixels alongside). The UI codec must
 * decode every wire pixel-exactly and re-encode it byte-identically.
 */

import { execFile } from "node:child_process";
import http from "node:http";
import { promisify } from "node:util";
import { afterAll, beforeAll, expect, it } from "vitest";
import { decodeMask, encodeMask, type RleMask } from "../src/rle.js";

interface StubMask extends RleMask {
  pixels_b64: string;
}

let server: http.Server;
let stubUrl: string;

beforeAll(async () => {
  const { stdout } = await promisify(execFile)(
    "python3",
    [new URL("./gen_rle_fixtures.py", import.meta.url).pathname],
    { cwd: new URL("..", import.meta.url).pathname, maxBuffer: 64 * 1024 * 1024 },
  );
  const masks: StubMask[] = JSON.parse(stdout);
  expect(masks).toHaveLength(100);

  server = http.createServer((req, res) => {
    const match = req.url?.match(/^\/masks\/(\d+)$/);
    if (!match || Number(match[1]) >= masks.length) {
      res.writeHead(404).end();
      return;
    }
    res.writeHead(200, { "content-type": "application/json" });
    res.end(JSON.stringify(masks[Number(match[1])]));
  });
  await new Promise<void>((resolve) => server.listen(0, "127.0.0.1", resolve));
  const address = server.address();
  if (typeof address === "object" && address) stubUrl = `http://127.0.0.1:${address.port}`;
});

afterAll(() => {
  server?.close();
});

it("B2: decode and encode are pixel-exact on 100 served masks", async () => {
  let pixelsChecked = 0;
  for (let i = 0; i < 100; i++) {
    const response = await fetch(`${stubUrl}/masks/${i}`);
    expect(response.ok).toBe(true);
    const served = (await response.json()) as StubMask;
    const reference = new Uint8Array(Buffer.from(served.pixels_b64, "base64"));

    const decoded = decodeMask(served);
    expect(decoded.h, `mask ${i} height`).toBe(served.h);
    expect(decoded.w, `mask ${i} width`).toBe(served.w);
    expect(
      Buffer.from(decoded.pixels).equals(Buffer.from(reference)),
      `mask ${i}: decoded pixels differ`,
    ).toBe(true);

    const reEncoded = encodeMask(reference, served.h, served.w);
    expect(reEncoded.runs, `mask ${i}: re-encoded runs differ`).toEqual(served.runs);
    expect(reEncoded.h).toBe(served.h);
    expect(reEncoded.w).toBe(served.w);
    pixelsChecked += served.h * served.w;
  }
  console.log(`B2 PASS — 100 stub-served masks decoded and re-encoded exactly (${pixelsChecked} px)`);
});
