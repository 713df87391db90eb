import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { blendWeights, packUniform, parseManifest } from "../src/manifest.js";

const FIX = join(__dirname, "fixtures", "bundle");
const manifestText = readFileSync(join(FIX, "shader.bin.json"), "utf8");
const blobBuf = (() => {
  const b = readFileSync(join(FIX, "shader.bin"));
  return b.buffer.slice(b.byteOffset, b.byteOffset + b.byteLength);
})();

describe("shader manifest", () => {
  it("parses the exported blend weights", () => {
    const w = blendWeights(parseManifest(manifestText), blobBuf);
    expect(w.cFeat).toBeGreaterThan(0);
    expect(w.dims[0]).toBe(w.cFeat + 6);
    expect(w.dims[5]).toBe(1);
    expect(w.W0.length).toBe(w.dims[0] * w.dims[1]);
    expect(w.b2.length).toBe(1);
    for (const v of w.W0.subarray(0, 16)) expect(Number.isFinite(v)).toBe(true);
  });

  it("corrupt manifest errors name the offending field", () => {
    const m = JSON.parse(manifestText);
    delete m["net.layers.1.W"];
    expect(() => blendWeights(parseManifest(JSON.stringify(m)), blobBuf))
      .toThrow(/net\.layers\.1\.W/);

    const m2 = JSON.parse(manifestText);
    m2["net.layers.0.W"].offset = blobBuf.byteLength;
    expect(() => blendWeights(parseManifest(JSON.stringify(m2)), blobBuf))
      .toThrow(/net\.layers\.0\.W extends past blob end/);

    const m3 = JSON.parse(manifestText);
    m3["net.layers.2.b"].shape = "oops";
    expect(() => parseManifest(JSON.stringify(m3)))
      .toThrow(/net\.layers\.2\.b\.shape/);

    const m4 = JSON.parse(manifestText);
    m4["net.layers.0.b"].dtype = "float32";
    expect(() => blendWeights(parseManifest(JSON.stringify(m4)), blobBuf))
      .toThrow(/net\.layers\.0\.b.*float32/);
  });

  it("rejects non-chaining layer shapes", () => {
    const m = JSON.parse(manifestText);
    m["net.layers.1.W"].shape = [m["net.layers.1.W"].shape[0] + 1,
                                 m["net.layers.1.W"].shape[1]];
    expect(() => blendWeights(parseManifest(JSON.stringify(m)), blobBuf))
      .toThrow(/chain/);
  });

  it("packUniform is vec4 aligned and lossless", () => {
    const w = blendWeights(parseManifest(manifestText), blobBuf);
    const { data, offsets } = packUniform(w);
    expect(data.length % 4).toBe(0);
    for (const o of offsets) expect(o % 4).toBe(0);
    const segs = [w.W0, w.b0, w.W1, w.b1, w.W2, w.b2];
    segs.forEach((s, i) => {
      for (let k = 0; k < s.length; k++) {
        expect(data[offsets[i] + k]).toBeCloseTo(s[k], 6);
      }
    });
  });
});
