import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { parsePly } from "../src/ply.js";

const MESH = join(__dirname, "fixtures", "bundle", "mesh.ply");

function load(p: string): ArrayBuffer {
  const b = readFileSync(p);
  return b.buffer.slice(b.byteOffset, b.byteOffset + b.byteLength);
}

describe("ply parser", () => {
  it("vertex and face counts match the header", () => {
    const buf = load(MESH);
    const header = new TextDecoder().decode(new Uint8Array(buf, 0, 400));
    const nv = parseInt(header.match(/element vertex (\d+)/)![1], 10);
    const nf = parseInt(header.match(/element face (\d+)/)![1], 10);
    const mesh = parsePly(buf);
    expect(mesh.vertexCount).toBe(nv);
    expect(mesh.faceCount).toBe(nf);
    expect(mesh.vertices.length).toBe(nv * 6);
    expect(mesh.indices.length).toBe(nf * 3);
  });

  it("indices stay in range and normals are unit-ish", () => {
    const mesh = parsePly(load(MESH));
    for (const i of mesh.indices) expect(i).toBeLessThan(mesh.vertexCount);
    // spot-check a few normals
    for (let v = 0; v < Math.min(mesh.vertexCount, 20); v++) {
      const n = Math.hypot(mesh.vertices[v * 6 + 3], mesh.vertices[v * 6 + 4],
                           mesh.vertices[v * 6 + 5]);
      expect(Math.abs(n - 1)).toBeLessThan(1e-3);
    }
  });

  it("rejects garbage and truncation", () => {
    expect(() => parsePly(new Uint8Array([1, 2, 3]).buffer)).toThrow(/PLY/);
    const buf = load(MESH);
    expect(() => parsePly(buf.slice(0, buf.byteLength - 5))).toThrow(/truncated/);
    const ascii = new TextEncoder().encode(
      "ply\nformat ascii 1.0\nelement vertex 0\nend_header\n");
    expect(() => parsePly(ascii.buffer.slice(0))).toThrow(/little_endian/);
  });
});
