import type { MeshData } from "./types.js";

// Parses the binary_little_endian PLY the bundle ships: float vertex
// props x y z nx ny nz, faces as "list uchar int vertex_indices".

const FLOAT_PROPS = ["x", "y", "z", "nx", "ny", "nz"];

export function parsePly(buf: ArrayBuffer): MeshData {
  const bytes = new Uint8Array(buf);
  const marker = "end_header\n";
  const headEnd = findAscii(bytes, marker);
  if (headEnd < 0) throw new Error("not a PLY file (no end_header)");
  const header = new TextDecoder().decode(bytes.subarray(0, headEnd));
  const lines = header.split("\n").map((l) => l.trim());
  if (lines[0] !== "ply") throw new Error("not a PLY file");
  if (!lines.some((l) => l.includes("binary_little_endian"))) {
    throw new Error("only binary_little_endian PLY supported");
  }

  let vertexCount = 0;
  let faceCount = 0;
  const vertexProps: string[] = [];
  let current = "";
  for (const line of lines) {
    const p = line.split(/\s+/);
    if (p[0] === "element") {
      current = p[1];
      if (current === "vertex") vertexCount = parseInt(p[2], 10);
      if (current === "face") faceCount = parseInt(p[2], 10);
    } else if (p[0] === "property" && current === "vertex") {
      if (p[1] !== "float") {
        throw new Error(`unsupported vertex property type ${p[1]}`);
      }
      vertexProps.push(p[2]);
    }
  }
  for (let i = 0; i < FLOAT_PROPS.length; i++) {
    if (vertexProps[i] !== FLOAT_PROPS[i]) {
      throw new Error(`unexpected vertex layout: ${vertexProps.join(",")}`);
    }
  }

  const stride = vertexProps.length * 4;
  let off = headEnd + marker.length;
  const need = off + vertexCount * stride + faceCount * 13;
  if (buf.byteLength < need) {
    throw new Error(`PLY truncated: need ${need} bytes, have ${buf.byteLength}`);
  }
  const vertices = new Float32Array(buf.slice(off, off + vertexCount * stride));
  off += vertexCount * stride;

  const dv = new DataView(buf);
  const indices = new Uint32Array(faceCount * 3);
  for (let fIdx = 0; fIdx < faceCount; fIdx++) {
    const n = dv.getUint8(off);
    if (n !== 3) throw new Error(`face ${fIdx}: ${n} vertices, only triangles supported`);
    indices[fIdx * 3 + 0] = dv.getInt32(off + 1, true);
    indices[fIdx * 3 + 1] = dv.getInt32(off + 5, true);
    indices[fIdx * 3 + 2] = dv.getInt32(off + 9, true);
    off += 13;
  }
  return { vertexCount, faceCount, vertices, indices };
}

function findAscii(bytes: Uint8Array, needle: string): number {
  const n = needle.length;
  outer: for (let i = 0; i + n <= Math.min(bytes.length, 65536); i++) {
    for (let j = 0; j < n; j++) {
      if (bytes[i + j] !== needle.charCodeAt(j)) continue outer;
    }
    return i;
  }
  return -1;
}
