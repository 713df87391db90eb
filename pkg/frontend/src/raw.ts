import type { RawImage } from "./types.js";

/**
 * Raw planar image format: one JSON header line, then little-endian
 * channel planes (C planes of H x W). Used for feature maps and depth.
 */
export function parseRaw(buf: ArrayBuffer): RawImage {
  const bytes = new Uint8Array(buf);
  let nl = -1;
  // header is a single ASCII line; scan a bounded prefix for \n
  const limit = Math.min(bytes.length, 4096);
  for (let i = 0; i < limit; i++) {
    if (bytes[i] === 0x0a) { nl = i; break; }
  }
  if (nl < 0) throw new Error("raw image: missing header line");
  let header: any;
  try {
    header = JSON.parse(new TextDecoder().decode(bytes.subarray(0, nl)));
  } catch {
    throw new Error("raw image: header is not JSON");
  }
  for (const k of ["width", "height", "channels", "dtype", "layout"]) {
    if (!(k in header)) throw new Error(`raw image: header missing ${k}`);
  }
  if (header.layout !== "planar") {
    throw new Error(`raw image: unsupported layout ${header.layout}`);
  }
  const { width, height, channels, dtype } = header;
  const count = width * height * channels;
  const body = buf.slice(nl + 1);
  if (dtype === "float32") {
    if (body.byteLength !== count * 4) {
      throw new Error(`raw image: expected ${count * 4} payload bytes, got ${body.byteLength}`);
    }
    return { width, height, channels, dtype, data: new Float32Array(body) };
  }
  if (dtype === "int32") {
    if (body.byteLength !== count * 4) {
      throw new Error(`raw image: expected ${count * 4} payload bytes, got ${body.byteLength}`);
    }
    return { width, height, channels, dtype, data: new Int32Array(body) };
  }
  throw new Error(`raw image: unsupported dtype ${dtype}`);
}

/** planar (c, y, x) lookup */
export function rawAt(img: RawImage, x: number, y: number, c: number): number {
  return img.data[(c * img.height + y) * img.width + x];
}
