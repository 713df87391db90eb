/**
 * Shader weight manifest + blob parsing.
 *
 * The manifest maps array names to {shape, dtype, offset} into a flat
 * little-endian blob. The blend MLP ships as net.layers.{0,1,2}.{W,b}.
 * Validation errors name the offending manifest field so the UI banner
 * can show it.
 */

export interface ManifestEntry {
  shape: number[];
  dtype: string;
  offset: number;
}

export type Manifest = Record<string, ManifestEntry>;

export interface BlendWeights {
  cFeat: number;
  width: number;
  W0: Float64Array; b0: Float64Array;
  W1: Float64Array; b1: Float64Array;
  W2: Float64Array; b2: Float64Array;
  /** [in0, out0, in1, out1, in2, out2] */
  dims: number[];
}

export function parseManifest(text: string): Manifest {
  let m: any;
  try {
    m = JSON.parse(text);
  } catch {
    throw new Error("manifest: not valid JSON");
  }
  for (const name of Object.keys(m)) {
    const e = m[name];
    if (!Array.isArray(e.shape)) throw new Error(`manifest: ${name}.shape missing or not a list`);
    if (typeof e.dtype !== "string") throw new Error(`manifest: ${name}.dtype missing`);
    if (typeof e.offset !== "number" || e.offset < 0) {
      throw new Error(`manifest: ${name}.offset missing or negative`);
    }
  }
  return m as Manifest;
}

function sliceF64(blob: ArrayBuffer, e: ManifestEntry, name: string): Float64Array {
  const count = e.shape.reduce((a, b) => a * b, 1);
  if (e.dtype !== "float64") {
    throw new Error(`manifest: ${name}.dtype ${e.dtype}, expected float64`);
  }
  if (e.offset + count * 8 > blob.byteLength) {
    throw new Error(`manifest: ${name} extends past blob end`);
  }
  return new Float64Array(blob.slice(e.offset, e.offset + count * 8));
}

export function blendWeights(manifest: Manifest, blob: ArrayBuffer): BlendWeights {
  const names = ["net.layers.0.W", "net.layers.0.b", "net.layers.1.W",
                 "net.layers.1.b", "net.layers.2.W", "net.layers.2.b"];
  for (const n of names) {
    if (!(n in manifest)) throw new Error(`manifest: missing ${n}`);
  }
  const shapes = names.map((n) => manifest[n].shape);
  const [in0, out0] = shapes[0];
  const [in1, out1] = shapes[2];
  const [in2, out2] = shapes[4];
  if (out0 !== in1 || out1 !== in2) {
    throw new Error(`manifest: layer shapes do not chain (${out0} -> ${in1}, ${out1} -> ${in2})`);
  }
  if (out2 !== 1) throw new Error(`manifest: net.layers.2.W output dim ${out2}, expected 1`);
  if (in0 < 7) throw new Error(`manifest: net.layers.0.W input dim ${in0} too small for [f|d|dd]`);
  return {
    cFeat: in0 - 6,
    width: out0,
    W0: sliceF64(blob, manifest[names[0]], names[0]),
    b0: sliceF64(blob, manifest[names[1]], names[1]),
    W1: sliceF64(blob, manifest[names[2]], names[2]),
    b1: sliceF64(blob, manifest[names[3]], names[3]),
    W2: sliceF64(blob, manifest[names[4]], names[4]),
    b2: sliceF64(blob, manifest[names[5]], names[5]),
    dims: [in0, out0, in1, out1, in2, out2],
  };
}

/**
 * Flatten weights into a single f32 array, vec4-padded rows, for the
 * fragment shader uniform block. Layout (all row-major, in-dim rows):
 * W0 | b0 | W1 | b1 | W2 | b2, each segment aligned to 4 floats.
 */
export function packUniform(w: BlendWeights): { data: Float32Array; offsets: number[] } {
  const segs = [w.W0, w.b0, w.W1, w.b1, w.W2, w.b2];
  const offsets: number[] = [];
  let total = 0;
  for (const s of segs) {
    offsets.push(total);
    total += Math.ceil(s.length / 4) * 4;
  }
  const data = new Float32Array(total);
  segs.forEach((s, i) => data.set(s, offsets[i]));
  return { data, offsets };
}
