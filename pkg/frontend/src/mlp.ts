/**
 * CPU reference of the blend MLP, double precision.
 *
 * This is the numeric contract the fragment shader re-implements:
 *   logit_i = MLP3([f_i | d | dd_i])      relu between layers
 *   masked  = logit_i * m_i - (1 - m_i) * 1e9
 *   omega   = softmax over views; fully occluded points get 1/N
 * Kept runnable in node so tests can pin it against goldens exported
 * by the rendering service's own implementation.
 */

import type { BlendWeights } from "./manifest.js";

export const MASK_OFF = 1.0e9;

function affine(x: Float64Array, W: Float64Array, b: Float64Array,
                nIn: number, nOut: number, out: Float64Array) {
  for (let j = 0; j < nOut; j++) out[j] = b[j];
  for (let i = 0; i < nIn; i++) {
    const xi = x[i];
    if (xi === 0) continue;
    const row = i * nOut;
    for (let j = 0; j < nOut; j++) out[j] += xi * W[row + j];
  }
}

/** One logit for one view's input vector [f | d | dd]. */
export function mlpLogit(w: BlendWeights, x: Float64Array): number {
  const h0 = new Float64Array(w.dims[1]);
  const h1 = new Float64Array(w.dims[3]);
  affine(x, w.W0, w.b0, w.dims[0], w.dims[1], h0);
  for (let i = 0; i < h0.length; i++) h0[i] = Math.max(h0[i], 0);
  affine(h0, w.W1, w.b1, w.dims[2], w.dims[3], h1);
  for (let i = 0; i < h1.length; i++) h1[i] = Math.max(h1[i], 0);
  const out = new Float64Array(1);
  affine(h1, w.W2, w.b2, w.dims[4], w.dims[5], out);
  return out[0];
}

/**
 * Blend weights for one point.
 * f: N*C features, d: 3, dd: N*3, mask: N in {0,1}. Returns omega[N].
 */
export function blendOmega(w: BlendWeights, f: Float64Array, d: Float64Array,
                           dd: Float64Array, mask: Float64Array): Float64Array {
  const N = mask.length;
  const C = w.cFeat;
  const x = new Float64Array(C + 6);
  const logits = new Float64Array(N);
  for (let v = 0; v < N; v++) {
    for (let c = 0; c < C; c++) x[c] = f[v * C + c];
    x[C] = d[0]; x[C + 1] = d[1]; x[C + 2] = d[2];
    x[C + 3] = dd[v * 3]; x[C + 4] = dd[v * 3 + 1]; x[C + 5] = dd[v * 3 + 2];
    logits[v] = mlpLogit(w, x);
  }
  let any = 0;
  let mx = -Infinity;
  for (let v = 0; v < N; v++) {
    any += mask[v];
    logits[v] = logits[v] * mask[v] - (1 - mask[v]) * MASK_OFF;
    if (logits[v] > mx) mx = logits[v];
  }
  const omega = new Float64Array(N);
  if (any === 0) {
    omega.fill(1 / N);
    return omega;
  }
  let sum = 0;
  for (let v = 0; v < N; v++) {
    omega[v] = Math.exp(logits[v] - mx);
    sum += omega[v];
  }
  for (let v = 0; v < N; v++) omega[v] /= sum;
  return omega;
}

/** Convex blend: omega[N] x values[N*C] -> C. */
export function blendValues(omega: Float64Array, values: Float64Array,
                            C: number): Float64Array {
  const out = new Float64Array(C);
  for (let v = 0; v < omega.length; v++) {
    const o = omega[v];
    for (let c = 0; c < C; c++) out[c] += o * values[v * C + c];
  }
  return out;
}
