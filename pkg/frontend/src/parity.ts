/** Client-vs-server frame comparison used by parity mode. */

/**
 * Median |a - b| over covered pixels, u8 domain.
 * a, b: RGB(A) byte arrays of the same HxW; coverage: per-pixel flags.
 * Alpha channels (stride 4) are skipped.
 */
export function medianAbsDiff(a: Uint8Array | Uint8ClampedArray,
                              b: Uint8Array | Uint8ClampedArray,
                              coverage: Uint8Array, stride = 3): number {
  if (a.length !== b.length) {
    throw new Error(`frame size mismatch: ${a.length} vs ${b.length}`);
  }
  const n = coverage.length;
  if (a.length !== n * stride) {
    throw new Error(`coverage length ${n} does not match frame ${a.length / stride}`);
  }
  const diffs: number[] = [];
  const ch = Math.min(stride, 3);
  for (let p = 0; p < n; p++) {
    if (!coverage[p]) continue;
    for (let c = 0; c < ch; c++) {
      diffs.push(Math.abs(a[p * stride + c] - b[p * stride + c]));
    }
  }
  if (diffs.length === 0) return 0;
  diffs.sort((x, y) => x - y);
  const mid = diffs.length >> 1;
  return diffs.length % 2 ? diffs[mid] : (diffs[mid - 1] + diffs[mid]) / 2;
}

/**
 * Coverage from the background color: a pixel counts as covered when
 * any channel differs from the background byte value.
 */
export function coverageMask(img: Uint8Array | Uint8ClampedArray, n: number,
                             stride: number, background: number): Uint8Array {
  const mask = new Uint8Array(n);
  const ch = Math.min(stride, 3);
  for (let p = 0; p < n; p++) {
    for (let c = 0; c < ch; c++) {
      if (img[p * stride + c] !== background) { mask[p] = 1; break; }
    }
  }
  return mask;
}

/**
 * Max |sum(omega) - 1| decoded from the sigma debug frame, where the
 * shader writes 0.5 + (sum - 1) * scale into the red channel.
 */
export function sigmaOmegaMax(frame: Uint8Array | Uint8ClampedArray,
                              coverage: Uint8Array, stride = 4,
                              scale = 100.0): number {
  let worst = 0;
  for (let p = 0; p < coverage.length; p++) {
    if (!coverage[p]) continue;
    const r = frame[p * stride] / 255;
    const dev = Math.abs((r - 0.5) / scale);
    if (dev > worst) worst = dev;
  }
  return worst;
}
