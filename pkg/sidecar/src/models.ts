/**
 * Built-in deterministic frame models.
 *
 * These are lightweight classical stand-ins served behind the same protocol
 * a deep-model deployment would use; the handshake's model_ids record what
 * is actually loaded so reports can carry provenance. Swapping in real
 * checkpoints means implementing FrameModels and wiring it into the server.
 */

import jpeg from "jpeg-js";

export const EMBEDDING_DIM = 64;
export const EMBED_MODEL_ID = "toy-embed-v1";
export const SHOT_MODEL_ID = "toy-shot-v1";

export interface DecodedFrame {
  width: number;
  height: number;
  data: Uint8Array; // RGBA
}

export function decodeFrame(b64: string): DecodedFrame {
  const raw = Buffer.from(b64, "base64");
  const image = jpeg.decode(raw, { useTArray: true, maxMemoryUsageInMB: 64 });
  return { width: image.width, height: image.height, data: image.data };
}

/** Normalized 16-bin-per-channel RGB histogram (sums to 1). */
export function colorHistogram(frame: DecodedFrame): Float64Array {
  const hist = new Float64Array(48);
  const { data } = frame;
  const pixels = data.length / 4;
  for (let i = 0; i < data.length; i += 4) {
    hist[data[i] >> 4] += 1; // R bins 0..15
    hist[16 + (data[i + 1] >> 4)] += 1; // G bins 16..31
    hist[32 + (data[i + 2] >> 4)] += 1; // B bins 32..47
  }
  for (let i = 0; i < hist.length; i++) hist[i] /= pixels * 3;
  return hist;
}

/** 4x4 grid of mean luma values in [0, 1]. */
export function lumaGrid(frame: DecodedFrame): Float64Array {
  const cells = 4;
  const grid = new Float64Array(cells * cells);
  const counts = new Float64Array(cells * cells);
  const { width, height, data } = frame;
  for (let y = 0; y < height; y++) {
    const gy = Math.min(cells - 1, Math.floor((y * cells) / height));
    for (let x = 0; x < width; x++) {
      const gx = Math.min(cells - 1, Math.floor((x * cells) / width));
      const i = (y * width + x) * 4;
      const luma = 0.299 * data[i] + 0.587 * data[i + 1] + 0.114 * data[i + 2];
      const cell = gy * cells + gx;
      grid[cell] += luma / 255;
      counts[cell] += 1;
    }
  }
  for (let i = 0; i < grid.length; i++) grid[i] /= counts[i] || 1;
  return grid;
}

/** 64-dim L2-normalized embedding: color histogram (48) + luma grid (16). */
export function embedFrame(frame: DecodedFrame): number[] {
  const hist = colorHistogram(frame);
  const grid = lumaGrid(frame);
  const vector = new Float64Array(EMBEDDING_DIM);
  vector.set(hist, 0);
  vector.set(grid, 48);
  let norm = 0;
  for (const v of vector) norm += v * v;
  norm = Math.sqrt(norm);
  const out = new Array(EMBEDDING_DIM);
  for (let i = 0; i < EMBEDDING_DIM; i++) out[i] = norm > 0 ? vector[i] / norm : 0;
  return out;
}

/**
 * Joint 8x8x8 RGB histogram (sums to 1). Unlike per-channel marginals, a
 * hard color cut has fully disjoint support here, so its L1 distance hits
 * the theoretical maximum of 2.
 */
export function jointHistogram(frame: DecodedFrame): Float64Array {
  const hist = new Float64Array(512);
  const { data } = frame;
  const pixels = data.length / 4;
  for (let i = 0; i < data.length; i += 4) {
    const r = data[i] >> 5;
    const g = data[i + 1] >> 5;
    const b = data[i + 2] >> 5;
    hist[(r << 6) | (g << 3) | b] += 1;
  }
  for (let i = 0; i < hist.length; i++) hist[i] /= pixels;
  return hist;
}

/** Transition probability in [0, 1]: half the L1 distance of joint histograms. */
export function shotScore(a: DecodedFrame, b: DecodedFrame): number {
  const ha = jointHistogram(a);
  const hb = jointHistogram(b);
  let l1 = 0;
  for (let i = 0; i < ha.length; i++) l1 += Math.abs(ha[i] - hb[i]);
  return Math.min(1, l1 / 2);
}
