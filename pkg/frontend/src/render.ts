// Pure pixel pipelines: slice values -> grayscale RGBA, plus overlay and
// scribble compositing. No canvas access here so the math is testable.

import { SCRIB_BG, SCRIB_FG } from "./state.js";

export type Rgb = [number, number, number];

export const OVERLAY_COLOR: Rgb = [237, 76, 60]; // segmentation mask
export const FG_COLOR: Rgb = [60, 200, 90]; // foreground scribble
export const BG_COLOR: Rgb = [70, 130, 240]; // background scribble

/** Window/level grayscale mapping into an RGBA buffer (alpha 255). */
export function renderSlice(
  values: Float32Array,
  width: number,
  height: number,
  window: number,
  level: number,
): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(width * height * 4);
  const lo = level - window / 2;
  const scale = 255 / (window > 0 ? window : 1e-6);
  for (let i = 0; i < width * height; i++) {
    // Uint8ClampedArray rounds and clamps on store
    const g = (values[i] - lo) * scale;
    out[4 * i] = g;
    out[4 * i + 1] = g;
    out[4 * i + 2] = g;
    out[4 * i + 3] = 255;
  }
  return out;
}

/** Alpha-blend a color into rgba wherever mask is nonzero, in place. */
export function compositeMask(
  rgba: Uint8ClampedArray,
  mask: Uint8Array,
  color: Rgb,
  opacity: number,
): void {
  const a = Math.min(Math.max(opacity, 0), 1);
  for (let i = 0; i < mask.length; i++) {
    if (mask[i] === 0) continue;
    rgba[4 * i] = rgba[4 * i] * (1 - a) + color[0] * a;
    rgba[4 * i + 1] = rgba[4 * i + 1] * (1 - a) + color[1] * a;
    rgba[4 * i + 2] = rgba[4 * i + 2] * (1 - a) + color[2] * a;
  }
}

/** Scribble compositing: class 2 in the FG color, class 3 in the BG color. */
export function compositeScribbles(
  rgba: Uint8ClampedArray,
  scrib: Uint8Array,
  opacity = 0.9,
): void {
  const fg = new Uint8Array(scrib.length);
  const bg = new Uint8Array(scrib.length);
  for (let i = 0; i < scrib.length; i++) {
    if (scrib[i] === SCRIB_FG) fg[i] = 1;
    else if (scrib[i] === SCRIB_BG) bg[i] = 1;
  }
  compositeMask(rgba, fg, FG_COLOR, opacity);
  compositeMask(rgba, bg, BG_COLOR, opacity);
}
