// Viewer state: current volume, slice navigation, window/level, pending
// interactions (clicks and scribble strokes), and the inference overlay.
//
// Everything here is DOM-free so the invariants (slice clamping, click to
// voxel mapping, stroke rasterization, undo) are unit-testable.

import { flatIndex, type NiftiVolume } from "./nifti.js";

export type Axis = "axial" | "coronal" | "sagittal";
export type Tool = "pos-click" | "neg-click" | "fg-scribble" | "bg-scribble" | "none";

export interface Voxel {
  x: number;
  y: number;
  z: number;
}

/** Scribble class codes match the wire format: 2 foreground, 3 background. */
export const SCRIB_FG = 2;
export const SCRIB_BG = 3;

export interface Stroke {
  cls: typeof SCRIB_FG | typeof SCRIB_BG;
  voxels: Voxel[];
}

export interface SliceView {
  /** Integer CSS pixels per voxel; >= 1. */
  zoom: number;
  offsetX: number;
  offsetY: number;
}

export interface Slice {
  width: number;
  height: number;
  values: Float32Array;
}

type Interaction =
  | { kind: "click"; positive: boolean }
  | { kind: "stroke" };

// axis -> which volume dimension is sliced through
const SLICE_DIM: Record<Axis, 0 | 1 | 2> = { sagittal: 0, coronal: 1, axial: 2 };

function planePoint(axis: Axis, u: number, v: number, k: number): Voxel {
  switch (axis) {
    case "axial":
      return { x: u, y: v, z: k };
    case "coronal":
      return { x: u, y: k, z: v };
    case "sagittal":
      return { x: k, y: u, z: v };
  }
}

/** numpy-style linear-interpolation percentile of an unsorted array. */
export function percentile(values: ArrayLike<number>, q: number): number {
  const n = values.length;
  if (n === 0) throw new Error("percentile of empty array");
  const sorted = Float64Array.from(values as ArrayLike<number>).sort();
  const rank = (q / 100) * (n - 1);
  const lo = Math.floor(rank);
  const hi = Math.min(lo + 1, n - 1);
  const frac = rank - lo;
  return sorted[lo] * (1 - frac) + sorted[hi] * frac;
}

export class ViewerState {
  volume: NiftiVolume | null = null;
  imageId: string | null = null;
  sessionId: string | null = null;

  axis: Axis = "axial";
  sliceIndex = 0;
  window = 1.0;
  level = 0.5;

  tool: Tool = "none";
  clicks: { positive: Voxel[]; negative: Voxel[] } = { positive: [], negative: [] };
  strokes: Stroke[] = [];
  private activeStroke: Stroke | null = null;
  private interactions: Interaction[] = [];

  overlay: Uint8Array | null = null;
  overlayOpacity = 0.45;

  setVolume(vol: NiftiVolume, id: { imageId?: string; sessionId?: string } = {}): void {
    this.volume = vol;
    this.imageId = id.imageId ?? null;
    this.sessionId = id.sessionId ?? null;
    this.axis = "axial";
    this.sliceIndex = Math.floor(this.sliceCount(this.axis) / 2);
    this.clearInteractions();
    this.overlay = null;
    const s = this.slice();
    // default contrast from the displayed slice: robust percentiles so a few
    // hot voxels do not wash out the window
    const lo = percentile(s.values, 0.5);
    const hi = percentile(s.values, 99.5);
    this.window = Math.max(hi - lo, 1e-6);
    this.level = (hi + lo) / 2;
  }

  sliceCount(axis: Axis = this.axis): number {
    if (!this.volume) return 0;
    return this.volume.dims[SLICE_DIM[axis]];
  }

  setAxis(axis: Axis): void {
    this.axis = axis;
    this.setSlice(this.sliceIndex);
  }

  setSlice(index: number): void {
    const count = this.sliceCount();
    this.sliceIndex = count === 0 ? 0 : Math.min(Math.max(Math.trunc(index), 0), count - 1);
  }

  /** In-plane size of the current slice: [width, height] in screen terms. */
  planeSize(): [number, number] {
    if (!this.volume) return [0, 0];
    const [nx, ny, nz] = this.volume.dims;
    switch (this.axis) {
      case "axial":
        return [nx, ny];
      case "coronal":
        return [nx, nz];
      case "sagittal":
        return [ny, nz];
    }
  }

  /** Map in-plane coordinates (u, v) plus the slice index to a voxel. */
  planeToVoxel(u: number, v: number, k = this.sliceIndex): Voxel {
    return planePoint(this.axis, u, v, k);
  }

  /** Inverse of planeToVoxel: [u, v] for a voxel on the current axis. */
  voxelToPlane(p: Voxel): [number, number] {
    switch (this.axis) {
      case "axial":
        return [p.x, p.y];
      case "coronal":
        return [p.x, p.z];
      case "sagittal":
        return [p.y, p.z];
    }
  }

  slice(index = this.sliceIndex, axis = this.axis): Slice {
    const vol = this.volume;
    if (!vol) throw new Error("no volume loaded");
    const [w, h] = (() => {
      const [nx, ny, nz] = vol.dims;
      if (axis === "axial") return [nx, ny];
      if (axis === "coronal") return [nx, nz];
      return [ny, nz];
    })();
    const out = new Float32Array(w * h);
    for (let v = 0; v < h; v++) {
      for (let u = 0; u < w; u++) {
        const p = planePoint(axis, u, v, index);
        out[u + w * v] = vol.data[flatIndex(vol.dims, p.x, p.y, p.z)];
      }
    }
    return { width: w, height: h, values: out };
  }

  /** Overlay values along the current slice, for compositing. */
  overlaySlice(): Uint8Array | null {
    if (!this.overlay || !this.volume) return null;
    const [w, h] = this.planeSize();
    const out = new Uint8Array(w * h);
    for (let v = 0; v < h; v++) {
      for (let u = 0; u < w; u++) {
        const p = this.planeToVoxel(u, v);
        out[u + w * v] = this.overlay[flatIndex(this.volume.dims, p.x, p.y, p.z)];
      }
    }
    return out;
  }

  /** Pending scribbles along the current slice as {0, 2, 3} values. */
  scribbleSlice(): Uint8Array {
    const [w, h] = this.planeSize();
    const out = new Uint8Array(w * h);
    for (const s of this.strokes) {
      for (const p of s.voxels) {
        const [u, v] = this.voxelToPlane(p);
        const onPlane =
          (this.axis === "axial" && p.z === this.sliceIndex) ||
          (this.axis === "coronal" && p.y === this.sliceIndex) ||
          (this.axis === "sagittal" && p.x === this.sliceIndex);
        if (onPlane) out[u + w * v] = s.cls;
      }
    }
    return out;
  }

  /**
   * Screen pixel -> voxel under the cursor, or null outside the slice.
   *
   * The voxel at plane position (u, v) covers screen rect
   * [offsetX + u*zoom, offsetX + (u+1)*zoom) x [offsetY + v*zoom, ...), so the
   * mapping is floor((px - offset) / zoom) and any click inside the canvas
   * re-projects to a rect containing it (distance 0, well within 1 pixel).
   */
  screenToVoxel(px: number, py: number, view: SliceView): Voxel | null {
    if (!this.volume || view.zoom < 1) return null;
    const u = Math.floor((px - view.offsetX) / view.zoom);
    const v = Math.floor((py - view.offsetY) / view.zoom);
    const [w, h] = this.planeSize();
    if (u < 0 || v < 0 || u >= w || v >= h) return null;
    return this.planeToVoxel(u, v);
  }

  /** Screen rect covered by a voxel on the current slice. */
  voxelToScreenRect(p: Voxel, view: SliceView): { x: number; y: number; w: number; h: number } {
    const [u, v] = this.voxelToPlane(p);
    return {
      x: view.offsetX + u * view.zoom,
      y: view.offsetY + v * view.zoom,
      w: view.zoom,
      h: view.zoom,
    };
  }

  private checkBounds(p: Voxel): void {
    const vol = this.volume;
    if (!vol) throw new Error("no volume loaded");
    const [nx, ny, nz] = vol.dims;
    if (
      !Number.isInteger(p.x) || !Number.isInteger(p.y) || !Number.isInteger(p.z) ||
      p.x < 0 || p.y < 0 || p.z < 0 || p.x >= nx || p.y >= ny || p.z >= nz
    ) {
      throw new Error(`voxel (${p.x}, ${p.y}, ${p.z}) outside dims ${vol.dims}`);
    }
  }

  addClick(p: Voxel, positive: boolean): void {
    this.checkBounds(p);
    (positive ? this.clicks.positive : this.clicks.negative).push(p);
    this.interactions.push({ kind: "click", positive });
  }

  beginStroke(cls: typeof SCRIB_FG | typeof SCRIB_BG): void {
    this.activeStroke = { cls, voxels: [] };
  }

  extendStroke(p: Voxel): void {
    if (!this.activeStroke) throw new Error("no active stroke");
    this.checkBounds(p);
    const vs = this.activeStroke.voxels;
    const last = vs[vs.length - 1];
    if (last && last.x === p.x && last.y === p.y && last.z === p.z) return;
    vs.push(p);
  }

  endStroke(): void {
    if (!this.activeStroke) return;
    if (this.activeStroke.voxels.length > 0) {
      this.strokes.push(this.activeStroke);
      this.interactions.push({ kind: "stroke" });
    }
    this.activeStroke = null;
  }

  /** Undo the most recent interaction: one click or one whole stroke. */
  undo(): boolean {
    const last = this.interactions.pop();
    if (!last) return false;
    if (last.kind === "stroke") this.strokes.pop();
    else (last.positive ? this.clicks.positive : this.clicks.negative).pop();
    return true;
  }

  clearInteractions(): void {
    this.clicks = { positive: [], negative: [] };
    this.strokes = [];
    this.activeStroke = null;
    this.interactions = [];
  }

  hasScribbles(): boolean {
    return this.strokes.length > 0;
  }

  /** Rasterize pending strokes to an F-order {0, 2, 3} scribble volume. */
  rasterizeScribbles(): Float32Array {
    const vol = this.volume;
    if (!vol) throw new Error("no volume loaded");
    const [nx, ny, nz] = vol.dims;
    const out = new Float32Array(nx * ny * nz);
    for (const s of this.strokes) {
      for (const p of s.voxels) {
        out[flatIndex(vol.dims, p.x, p.y, p.z)] = s.cls;
      }
    }
    return out;
  }

  clickSets(): { foreground: [number, number, number][]; background: [number, number, number][] } {
    const tup = (p: Voxel): [number, number, number] => [p.x, p.y, p.z];
    return {
      foreground: this.clicks.positive.map(tup),
      background: this.clicks.negative.map(tup),
    };
  }

  setOverlay(mask: Uint8Array, dims: [number, number, number]): void {
    const vol = this.volume;
    if (!vol) throw new Error("no volume loaded");
    if (dims[0] !== vol.dims[0] || dims[1] !== vol.dims[1] || dims[2] !== vol.dims[2]) {
      throw new Error(`overlay dims ${dims} do not match image dims ${vol.dims}`);
    }
    if (mask.length !== dims[0] * dims[1] * dims[2]) {
      throw new Error("overlay length does not match its dims");
    }
    this.overlay = mask;
  }

  clearOverlay(): void {
    this.overlay = null;
  }
}
