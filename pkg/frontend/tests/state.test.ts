import { beforeEach, describe, expect, it } from "vitest";
import { flatIndex, type NiftiVolume } from "../src/nifti.js";
import { percentile, SCRIB_BG, SCRIB_FG, ViewerState, type SliceView } from "../src/state.js";

function volume(dims: [number, number, number], fill?: (i: number) => number): NiftiVolume {
  const n = dims[0] * dims[1] * dims[2];
  const data = new Float32Array(n);
  for (let i = 0; i < n; i++) data[i] = fill ? fill(i) : i;
  return {
    dims,
    spacing: [1, 1, 1],
    affine: [
      [1, 0, 0, 0],
      [0, 1, 0, 0],
      [0, 0, 1, 0],
      [0, 0, 0, 1],
    ],
    data,
  };
}

describe("percentile", () => {
  it("matches linear interpolation on a known array", () => {
    const a = [10, 20, 30, 40, 50];
    expect(percentile(a, 0)).toBe(10);
    expect(percentile(a, 100)).toBe(50);
    expect(percentile(a, 50)).toBe(30);
    expect(percentile(a, 25)).toBe(20);
    expect(percentile(a, 10)).toBeCloseTo(14, 10); // rank 0.4 between 10 and 20
  });

  it("is order independent", () => {
    expect(percentile([50, 10, 40, 20, 30], 25)).toBe(20);
  });
});

describe("slice navigation", () => {
  let st: ViewerState;
  beforeEach(() => {
    st = new ViewerState();
    st.setVolume(volume([4, 6, 8]));
  });

  it("starts on the middle axial slice", () => {
    expect(st.axis).toBe("axial");
    expect(st.sliceIndex).toBe(4); // nz=8 -> middle 4
  });

  it("clamps the slice index to the axis extent", () => {
    st.setSlice(-5);
    expect(st.sliceIndex).toBe(0);
    st.setSlice(999);
    expect(st.sliceIndex).toBe(7);
    st.setAxis("sagittal"); // nx=4, index 7 out of range now
    expect(st.sliceIndex).toBe(3);
  });

  it("slice counts follow the axis", () => {
    expect(st.sliceCount("axial")).toBe(8);
    expect(st.sliceCount("coronal")).toBe(6);
    expect(st.sliceCount("sagittal")).toBe(4);
  });

  it("extracted slices pick the right voxels on every axis", () => {
    const vol = st.volume!;
    st.setAxis("axial");
    st.setSlice(3);
    let s = st.slice();
    expect(s.width).toBe(4);
    expect(s.height).toBe(6);
    expect(s.values[1 + 4 * 2]).toBe(vol.data[flatIndex(vol.dims, 1, 2, 3)]);

    st.setAxis("coronal");
    st.setSlice(5);
    s = st.slice();
    expect(s.width).toBe(4);
    expect(s.height).toBe(8);
    expect(s.values[2 + 4 * 7]).toBe(vol.data[flatIndex(vol.dims, 2, 5, 7)]);

    st.setAxis("sagittal");
    st.setSlice(1);
    s = st.slice();
    expect(s.width).toBe(6);
    expect(s.height).toBe(8);
    expect(s.values[3 + 6 * 4]).toBe(vol.data[flatIndex(vol.dims, 1, 3, 4)]);
  });

  it("default window/level comes from slice percentiles", () => {
    const st2 = new ViewerState();
    st2.setVolume(volume([10, 10, 3], (i) => i % 100));
    const s = st2.slice();
    const lo = percentile(s.values, 0.5);
    const hi = percentile(s.values, 99.5);
    expect(st2.window).toBeCloseTo(hi - lo, 6);
    expect(st2.level).toBeCloseTo((hi + lo) / 2, 6);
  });
});

describe("click to voxel mapping", () => {
  const st = new ViewerState();
  st.setVolume(volume([12, 10, 8]));

  it("every click re-projects to a rect containing it, at every zoom", () => {
    for (const zoom of [1, 2, 3, 5, 8, 16]) {
      for (const [ox, oy] of [[0, 0], [17, 3], [-4, 9]]) {
        const view: SliceView = { zoom, offsetX: ox, offsetY: oy };
        for (const [px, py] of [
          [ox + 0.01, oy + 0.01],
          [ox + 3 * zoom + zoom / 2, oy + 2 * zoom + zoom / 2],
          [ox + 12 * zoom - 0.01, oy + 10 * zoom - 0.01],
        ]) {
          const p = st.screenToVoxel(px, py, view);
          expect(p).not.toBeNull();
          const r = st.voxelToScreenRect(p!, view);
          // containment: the click is never more than 1 pixel from the rect
          expect(px).toBeGreaterThanOrEqual(r.x);
          expect(px).toBeLessThan(r.x + r.w);
          expect(py).toBeGreaterThanOrEqual(r.y);
          expect(py).toBeLessThan(r.y + r.h);
        }
      }
    }
  });

  it("rect centers round trip to the same voxel", () => {
    const view: SliceView = { zoom: 7, offsetX: 5, offsetY: 11 };
    for (const [u, v] of [[0, 0], [3, 4], [11, 9]]) {
      const p = st.planeToVoxel(u, v);
      const r = st.voxelToScreenRect(p, view);
      const q = st.screenToVoxel(r.x + r.w / 2, r.y + r.h / 2, view);
      expect(q).toEqual(p);
    }
  });

  it("outside the slice returns null", () => {
    const view: SliceView = { zoom: 4, offsetX: 0, offsetY: 0 };
    expect(st.screenToVoxel(-1, 5, view)).toBeNull();
    expect(st.screenToVoxel(12 * 4 + 1, 5, view)).toBeNull();
    expect(st.screenToVoxel(5, 10 * 4 + 0.5, view)).toBeNull();
  });

  it("axis changes the plane composition", () => {
    const view: SliceView = { zoom: 1, offsetX: 0, offsetY: 0 };
    st.setAxis("coronal");
    st.setSlice(2);
    expect(st.screenToVoxel(3.2, 5.9, view)).toEqual({ x: 3, y: 2, z: 5 });
    st.setAxis("sagittal");
    st.setSlice(1);
    expect(st.screenToVoxel(4.5, 6.5, view)).toEqual({ x: 1, y: 4, z: 6 });
    st.setAxis("axial");
  });
});

describe("interactions", () => {
  let st: ViewerState;
  beforeEach(() => {
    st = new ViewerState();
    st.setVolume(volume([6, 6, 6]));
  });

  it("click bookkeeping and wire format", () => {
    st.addClick({ x: 1, y: 2, z: 3 }, true);
    st.addClick({ x: 4, y: 4, z: 4 }, false);
    expect(st.clickSets()).toEqual({ foreground: [[1, 2, 3]], background: [[4, 4, 4]] });
  });

  it("out-of-bounds clicks are rejected", () => {
    expect(() => st.addClick({ x: 6, y: 0, z: 0 }, true)).toThrow(/outside dims/);
    expect(() => st.addClick({ x: 0, y: -1, z: 0 }, true)).toThrow(/outside dims/);
    expect(() => st.addClick({ x: 0.5, y: 0, z: 0 }, true)).toThrow(/outside dims/);
  });

  it("strokes rasterize to {0,2,3} and later strokes win", () => {
    st.beginStroke(SCRIB_FG);
    st.extendStroke({ x: 1, y: 1, z: 1 });
    st.extendStroke({ x: 2, y: 1, z: 1 });
    st.endStroke();
    st.beginStroke(SCRIB_BG);
    st.extendStroke({ x: 2, y: 1, z: 1 }); // overwrites the fg voxel
    st.endStroke();

    const ras = st.rasterizeScribbles();
    expect(ras[flatIndex([6, 6, 6], 1, 1, 1)]).toBe(2);
    expect(ras[flatIndex([6, 6, 6], 2, 1, 1)]).toBe(3);
    const counts = new Map<number, number>();
    for (const v of ras) counts.set(v, (counts.get(v) ?? 0) + 1);
    expect([...counts.keys()].sort()).toEqual([0, 2, 3]);
  });

  it("consecutive duplicate voxels collapse within a stroke", () => {
    st.beginStroke(SCRIB_FG);
    st.extendStroke({ x: 3, y: 3, z: 3 });
    st.extendStroke({ x: 3, y: 3, z: 3 });
    st.endStroke();
    expect(st.strokes[0].voxels.length).toBe(1);
  });

  it("empty strokes are dropped", () => {
    st.beginStroke(SCRIB_BG);
    st.endStroke();
    expect(st.strokes.length).toBe(0);
    expect(st.hasScribbles()).toBe(false);
  });

  it("undo removes exactly the latest interaction", () => {
    st.addClick({ x: 0, y: 0, z: 0 }, true);
    st.beginStroke(SCRIB_FG);
    st.extendStroke({ x: 1, y: 0, z: 0 });
    st.endStroke();
    st.addClick({ x: 2, y: 0, z: 0 }, false);

    expect(st.undo()).toBe(true); // negative click
    expect(st.clicks.negative.length).toBe(0);
    expect(st.strokes.length).toBe(1);
    expect(st.undo()).toBe(true); // stroke
    expect(st.strokes.length).toBe(0);
    expect(st.clicks.positive.length).toBe(1);
    expect(st.undo()).toBe(true); // positive click
    expect(st.undo()).toBe(false); // nothing left
  });
});

describe("overlay", () => {
  it("dims must match the loaded image", () => {
    const st = new ViewerState();
    st.setVolume(volume([4, 4, 4]));
    expect(() => st.setOverlay(new Uint8Array(27), [3, 3, 3])).toThrow(/do not match/);
    expect(() => st.setOverlay(new Uint8Array(10), [4, 4, 4])).toThrow(/length/);
    st.setOverlay(new Uint8Array(64), [4, 4, 4]);
    expect(st.overlay).not.toBeNull();
  });

  it("overlaySlice picks the current plane", () => {
    const st = new ViewerState();
    st.setVolume(volume([3, 3, 3]));
    const mask = new Uint8Array(27);
    mask[flatIndex([3, 3, 3], 1, 2, 1)] = 1;
    st.setOverlay(mask, [3, 3, 3]);
    st.setAxis("axial");
    st.setSlice(1);
    const ov = st.overlaySlice()!;
    expect(ov[1 + 3 * 2]).toBe(1);
    expect(Array.from(ov).reduce((a, b) => a + b, 0)).toBe(1);
    st.setSlice(0);
    expect(Array.from(st.overlaySlice()!).every((v) => v === 0)).toBe(true);
  });

  it("scribbleSlice shows only voxels on the current slice", () => {
    const st = new ViewerState();
    st.setVolume(volume([3, 3, 3]));
    st.beginStroke(SCRIB_FG);
    st.extendStroke({ x: 0, y: 0, z: 1 });
    st.extendStroke({ x: 1, y: 1, z: 2 });
    st.endStroke();
    st.setSlice(1);
    const s1 = st.scribbleSlice();
    expect(s1[0]).toBe(2);
    expect(Array.from(s1).reduce((a, b) => a + b, 0)).toBe(2);
    st.setSlice(2);
    const s2 = st.scribbleSlice();
    expect(s2[1 + 3 * 1]).toBe(2);
  });
});
