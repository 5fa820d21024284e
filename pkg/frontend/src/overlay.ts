/** Known/damaged grid handling and the red damage overlay. */

import { coveredIndices } from "./brush.js";
import type { Stroke } from "./schema.js";

export const OVERLAY_RED: [number, number, number] = [255, 0, 0];
export const OVERLAY_ALPHA = 153; // ~60%, damage must stay visible over any image

/** Grid from mask-image RGBA bytes: red channel >= 128 means known (1). */
export function gridFromMaskRGBA(rgba: Uint8Array | Uint8ClampedArray, width: number, height: number): Uint8Array {
  if (rgba.length !== width * height * 4) {
    throw new RangeError(`rgba length ${rgba.length} does not match ${width}x${height}`);
  }
  const grid = new Uint8Array(width * height);
  for (let i = 0; i < grid.length; i++) {
    grid[i] = rgba[i * 4]! >= 128 ? 1 : 0;
  }
  return grid;
}

/** RGBA overlay: red at OVERLAY_ALPHA exactly where the grid says damaged. */
export function overlayRGBA(grid: Uint8Array, width: number, height: number): Uint8ClampedArray<ArrayBuffer> {
  if (grid.length !== width * height) {
    throw new RangeError(`grid length ${grid.length} does not match ${width}x${height}`);
  }
  const rgba = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < grid.length; i++) {
    if (grid[i] === 0) {
      rgba[i * 4] = OVERLAY_RED[0];
      rgba[i * 4 + 1] = OVERLAY_RED[1];
      rgba[i * 4 + 2] = OVERLAY_RED[2];
      rgba[i * 4 + 3] = OVERLAY_ALPHA;
    }
  }
  return rgba;
}

/**
 * Optimistic local mask update matching the server rule: guidance marks
 * covered damaged pixels known, correction marks every covered pixel
 * damaged. Returns a new grid; the input is not touched.
 */
export function applyStrokesToGrid(grid: Uint8Array, strokes: Stroke[], width: number, height: number): Uint8Array {
  const next = grid.slice();
  for (const stroke of strokes) {
    const value = stroke.mode === "guidance" ? 1 : 0;
    for (const idx of coveredIndices(stroke, width, height)) {
      next[idx] = value;
    }
  }
  return next;
}

/** Indices where two grids disagree; empty means pixel-exact agreement. */
export function gridDiff(a: Uint8Array, b: Uint8Array): number[] {
  if (a.length !== b.length) {
    throw new RangeError(`grid sizes differ: ${a.length} vs ${b.length}`);
  }
  const diff: number[] = [];
  for (let i = 0; i < a.length; i++) {
    if (a[i] !== b[i]) diff.push(i);
  }
  return diff;
}

export function knownFraction(grid: Uint8Array): number {
  let known = 0;
  for (let i = 0; i < grid.length; i++) known += grid[i]!;
  return known / grid.length;
}
