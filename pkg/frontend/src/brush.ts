/** Disc brush geometry, mirroring the server's coverage rule exactly. */

import type { Stroke, StrokeMode } from "./schema.js";

/** Offsets with dx*dx + dy*dy < r*r over the open square (-r, r). */
export function discOffsets(radius: number): Array<[number, number]> {
  if (!Number.isInteger(radius) || radius < 1) {
    throw new RangeError(`radius must be a positive integer, got ${radius}`);
  }
  const out: Array<[number, number]> = [];
  for (let dy = -radius + 1; dy < radius; dy++) {
    for (let dx = -radius + 1; dx < radius; dx++) {
      if (dx * dx + dy * dy < radius * radius) out.push([dx, dy]);
    }
  }
  return out;
}

/** All in-bounds pixels a stroke covers, as y * width + x indices. */
export function coveredIndices(stroke: Stroke, width: number, height: number): Set<number> {
  const covered = new Set<number>();
  const offsets = discOffsets(stroke.radius);
  for (const [px, py] of stroke.points) {
    for (const [dx, dy] of offsets) {
      const x = px + dx;
      const y = py + dy;
      if (x >= 0 && x < width && y >= 0 && y < height) covered.add(y * width + x);
    }
  }
  return covered;
}

/** Accumulates one stroke from pointer-down to pointer-up. */
export class StrokeBuffer {
  private points: Array<[number, number]> = [];
  private active = false;

  constructor(
    readonly width: number,
    readonly height: number,
  ) {}

  get isActive(): boolean {
    return this.active;
  }

  get size(): number {
    return this.points.length;
  }

  begin(x: number, y: number): void {
    this.active = true;
    this.points = [];
    this.extend(x, y);
  }

  /** Adds the integer pixel under the pointer; duplicates of the last point are dropped. */
  extend(x: number, y: number): void {
    if (!this.active) return;
    const px = Math.floor(x);
    const py = Math.floor(y);
    if (px < 0 || px >= this.width || py < 0 || py >= this.height) return;
    const last = this.points[this.points.length - 1];
    if (last && last[0] === px && last[1] === py) return;
    this.points.push([px, py]);
  }

  /** Exactly one stroke per pointer-up; null when no in-bounds point was hit. */
  finish(mode: StrokeMode, color: [number, number, number], radius: number): Stroke | null {
    if (!this.active) return null;
    this.active = false;
    const points = this.points;
    this.points = [];
    if (points.length === 0) return null;
    return { mode, color, radius, points };
  }

  cancel(): void {
    this.active = false;
    this.points = [];
  }
}
