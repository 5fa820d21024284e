/** Wire types for the restoration service (`/api/v1`). */

export type StrokeMode = "guidance" | "correction";

export interface Stroke {
  mode: StrokeMode;
  color: [number, number, number];
  radius: number;
  points: Array<[number, number]>;
}

export interface SessionView {
  id: string;
  phase: number;
  status: string;
  known_fraction: number;
  latest_loss: number | null;
  seq: number;
  width: number;
  height: number;
  iterations_per_phase: number;
}

export interface ProgressEvent {
  seq: number;
  type: "progress";
  phase: number;
  iteration: number;
  loss: number;
  preview: string;
}

export interface SnapshotEvent {
  seq: number;
  type: "snapshot";
  phase: number;
  iteration: number;
  loss: number | null;
  cancelled: boolean;
  image: string;
}

export interface ErrorEvent {
  seq: number;
  type: "error";
  phase: number;
  message: string;
}

export type StreamEvent = ProgressEvent | SnapshotEvent | ErrorEvent;

export class SchemaError extends Error {}

function checkPoint(value: unknown, path: string): [number, number] {
  if (!Array.isArray(value) || value.length !== 2) {
    throw new SchemaError(`${path}: expected [x, y]`);
  }
  const [x, y] = value;
  if (!Number.isInteger(x) || !Number.isInteger(y)) {
    throw new SchemaError(`${path}: coordinates must be integers`);
  }
  return [x, y];
}

/** Validate one stroke object against the service schema. */
export function parseStroke(value: unknown, path = "stroke"): Stroke {
  if (typeof value !== "object" || value === null || Array.isArray(value)) {
    throw new SchemaError(`${path}: expected an object`);
  }
  const obj = value as Record<string, unknown>;
  const mode = obj.mode;
  if (mode !== "guidance" && mode !== "correction") {
    throw new SchemaError(`${path}.mode: expected "guidance" or "correction"`);
  }
  const rawColor = obj.color ?? [0, 0, 0];
  if (!Array.isArray(rawColor) || rawColor.length !== 3 || !rawColor.every((c) => typeof c === "number" && Number.isFinite(c))) {
    throw new SchemaError(`${path}.color: expected [r, g, b]`);
  }
  const radius = obj.radius;
  if (!Number.isInteger(radius) || (radius as number) < 1 || (radius as number) > 256) {
    throw new SchemaError(`${path}.radius: expected an integer in [1, 256]`);
  }
  const rawPoints = obj.points;
  if (!Array.isArray(rawPoints) || rawPoints.length < 1) {
    throw new SchemaError(`${path}.points: expected a non-empty list`);
  }
  return {
    mode,
    color: [rawColor[0], rawColor[1], rawColor[2]] as [number, number, number],
    radius: radius as number,
    points: rawPoints.map((p, i) => checkPoint(p, `${path}.points[${i}]`)),
  };
}

/** Canonical JSON for a strokes request: fixed key order, no whitespace. */
export function serializeStrokes(strokes: Stroke[]): string {
  const body = strokes.map((s) => ({
    mode: s.mode,
    color: s.color,
    radius: s.radius,
    points: s.points,
  }));
  return JSON.stringify({ strokes: body });
}

export function parseStrokesRequest(json: string): Stroke[] {
  let value: unknown;
  try {
    value = JSON.parse(json);
  } catch {
    throw new SchemaError("strokes request: invalid JSON");
  }
  const obj = value as Record<string, unknown>;
  if (typeof obj !== "object" || obj === null || !Array.isArray(obj.strokes)) {
    throw new SchemaError("strokes request: expected {strokes: [...]}");
  }
  return obj.strokes.map((s, i) => parseStroke(s, `strokes[${i}]`));
}
