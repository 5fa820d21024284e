/**
 * Full headless session against a live local service: create a session,
 * paint through the store, run a phase on the event stream, stop a long
 * phase, download the result. Exercises the same code paths the browser
 * uses, minus canvas rendering.
 */

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { coveredIndices } from "../src/brush.js";
import { applyStrokesToGrid, gridDiff, gridFromMaskRGBA, knownFraction } from "../src/overlay.js";
import type { Stroke } from "../src/schema.js";
import { parseStrokesRequest, serializeStrokes } from "../src/schema.js";
import { SessionStore } from "../src/store.js";
import { decodePng, encodePng, startService, toB64, type LiveService, type RGB } from "./helpers.js";

const SIZE = 12; // multiple of the depth-2 downsample factor: no padding in play
const TINY_CONFIG = { depth: 2, channels: [3, 4], noise_channels: 2, iterations_per_phase: 10 };

function truthColor(x: number, y: number): RGB {
  return [x / (SIZE - 1), y / (SIZE - 1), 0.5];
}

/** Known everywhere except a 4x4 hole; corrupted image is black in the hole. */
function buildInputs() {
  const grid = new Uint8Array(SIZE * SIZE).fill(1);
  for (let y = 4; y < 8; y++) for (let x = 4; x < 8; x++) grid[y * SIZE + x] = 0;
  const corrupted = encodePng(SIZE, SIZE, (x, y) => (grid[y * SIZE + x] ? truthColor(x, y) : [0, 0, 0]));
  const mask = encodePng(SIZE, SIZE, (x, y) => (grid[y * SIZE + x] ? [1, 1, 1] : [0, 0, 0]));
  const truth = encodePng(SIZE, SIZE, truthColor);
  return { grid, corrupted, mask, truth };
}

async function serverGrid(api: ApiClient, id: string): Promise<Uint8Array> {
  const png = await api.maskPng(id);
  const { width, height, rgba } = decodePng(png);
  return gridFromMaskRGBA(rgba, width, height);
}

let service: LiveService;
let api: ApiClient;

beforeAll(async () => {
  service = await startService();
  api = new ApiClient(service.baseUrl);
}, 60_000);

afterAll(async () => {
  await service?.stop();
});

describe("live service session", () => {
  it("health answers", async () => {
    expect((await api.health()).status).toBe("ok");
  });

  it("create -> paint -> run -> stop -> download", async () => {
    const { grid, corrupted, mask } = buildInputs();
    const store = new SessionStore(api);

    // create: the server view must agree with the local mask
    const view = await api.createSession(toB64(corrupted), toB64(mask), {
      seed: 0,
      config: TINY_CONFIG,
      sessionId: "ui-e2e",
    });
    expect([view.width, view.height]).toEqual([SIZE, SIZE]);
    expect(view.status).toBe("idle");
    expect(view.known_fraction).toBeCloseTo(knownFraction(grid), 9);

    // overlay fidelity: server mask equals the uploaded grid pixel-exactly
    const synced = await serverGrid(api, view.id);
    expect(gridDiff(synced, grid)).toEqual([]);
    store.attach(view, synced);

    // paint: one drag at radius 2 over the hole's left edge; pointer-up
    // queues exactly one stroke and the overlay updates optimistically
    store.setTool({ mode: "guidance", color: [0.9, 0.2, 0.1], radius: 2 });
    store.pointerDown(4, 5);
    store.pointerMove(4.6, 5.4); // same pixel, deduped
    store.pointerMove(5, 6);
    store.pointerUp();
    expect(store.getState().queue).toHaveLength(1);
    const stroke = store.getState().queue[0]!;
    expect(stroke.points).toEqual([[4, 5], [5, 6]]);

    // wire round-trip is bit-exact, and the predicted coverage matches
    // what the server reports back for the very same bytes
    const wire = serializeStrokes([stroke]);
    expect(serializeStrokes(parseStrokesRequest(wire))).toBe(wire);
    const covered = coveredIndices(stroke, SIZE, SIZE);
    let newlyKnown = 0;
    for (const idx of covered) if (grid[idx] === 0) newlyKnown++;
    const predicted = applyStrokesToGrid(grid, [stroke], SIZE, SIZE);

    expect(await store.submitQueue()).toBe(true);
    expect(store.getState().queue).toHaveLength(0);
    expect(store.getState().view!.known_fraction).toBeCloseTo(knownFraction(predicted), 9);

    // reconciliation: server mask equals the optimistic grid pixel-exactly
    const reconciled = await serverGrid(api, view.id);
    expect(gridDiff(reconciled, predicted)).toEqual([]);
    expect(gridDiff(reconciled, store.getState().grid!)).toEqual([]);
    expect(newlyKnown).toBeGreaterThan(0);

    // run: a 10-iteration phase emits progress at the final iteration
    // (cadence 25 > 10) and then one snapshot; sequence ids are monotone
    await store.startPhase(10);
    expect(store.getState().optimizing).toBe(true);
    const types: string[] = [];
    let lastSeq = 0;
    for await (const event of api.stream(view.id, { after: 0 })) {
      expect(event.seq).toBeGreaterThan(lastSeq);
      lastSeq = event.seq;
      types.push(event.type);
      store.handleEvent(event);
      if (event.type === "snapshot") break;
    }
    expect(types).toEqual(["progress", "snapshot"]);
    expect(store.getState().optimizing).toBe(false); // paintable again
    expect(store.getState().latestLoss).not.toBeNull();

    // resume: replaying after a seen sequence number yields only the tail
    const tail: number[] = [];
    for await (const event of api.stream(view.id, { after: 1 })) tail.push(event.seq);
    expect(tail[0]).toBe(2);
    expect(tail[tail.length - 1]).toBe(lastSeq);

    // painting while a long phase runs is rejected; the buffer is kept
    await store.startPhase(50_000);
    store.pointerDown(9, 9); // ignored: painting disabled while optimizing
    store.pointerUp();
    expect(store.getState().queue).toHaveLength(0);
    await expect(
      api.submitStrokes(view.id, [{ mode: "correction", color: [0, 0, 0], radius: 1, points: [[1, 1]] }]),
    ).rejects.toThrowError(ApiError);
    store.attach(await api.getSession(view.id), reconciled);
    store.pointerDown(9, 9);
    store.pointerUp();
    expect(store.getState().queue).toHaveLength(0); // still optimizing: no stroke

    // stop: the phase ends early with a cancelled snapshot
    await store.stop();
    let cancelled = false;
    for await (const event of api.stream(view.id, { after: lastSeq })) {
      if (event.type === "snapshot") {
        cancelled = event.cancelled;
        break;
      }
    }
    expect(cancelled).toBe(true);
    // the busy flag clears just after the snapshot event; poll briefly
    let after = await api.getSession(view.id);
    for (let i = 0; i < 40 && after.status === "optimizing"; i++) {
      await new Promise((r) => setTimeout(r, 50));
      after = await api.getSession(view.id);
    }
    expect(after.status).not.toBe("optimizing");

    // download: the result decodes to the original size and is stable
    const result1 = await api.resultPng(view.id);
    const result2 = await api.resultPng(view.id);
    const decoded = decodePng(result1);
    expect([decoded.width, decoded.height]).toEqual([SIZE, SIZE]);
    expect(Buffer.from(result1).equals(Buffer.from(result2))).toBe(true);

    // known pixels pass through the composite verbatim
    const { rgba } = decoded;
    expect(rgba[(0 * SIZE + 0) * 4 + 2]).toBe(128); // blue channel of truthColor
  }, 90_000);

  it("reports metrics against uploaded ground truth", async () => {
    const { truth } = buildInputs();
    const report = await api.metrics("ui-e2e", toB64(truth), 2);
    expect(report.window_k).toBe(2);
    expect(report.dssim).toBeGreaterThanOrEqual(0);
    expect(report.dssim).toBeLessThanOrEqual(1);
    expect(report.lmse).toBeGreaterThanOrEqual(0);
  });

  it("store keeps strokes and toasts on a submit conflict", async () => {
    const { corrupted, mask, grid } = buildInputs();
    const store = new SessionStore(api);
    const view = await api.createSession(toB64(corrupted), toB64(mask), {
      seed: 1,
      config: TINY_CONFIG,
      sessionId: "ui-conflict",
    });
    store.attach(view, grid.slice());
    store.pointerDown(5, 5);
    store.pointerUp();
    expect(store.getState().queue).toHaveLength(1);

    await store.startPhase(50_000);
    expect(await store.submitQueue()).toBe(false); // conflict
    expect(store.getState().queue).toHaveLength(1); // buffer preserved
    expect(store.getState().toast).toMatch(/phase is running/);

    await store.stop();
    for await (const event of api.stream(view.id, { after: 0 })) {
      if (event.type === "snapshot") break;
    }
    let refreshed = await store.refresh();
    for (let i = 0; i < 40 && refreshed.status === "optimizing"; i++) {
      await new Promise((r) => setTimeout(r, 50));
      refreshed = await store.refresh();
    }
    expect(await store.submitQueue()).toBe(true); // retry succeeds
    expect(store.getState().queue).toHaveLength(0);
  }, 60_000);
});
