/** Single state store; every mutation funnels through one place. */

import { ApiClient, ApiError } from "./api.js";
import { StrokeBuffer } from "./brush.js";
import { applyStrokesToGrid } from "./overlay.js";
import type { SessionView, Stroke, StrokeMode, StreamEvent } from "./schema.js";

export interface ToolState {
  mode: StrokeMode;
  color: [number, number, number];
  radius: number;
}

export interface AppState {
  view: SessionView | null;
  /** Local mask grid, optimistically updated, reconciled against the server. */
  grid: Uint8Array | null;
  tool: ToolState;
  /** Strokes painted since the last successful submit. */
  queue: Stroke[];
  optimizing: boolean;
  lastSeq: number;
  latestLoss: number | null;
  /** base64 PNG of the newest preview/snapshot frame. */
  previewB64: string | null;
  toast: string | null;
}

type Listener = (state: AppState) => void;

export class SessionStore {
  private state: AppState = {
    view: null,
    grid: null,
    tool: { mode: "guidance", color: [1, 0, 0], radius: 3 },
    queue: [],
    optimizing: false,
    lastSeq: 0,
    latestLoss: null,
    previewB64: null,
    toast: null,
  };
  private buffer: StrokeBuffer | null = null;
  private listeners = new Set<Listener>();

  constructor(readonly api: ApiClient) {}

  getState(): AppState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private patch(partial: Partial<AppState>): void {
    this.state = { ...this.state, ...partial };
    for (const listener of this.listeners) listener(this.state);
  }

  /** Adopt a session and its authoritative mask grid. */
  attach(view: SessionView, serverGrid: Uint8Array): void {
    this.buffer = new StrokeBuffer(view.width, view.height);
    this.patch({
      view,
      grid: serverGrid,
      queue: [],
      optimizing: view.status === "optimizing",
      lastSeq: view.seq,
      latestLoss: view.latest_loss,
      toast: null,
    });
  }

  setTool(tool: Partial<ToolState>): void {
    this.patch({ tool: { ...this.state.tool, ...tool } });
  }

  /** Painting is disabled while a phase runs, mirroring the service contract. */
  pointerDown(x: number, y: number): void {
    if (!this.buffer || this.state.optimizing) return;
    this.buffer.begin(x, y);
  }

  pointerMove(x: number, y: number): void {
    this.buffer?.extend(x, y);
  }

  /** Exactly one queued stroke per pointer-up; overlay updates optimistically. */
  pointerUp(): void {
    if (!this.buffer || !this.state.view || !this.state.grid) return;
    const { mode, color, radius } = this.state.tool;
    const stroke = this.buffer.finish(mode, color, radius);
    if (!stroke) return;
    const grid = applyStrokesToGrid(this.state.grid, [stroke], this.state.view.width, this.state.view.height);
    this.patch({ queue: [...this.state.queue, stroke], grid });
  }

  /** Sends the queue; on conflict the local buffer is kept for retry. */
  async submitQueue(): Promise<boolean> {
    const { view, queue } = this.state;
    if (!view || queue.length === 0) return true;
    let result;
    try {
      result = await this.api.submitStrokes(view.id, queue);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.patch({ toast: "a phase is running; strokes kept for retry" });
        return false;
      }
      throw err;
    }
    const { applied: _applied, ...serverView } = result;
    this.patch({ view: serverView, queue: [], latestLoss: serverView.latest_loss });
    return true;
  }

  /** Pulls the authoritative view; callers pass the decoded mask grid. */
  async refresh(serverGrid?: Uint8Array): Promise<SessionView> {
    const view = await this.api.getSession(this.state.view?.id ?? "");
    this.patch({
      view,
      optimizing: view.status === "optimizing",
      latestLoss: view.latest_loss,
      ...(serverGrid ? { grid: serverGrid } : {}),
    });
    return view;
  }

  async startPhase(iterations?: number): Promise<void> {
    const view = this.state.view;
    if (!view) return;
    try {
      await this.api.startPhase(view.id, iterations);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.patch({ toast: "a phase is already running" });
        return;
      }
      throw err;
    }
    this.patch({ optimizing: true, toast: null });
  }

  async stop(): Promise<void> {
    const view = this.state.view;
    if (!view) return;
    await this.api.stop(view.id);
  }

  /** Folds one stream event into the state; returns the event for the UI. */
  handleEvent(event: StreamEvent): StreamEvent {
    const patch: Partial<AppState> = { lastSeq: event.seq };
    if (event.type === "progress") {
      patch.latestLoss = event.loss;
      patch.previewB64 = event.preview;
    } else if (event.type === "snapshot") {
      patch.latestLoss = event.loss;
      patch.previewB64 = event.image;
      patch.optimizing = false; // final event of a phase: paintable again
    } else if (event.type === "error") {
      patch.toast = event.message;
      patch.optimizing = false;
    }
    this.patch(patch);
    return event;
  }

  clearToast(): void {
    if (this.state.toast !== null) this.patch({ toast: null });
  }
}
