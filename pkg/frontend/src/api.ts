/** Typed client for the restoration service JSON API. */

import type { SessionView, Stroke, StreamEvent } from "./schema.js";
import { serializeStrokes } from "./schema.js";
import { streamEvents, type StreamOptions } from "./sse.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export interface CreateSessionOptions {
  seed?: number;
  config?: Record<string, unknown>;
  sessionId?: string;
}

export interface MetricReport {
  image_id: string;
  dssim: number;
  lmse: number;
  mse: number;
  window_k: number;
}

/** View returned by the strokes endpoint, plus what the strokes changed. */
export type StrokesResult = SessionView & {
  applied: { guidance_pixels: number; correction_pixels: number };
};

async function raiseForStatus(response: Response): Promise<void> {
  if (response.ok) return;
  let detail = response.statusText;
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (body.detail !== undefined) {
      detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
    }
  } catch {
    // non-JSON error body, keep the status text
  }
  throw new ApiError(response.status, detail);
}

export class ApiClient {
  readonly base: string;
  private readonly fetchImpl: typeof fetch;

  constructor(baseUrl: string, fetchImpl?: typeof fetch) {
    this.base = baseUrl.replace(/\/+$/, "") + "/api/v1";
    this.fetchImpl = fetchImpl ?? fetch.bind(globalThis);
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const response = await this.fetchImpl(this.base + path, init);
    await raiseForStatus(response);
    return response;
  }

  private async requestJson<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.request(path, init);
    return (await response.json()) as T;
  }

  private post(path: string, body: unknown): Promise<Response> {
    return this.request(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: typeof body === "string" ? body : JSON.stringify(body),
    });
  }

  health(): Promise<{ status: string }> {
    return this.requestJson("/health");
  }

  /** `imageB64`/`maskB64` are base64-encoded PNG bytes. */
  async createSession(imageB64: string, maskB64: string, options: CreateSessionOptions = {}): Promise<SessionView> {
    const response = await this.post("/sessions", {
      image: imageB64,
      mask: maskB64,
      seed: options.seed ?? 0,
      config: options.config ?? null,
      session_id: options.sessionId ?? null,
    });
    return (await response.json()) as SessionView;
  }

  async listSessions(): Promise<SessionView[]> {
    const body = await this.requestJson<{ sessions: SessionView[] }>("/sessions");
    return body.sessions;
  }

  getSession(id: string): Promise<SessionView> {
    return this.requestJson(`/sessions/${id}`);
  }

  /** Submits strokes in the canonical wire form. 409 while a phase runs. */
  async submitStrokes(id: string, strokes: Stroke[]): Promise<StrokesResult> {
    const response = await this.request(`/sessions/${id}/strokes`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: serializeStrokes(strokes),
    });
    return (await response.json()) as StrokesResult;
  }

  async startPhase(id: string, iterations?: number): Promise<void> {
    await this.post(`/sessions/${id}/phase`, { iterations: iterations ?? null });
  }

  async stop(id: string): Promise<void> {
    await this.post(`/sessions/${id}/stop`, {});
  }

  async resultPng(id: string): Promise<Uint8Array> {
    const response = await this.request(`/sessions/${id}/result`);
    return new Uint8Array(await response.arrayBuffer());
  }

  async maskPng(id: string): Promise<Uint8Array> {
    const response = await this.request(`/sessions/${id}/mask`);
    return new Uint8Array(await response.arrayBuffer());
  }

  async metrics(id: string, truthB64: string, windowK = 1): Promise<MetricReport> {
    const response = await this.post(`/sessions/${id}/metrics`, { truth: truthB64, window_k: windowK });
    return (await response.json()) as MetricReport;
  }

  resultUrl(id: string): string {
    return `${this.base}/sessions/${id}/result`;
  }

  /** Live event feed; `after`/`Last-Event-ID` resume is handled inside. */
  async *stream(id: string, options: StreamOptions = {}): AsyncGenerator<StreamEvent> {
    const url = `${this.base}/sessions/${id}/stream`;
    for await (const raw of streamEvents(url, { ...options, fetchImpl: this.fetchImpl })) {
      const payload = JSON.parse(raw.data) as Omit<StreamEvent, "seq" | "type">;
      yield { ...payload, seq: Number(raw.id), type: raw.event } as StreamEvent;
    }
  }
}
