/** Server-Sent Events over fetch, with sequence-number resume. */

export interface RawEvent {
  id: string;
  event: string;
  data: string;
}

/** Incremental SSE frame parser; feed decoded text, collect events. */
export class SSEParser {
  private buffer = "";

  push(chunk: string): RawEvent[] {
    this.buffer += chunk;
    const events: RawEvent[] = [];
    // frames are separated by a blank line; keep the unterminated tail
    for (;;) {
      const cut = this.buffer.indexOf("\n\n");
      if (cut < 0) break;
      const frame = this.buffer.slice(0, cut);
      this.buffer = this.buffer.slice(cut + 2);
      const event: RawEvent = { id: "", event: "message", data: "" };
      const dataLines: string[] = [];
      for (const line of frame.split("\n")) {
        if (line.startsWith("id:")) event.id = line.slice(3).trim();
        else if (line.startsWith("event:")) event.event = line.slice(6).trim();
        else if (line.startsWith("data:")) dataLines.push(line.slice(5).trimStart());
      }
      event.data = dataLines.join("\n");
      if (event.data || event.id) events.push(event);
    }
    return events;
  }
}

export interface StreamOptions {
  /** Resume after this sequence number; 0 replays the whole log. */
  after?: number;
  /** Keep the connection open while the session is idle. */
  follow?: boolean;
  signal?: AbortSignal;
  fetchImpl?: typeof fetch;
  /** Reconnect attempts after a dropped connection (resumes via Last-Event-ID). */
  maxReconnects?: number;
  reconnectDelayMs?: number;
}

const sleep = (ms: number) => new Promise((r) => setTimeout(r, ms));

/**
 * Yields parsed events from a stream URL. On disconnect it reconnects
 * with `Last-Event-ID` set to the last seen sequence number, so no
 * events are lost or repeated across drops.
 */
export async function* streamEvents(url: string, options: StreamOptions = {}): AsyncGenerator<RawEvent> {
  const doFetch = options.fetchImpl ?? fetch;
  let lastId = options.after ?? 0;
  let reconnectsLeft = options.maxReconnects ?? 5;

  for (;;) {
    const target = new URL(url);
    if (options.follow) target.searchParams.set("follow", "true");
    const headers: Record<string, string> = { Accept: "text/event-stream" };
    if (lastId > 0) headers["Last-Event-ID"] = String(lastId);

    let response: Response;
    try {
      response = await doFetch(target.toString(), { headers, signal: options.signal });
    } catch (err) {
      if (options.signal?.aborted || reconnectsLeft-- <= 0) throw err;
      await sleep(options.reconnectDelayMs ?? 250);
      continue;
    }
    if (!response.ok || !response.body) {
      throw new Error(`stream failed: HTTP ${response.status}`);
    }

    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    const parser = new SSEParser();
    let dropped = false;
    try {
      for (;;) {
        const { done, value } = await reader.read();
        if (done) break;
        for (const event of parser.push(decoder.decode(value, { stream: true }))) {
          const seq = Number(event.id);
          if (Number.isFinite(seq) && seq > 0) lastId = seq;
          yield event;
        }
      }
    } catch (err) {
      if (options.signal?.aborted) return;
      if (reconnectsLeft-- <= 0) throw err;
      dropped = true;
    } finally {
      reader.releaseLock();
    }
    if (!dropped) return; // server closed the stream cleanly
    await sleep(options.reconnectDelayMs ?? 250);
  }
}
