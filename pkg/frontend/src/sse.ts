import type { StreamEvent } from "./types.js";

// fetch-based SSE client: works in browsers and in node (no EventSource
// there), and lets us treat keepalive comments as liveness.

export type StreamHandle = { close(): void };

export type StreamCallbacks = {
  onEvent(event: StreamEvent): void;
  /** any traffic at all, including keepalive comments */
  onActivity?(): void;
  onStatus?(connected: boolean): void;
};

export class SseParser {
  private buffer = "";
  private dataLines: string[] = [];

  /** Feed a chunk; returns decoded events plus whether any bytes arrived. */
  feed(chunk: string): StreamEvent[] {
    this.buffer += chunk;
    const events: StreamEvent[] = [];
    let nl: number;
    while ((nl = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, nl).replace(/\r$/, "");
      this.buffer = this.buffer.slice(nl + 1);
      if (line === "") {
        if (this.dataLines.length > 0) {
          try {
            events.push(JSON.parse(this.dataLines.join("\n")) as StreamEvent);
          } catch {
            // skip undecodable frames rather than killing the stream
          }
        }
        this.dataLines = [];
      } else if (line.startsWith("data:")) {
        this.dataLines.push(line.slice(5).trimStart());
      }
      // "event:" lines are redundant with payload.kind; comments are liveness only
    }
    return events;
  }
}

export function openStream(base: string, callbacks: StreamCallbacks): StreamHandle {
  let closed = false;
  let controller: AbortController | null = null;
  let backoffMs = 500;

  async function connect(): Promise<void> {
    while (!closed) {
      controller = new AbortController();
      try {
        const resp = await fetch(`${base}/api/v1/stream`, {
          signal: controller.signal,
          headers: { accept: "text/event-stream" },
        });
        if (!resp.ok || resp.body === null) throw new Error(`stream http ${resp.status}`);
        callbacks.onStatus?.(true);
        backoffMs = 500;
        const reader = resp.body.getReader();
        const decoder = new TextDecoder();
        const parser = new SseParser();
        for (;;) {
          const { done, value } = await reader.read();
          if (done) break;
          callbacks.onActivity?.();
          for (const event of parser.feed(decoder.decode(value, { stream: true }))) {
            callbacks.onEvent(event);
          }
        }
      } catch {
        // fall through to reconnect
      }
      callbacks.onStatus?.(false);
      if (closed) return;
      await new Promise((r) => setTimeout(r, backoffMs));
      backoffMs = Math.min(backoffMs * 2, 10_000);
    }
  }

  void connect();
  return {
    close() {
      closed = true;
      controller?.abort();
    },
  };
}
