import { describe, expect, it } from "vitest";

import { SseParser } from "../src/sse.js";

const frame = (kind: string, seq: number) =>
  `event: ${kind}\ndata: {"event_seq": ${seq}, "ts": 1, "kind": "${kind}", "payload": {}}\n\n`;

describe("sse parser", () => {
  it("decodes complete frames", () => {
    const parser = new SseParser();
    const events = parser.feed(frame("ALERT", 1) + frame("STATE_CHANGE", 2));
    expect(events.map((e) => e.kind)).toEqual(["ALERT", "STATE_CHANGE"]);
  });

  it("handles frames split across arbitrary chunk boundaries", () => {
    const raw = frame("ASSESSMENT", 1) + ": keepalive\n\n" + frame("ALERT", 2);
    for (const size of [1, 3, 7, raw.length]) {
      const parser = new SseParser();
      const events = [];
      for (let i = 0; i < raw.length; i += size) {
        events.push(...parser.feed(raw.slice(i, i + size)));
      }
      expect(events.map((e) => e.event_seq)).toEqual([1, 2]);
    }
  });

  it("ignores keepalive comments and junk data lines", () => {
    const parser = new SseParser();
    expect(parser.feed(": keepalive\n\n")).toEqual([]);
    expect(parser.feed("data: {broken\n\n")).toEqual([]);
    expect(parser.feed(frame("ALERT", 9))).toHaveLength(1);
  });
});
