// End-to-end check against a live server with the embedded bus: the manual
// e-stop flow must reach the machine and come back over the event stream
// within one second, and the what-if verdict for L4 must be denied.

import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

const here = dirname(fileURLToPath(import.meta.url));

import { ApiClient } from "../src/api.js";
import { openStream, type StreamHandle } from "../src/sse.js";
import { applyEvent, initialState, loadSnapshot } from "../src/store.js";
import { renderMachineCard } from "../src/ui.js";
import type { StreamEvent } from "../src/types.js";

const PORT = 8931;
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess;
const api = new ApiClient(BASE);

async function waitForServer(): Promise<void> {
  for (let i = 0; i < 100; i++) {
    try {
      await api.getMachines();
      return;
    } catch {
      await new Promise((r) => setTimeout(r, 200));
    }
  }
  throw new Error("server did not come up");
}

beforeAll(async () => {
  const workdir = mkdtempSync(join(tmpdir(), "swsk-dash-"));
  server = spawn(
    "python3",
    ["-m", "swsk.cli", "serve", "--machine", "m1", "--machine-risk", "S2,F2,P2",
     "--worker", "w1", "--port", String(PORT), "--log", join(workdir, "events.jsonl")],
    { cwd: join(here, "..", ".."), stdio: ["ignore", "inherit", "inherit"] },
  );
  await waitForServer();
}, 30_000);

afterAll(() => {
  server?.kill("SIGINT");
});

describe("dashboard against a live server", () => {
  it("manual e-stop shows on the machine card via the stream within 1 s", async () => {
    const state = initialState();
    loadSnapshot(state, await api.getWorkers(), await api.getMachines());
    expect(state.machines.get("m1")!.state!.mode).toBe("RUNNING");

    let handle: StreamHandle | null = null;
    const sawStop = new Promise<StreamEvent>((resolve) => {
      handle = openStream(BASE, {
        onEvent(event) {
          applyEvent(state, event);
          if (event.kind === "STATE_CHANGE" && (event.payload.mode as string) === "EMERGENCY_STOP") {
            resolve(event);
          }
        },
      });
    });
    // give the stream a moment to attach before issuing the command
    await new Promise((r) => setTimeout(r, 300));

    const { cmd_id } = await api.estop("m1", "supervisor saw a coolant leak");
    expect(cmd_id).toMatch(/^[0-9a-f-]{36}$/);
    const issuedAt = Date.now();
    const event = await Promise.race([
      sawStop,
      new Promise<never>((_, reject) => setTimeout(() => reject(new Error("no STATE_CHANGE within 1 s")), 1000)),
    ]);
    expect(Date.now() - issuedAt).toBeLessThanOrEqual(1000);
    expect(event.payload.machine_id).toBe("m1");

    const card = renderMachineCard(state.machines.get("m1")!);
    expect(card).toContain("EMERGENCY_STOP");
    handle!.close();

    await api.reset("m1", "test cleanup");
  }, 20_000);

  it("what-if verdict for L4 is denied for every risk class", async () => {
    for (const risk of ["a", "b", "c", "d", "e"]) {
      const verdict = await api.suitability({ stress_level: "L4", risk_class: risk });
      expect(verdict.allowed).toBe(false);
      expect(verdict.max_allowed).toBe("NONE");
    }
  });

  it("unknown machine yields the error envelope", async () => {
    await expect(api.estop("ghost", "x")).rejects.toMatchObject({ status: 404, code: "not_found" });
  });
});
