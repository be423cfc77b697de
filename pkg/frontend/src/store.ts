import type {
  AlertEntry,
  Assessment,
  MachineRow,
  MachineState,
  StreamEvent,
  Telemetry,
  WorkerRow,
} from "./types.js";

export const MAX_FEED_ENTRIES = 200;
export const STALE_AFTER_MS = 10_000;

export type FeedEntry = { ts: number; text: string; severity: string };

export type DashboardState = {
  workers: Map<string, WorkerRow>;
  machines: Map<string, MachineRow>;
  alerts: AlertEntry[];
  feed: FeedEntry[];
  connected: boolean;
  lastActivityMs: number;
};

export function initialState(): DashboardState {
  return {
    workers: new Map(),
    machines: new Map(),
    alerts: [],
    feed: [],
    connected: false,
    lastActivityMs: 0,
  };
}

export function loadSnapshot(state: DashboardState, workers: WorkerRow[], machines: MachineRow[]): void {
  for (const w of workers) state.workers.set(w.worker_id, w);
  for (const m of machines) state.machines.set(m.machine_id, m);
}

function pushCapped<T>(list: T[], entry: T): void {
  list.push(entry);
  if (list.length > MAX_FEED_ENTRIES) list.splice(0, list.length - MAX_FEED_ENTRIES);
}

/** Single reducer for everything arriving over the event stream. */
export function applyEvent(state: DashboardState, event: StreamEvent): void {
  const p = event.payload;
  switch (event.kind) {
    case "STATE_CHANGE": {
      const s = p as unknown as MachineState;
      const machine = state.machines.get(s.machine_id);
      if (machine) machine.state = s;
      pushCapped(state.feed, {
        ts: event.ts,
        text: `machine ${s.machine_id} -> ${s.mode}${s.last_cause ? ` (${s.last_cause})` : ""}`,
        severity: s.mode === "RUNNING" ? "INFO" : "CRITICAL",
      });
      break;
    }
    case "ASSESSMENT": {
      const workerId = p.worker_id as string;
      const worker = state.workers.get(workerId);
      if (worker) worker.assessment = p.assessment as Assessment;
      break;
    }
    case "TELEMETRY": {
      const doc = p as unknown as Telemetry;
      const worker = state.workers.get(doc.worker_id);
      if (worker) worker.latest_telemetry = doc;
      break;
    }
    case "ALERT": {
      const alert: AlertEntry = {
        ts: event.ts,
        worker_id: p.worker_id as string,
        code: p.code as string,
        severity: p.severity as string,
        detail: (p.detail as string) ?? "",
      };
      pushCapped(state.alerts, alert);
      pushCapped(state.feed, {
        ts: event.ts,
        text: `${alert.severity} ${alert.code} worker ${alert.worker_id}`,
        severity: alert.severity,
      });
      break;
    }
    case "NOTIFICATION": {
      pushCapped(state.feed, { ts: event.ts, text: p.text as string, severity: "INFO" });
      break;
    }
  }
}

export function markActivity(state: DashboardState, nowMs: number): void {
  state.lastActivityMs = nowMs;
}

export function isStale(state: DashboardState, nowMs: number): boolean {
  return !state.connected || nowMs - state.lastActivityMs > STALE_AFTER_MS;
}
