import type { DashboardState } from "./store.js";
import type { MachineRow, Verdict, WorkerRow } from "./types.js";

// Rendering is pure string templating so the view layer is unit-testable
// without a browser; main.ts owns the DOM wiring.

function esc(value: unknown): string {
  return String(value ?? "").replace(/[&<>"']/g, (c) =>
    ({ "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;", "'": "&#39;" })[c]!,
  );
}

const LEVEL_BADGE: Record<string, string> = {
  L0: "ok", L1: "ok", L2: "warn", L3: "warn", L4: "crit",
};

export function renderWorkerCard(worker: WorkerRow): string {
  const a = worker.assessment;
  const level = a?.calibrating ? "calibrating" : (a?.level ?? "—");
  const badge = a && !a.calibrating ? (LEVEL_BADGE[a.level] ?? "ok") : "muted";
  const t = worker.latest_telemetry;
  const vitals = t
    ? `HR ${t.vitals.hr} · SpO₂ ${t.vitals.spo2}% · CO₂ ${t.env.co2} ppm · batt ${t.battery}%`
    : "no telemetry yet";
  return `<article class="card worker" data-worker="${esc(worker.worker_id)}">
    <header><h3>${esc(worker.worker_id)}</h3><span class="badge ${badge}">${esc(level)}</span></header>
    <p>${esc(vitals)}</p>
    <p class="muted">assigned: ${esc(worker.assigned_machine ?? "—")}${a ? ` · score ${a.score.toFixed(3)}` : ""}</p>
  </article>`;
}

export function renderMachineCard(machine: MachineRow): string {
  const mode = machine.state?.mode ?? "UNKNOWN";
  const badge = mode === "RUNNING" ? "ok" : mode === "UNKNOWN" ? "muted" : "crit";
  const cause = machine.state?.last_cause;
  const canEstop = mode === "RUNNING";
  const canReset = mode === "SAFE_STOP" || mode === "EMERGENCY_STOP";
  return `<article class="card machine" data-machine="${esc(machine.machine_id)}">
    <header><h3>${esc(machine.machine_id)}</h3><span class="badge ${badge}" data-role="mode">${esc(mode)}</span></header>
    <p class="muted">risk class ${esc(machine.risk_class)} (${esc(machine.params.s)} ${esc(machine.params.f)} ${esc(machine.params.p)})${cause ? ` · cause: ${esc(cause)}` : ""}</p>
    <div class="actions">
      <button data-action="estop" ${canEstop ? "" : "disabled"}>E-STOP</button>
      <button data-action="reset" ${canReset ? "" : "disabled"}>RESET</button>
    </div>
    <div class="confirm hidden" data-role="confirm">
      <input type="text" placeholder="reason (required)" data-role="reason" />
      <button data-action="confirm" disabled>Confirm</button>
      <button data-action="cancel">Cancel</button>
    </div>
  </article>`;
}

export function renderFeed(state: DashboardState): string {
  return state.feed
    .slice(-30)
    .reverse()
    .map((e) => `<li class="${esc(e.severity.toLowerCase())}">[${esc(e.ts)}] ${esc(e.text)}</li>`)
    .join("");
}

export function renderVerdict(verdict: Verdict): string {
  const cls = verdict.allowed ? "ok" : "crit";
  const word = verdict.allowed ? "ALLOWED" : "DENIED";
  const reasons = verdict.reasons.length ? ` — ${verdict.reasons.join("; ")}` : "";
  return `<span class="badge ${cls}">${word}</span>
    stress ${esc(verdict.stress_level)} vs machine class ${esc(verdict.machine_risk)}
    (max allowed: ${esc(verdict.max_allowed)})${esc(reasons)}`;
}

export function renderStaleBanner(stale: boolean): string {
  return stale ? `<div class="banner crit">stream stale — data may be out of date</div>` : "";
}

/** Two-step stop: the confirm button stays disabled until a reason is given. */
export function canConfirmStop(reason: string): boolean {
  return reason.trim().length > 0;
}
