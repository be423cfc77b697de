// Shapes mirror the server's JSON API; the dashboard never computes safety
// decisions itself, it only displays what the server reports.

export type StressLevelName = "L0" | "L1" | "L2" | "L3" | "L4";
export type RiskClassName = "a" | "b" | "c" | "d" | "e";
export type MachineMode = "RUNNING" | "SAFE_STOP" | "EMERGENCY_STOP" | "MAINTENANCE";

export type Assessment = {
  score: number;
  level: StressLevelName;
  components: { hr_dev_norm: number; gsr_dev_norm: number; temp_dev_norm: number };
  calibrating: boolean;
};

export type Telemetry = {
  worker_id: string;
  recv_ts: number;
  vitals: { hr: number; spo2: number; body_temp_c: number | null; gsr_us: number | null };
  env: { amb_temp_c: number; humidity: number; light: number; co2: number; voc: number; sound: number };
  flags: string[];
  battery: number;
};

export type WorkerRow = {
  worker_id: string;
  registered_at: number;
  assigned_machine: string | null;
  assessment: Assessment | null;
  latest_telemetry: Telemetry | null;
};

export type MachineState = {
  machine_id: string;
  mode: MachineMode;
  latched: boolean;
  last_cause: string | null;
  updated_at: number;
  ack_of: string | null;
};

export type MachineRow = {
  machine_id: string;
  params: { s: string; f: string; p: string };
  risk_class: RiskClassName;
  state: MachineState | null;
};

export type Verdict = {
  allowed: boolean;
  max_allowed: RiskClassName | "NONE";
  stress_level: StressLevelName;
  machine_risk: RiskClassName;
  reasons: string[];
};

export type StreamEvent = {
  event_seq: number;
  ts: number;
  kind: "TELEMETRY" | "ALERT" | "ASSESSMENT" | "STATE_CHANGE" | "NOTIFICATION";
  payload: Record<string, unknown>;
};

export type AlertEntry = {
  ts: number;
  worker_id: string;
  code: string;
  severity: string;
  detail: string;
};

export type ApiError = { error: true; code: string; detail: string };
