import type { ApiError, MachineRow, Verdict, WorkerRow } from "./types.js";

export class ApiRequestError extends Error {
  constructor(public status: number, public code: string, detail: string) {
    super(detail);
  }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(`${base}${path}`, init);
  const body = await resp.json();
  if (!resp.ok) {
    const err = body as ApiError;
    throw new ApiRequestError(resp.status, err.code ?? "unknown", err.detail ?? resp.statusText);
  }
  return body as T;
}

function post(payload: unknown): RequestInit {
  return {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(payload),
  };
}

export class ApiClient {
  constructor(private base = "") {}

  getWorkers(): Promise<WorkerRow[]> {
    return request(this.base, "/api/v1/workers");
  }

  getMachines(): Promise<MachineRow[]> {
    return request(this.base, "/api/v1/machines");
  }

  estop(machineId: string, reason: string): Promise<{ cmd_id: string }> {
    return request(this.base, `/api/v1/machines/${encodeURIComponent(machineId)}/estop`, post({ reason }));
  }

  reset(machineId: string, reason: string): Promise<{ cmd_id: string }> {
    return request(this.base, `/api/v1/machines/${encodeURIComponent(machineId)}/reset`, post({ reason }));
  }

  suitability(body: {
    worker_id?: string;
    stress_level?: string;
    machine_id?: string;
    risk_class?: string;
  }): Promise<Verdict> {
    return request(this.base, "/api/v1/suitability", post(body));
  }
}
