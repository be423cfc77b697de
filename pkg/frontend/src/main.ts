import { ApiClient, ApiRequestError } from "./api.js";
import { openStream } from "./sse.js";
import { applyEvent, initialState, isStale, loadSnapshot, markActivity } from "./store.js";
import {
  canConfirmStop,
  renderFeed,
  renderMachineCard,
  renderStaleBanner,
  renderVerdict,
  renderWorkerCard,
} from "./ui.js";

const api = new ApiClient("");
const state = initialState();

const el = (id: string): HTMLElement => document.getElementById(id)!;

function render(): void {
  el("workers").innerHTML =
    [...state.workers.values()].map(renderWorkerCard).join("") || `<p class="muted">no workers registered</p>`;
  el("machines").innerHTML =
    [...state.machines.values()].map(renderMachineCard).join("") || `<p class="muted">no machines registered</p>`;
  el("feed").innerHTML = renderFeed(state);
  el("banner").innerHTML = renderStaleBanner(isStale(state, Date.now()));
}

async function refreshSnapshot(): Promise<void> {
  const [workers, machines] = await Promise.all([api.getWorkers(), api.getMachines()]);
  loadSnapshot(state, workers, machines);
  render();
}

// machine card actions: two-step stop/reset confirmation with required reason
el("machines").addEventListener("click", (ev) => {
  const button = (ev.target as HTMLElement).closest("button[data-action]") as HTMLButtonElement | null;
  if (!button) return;
  const card = button.closest("[data-machine]") as HTMLElement;
  const machineId = card.dataset.machine!;
  const confirmBox = card.querySelector('[data-role="confirm"]') as HTMLElement;
  const action = button.dataset.action!;
  if (action === "estop" || action === "reset") {
    confirmBox.classList.remove("hidden");
    confirmBox.dataset.pending = action;
  } else if (action === "cancel") {
    confirmBox.classList.add("hidden");
  } else if (action === "confirm") {
    const reason = (confirmBox.querySelector('[data-role="reason"]') as HTMLInputElement).value;
    if (!canConfirmStop(reason)) return;
    const pending = confirmBox.dataset.pending === "reset" ? "reset" : "estop";
    void api[pending](machineId, reason.trim()).catch((err: unknown) => {
      el("feed").insertAdjacentHTML(
        "afterbegin",
        `<li class="crit">${pending} ${machineId} failed: ${err instanceof ApiRequestError ? err.message : String(err)}</li>`,
      );
    });
    confirmBox.classList.add("hidden");
  }
});

el("machines").addEventListener("input", (ev) => {
  const input = ev.target as HTMLInputElement;
  if (input.dataset.role !== "reason") return;
  const confirmBtn = input.parentElement!.querySelector('[data-action="confirm"]') as HTMLButtonElement;
  confirmBtn.disabled = !canConfirmStop(input.value);
});

// suitability what-if: the verdict always comes from the server
el("whatif-form").addEventListener("submit", (ev) => {
  ev.preventDefault();
  const level = (el("whatif-level") as HTMLSelectElement).value;
  const risk = (el("whatif-risk") as HTMLSelectElement).value;
  api
    .suitability({ stress_level: level, risk_class: risk })
    .then((verdict) => {
      el("whatif-result").innerHTML = renderVerdict(verdict);
    })
    .catch((err: unknown) => {
      el("whatif-result").textContent = `lookup failed: ${String(err)}`;
    });
});

openStream("", {
  onEvent(event) {
    applyEvent(state, event);
    render();
  },
  onActivity() {
    markActivity(state, Date.now());
  },
  onStatus(connected) {
    state.connected = connected;
    render();
  },
});

setInterval(render, 3000); // refresh stale banner even when quiet
void refreshSnapshot();
