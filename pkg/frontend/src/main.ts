// Browser shell: wires the pure render/state modules to the DOM. All the
// logic worth testing lives in the imported modules; this file only moves
// strings in and out of the page.

import {
  cancelReservation,
  configure,
  createMeasurement,
  createReservation,
  getMeasurement,
  getTopology,
  listReservations,
} from "./api";
import { renderHistogram, renderSweep } from "./charts";
import { draftToRequestBody, rejectionMessage, validateDraft } from "./form";
import { renderNetworkMap } from "./map";
import {
  applyFrame,
  initialViewModel,
  isStale,
  markConnectionDown,
  type ViewModel,
} from "./state";
import { subscribeStatus } from "./stream";
import type { HistogramResult, SweepResult } from "./types";

let vm: ViewModel = initialViewModel();

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function renderMap() {
  if (!vm.topology) return;
  el("map").innerHTML = renderNetworkMap(vm.topology, vm.frame, isStale(vm, Date.now()));
}

async function refreshReservations() {
  const rows = await listReservations();
  vm = { ...vm, reservations: rows };
  el("reservations").innerHTML = rows.length
    ? rows
        .map(
          (r) =>
            `<li><code>${r.id}</code> ${r.status} — ` +
            r.resources.map((res) => `${res.kind} ${res.channel}`).join(", ") +
            ` <button data-cancel="${r.id}" ${r.status === "pending" || r.status === "active" ? "" : "disabled"}>cancel</button></li>`,
        )
        .join("")
    : "<li>none yet</li>";
  for (const button of el("reservations").querySelectorAll<HTMLButtonElement>("button[data-cancel]")) {
    button.onclick = async () => {
      await cancelReservation(button.dataset.cancel!);
      await refreshReservations();
    };
  }
}

function selectedChannels(name: string): number[] {
  return Array.from(document.querySelectorAll<HTMLInputElement>(`input[name=${name}]:checked`)).map(
    (box) => Number(box.value),
  );
}

async function submitReservation(event: Event) {
  event.preventDefault();
  const minutes = Number(el<HTMLInputElement>("duration-min").value) || 5;
  const draft = {
    epsChannels: selectedChannels("eps"),
    spdChannels: selectedChannels("spd"),
    startMs: Date.now(),
    endMs: Date.now() + minutes * 60_000,
  };
  const feedback = el("form-feedback");
  const errors = validateDraft(draft);
  if (errors.length) {
    feedback.textContent = errors.join("; ");
    feedback.className = "feedback error";
    return;
  }
  const outcome = await createReservation(draftToRequestBody(draft));
  if (outcome.ok) {
    feedback.textContent = `granted ${outcome.reservation.id}`;
    feedback.className = "feedback ok";
    await refreshReservations();
  } else {
    const requested = [
      ...draft.epsChannels.map((c) => `eps ${c}`),
      ...draft.spdChannels.map((c) => `spd ${c}`),
    ].join(", ");
    const window = `${new Date(draft.startMs).toLocaleTimeString()}–${new Date(draft.endMs).toLocaleTimeString()}`;
    feedback.textContent = `${rejectionMessage(outcome.rejection)} (requested ${requested} over ${window})`;
    feedback.className = "feedback error";
  }
}

async function pollMeasurement(id: string) {
  const panel = el("measurement");
  for (;;) {
    const view = await getMeasurement(id);
    if (view.state === "done" && view.result) {
      panel.innerHTML =
        view.kind === "histogram"
          ? renderHistogram(view.result as HistogramResult)
          : renderSweep(view.result as SweepResult);
      return;
    }
    if (view.state === "failed") {
      panel.textContent = `measurement failed: ${view.error}`;
      return;
    }
    panel.textContent = `measurement ${view.state}…`;
    await new Promise((resolve) => setTimeout(resolve, 500));
  }
}

async function startMeasurement(kind: "histogram" | "dispersion_sweep") {
  const body =
    kind === "histogram"
      ? { kind, eps_pair: [2, 3], signal_spd: 1, idler_spd: 2, pairs: 50_000, compensation_ps_nm: -19.4 }
      : { kind, compensation_from: 0, compensation_to: -22, compensation_step: 1, pairs_per_point: 20_000 };
  try {
    const accepted = await createMeasurement(body);
    await pollMeasurement(accepted.id);
  } catch (err) {
    el("measurement").textContent = String(err);
  }
}

async function connect(event: Event) {
  event.preventDefault();
  configure(el<HTMLInputElement>("base-url").value, el<HTMLInputElement>("token").value);
  vm = { ...vm, topology: await getTopology() };
  el("login").classList.add("hidden");
  el("app").classList.remove("hidden");
  renderMap();
  await refreshReservations();
  subscribeStatus(
    (frame) => {
      vm = applyFrame(vm, frame, Date.now());
      renderMap();
    },
    (live) => {
      if (!live) vm = markConnectionDown(vm);
      renderMap();
    },
  );
  setInterval(renderMap, 1000); // keeps the stale banner honest
}

window.addEventListener("DOMContentLoaded", () => {
  el<HTMLFormElement>("login-form").addEventListener("submit", (e) => void connect(e));
  el<HTMLFormElement>("reservation-form").addEventListener("submit", (e) => void submitReservation(e));
  el("run-histogram").addEventListener("click", () => void startMeasurement("histogram"));
  el("run-sweep").addEventListener("click", () => void startMeasurement("dispersion_sweep"));
});
