// Console wiring: one push subscription per open session view; every
// control maps to exactly one service call and the UI reflects only what
// the service confirms.

import { ServiceClient, subscribe } from "./client.js";
import { applyEvent, applySnapshot, emptyViewModel, markGap, setError, ViewModel } from "./viewmodel.js";
import { renderAll } from "./render.js";

let base = "";
let client = new ServiceClient(base);
let vm: ViewModel = emptyViewModel();
let sessionId: string | null = null;
let confirmedYlim = { y1: 0, y2: 0 };

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function paint() {
  const panes = renderAll(vm);
  el("pane-pressure").innerHTML = panes.pressure;
  el("pane-power").innerHTML = panes.power;
  el("pane-gauges").innerHTML = panes.gaugeY1 + panes.gaugeY2;
  el("pane-feed").innerHTML = panes.feed;
  el("pane-status").innerHTML = panes.status;
}

async function boot() {
  base = el<HTMLInputElement>("service-url").value.replace(/\/$/, "");
  client = new ServiceClient(base);
  const artifacts = (el<HTMLInputElement>("artifacts-dir")).value || undefined;
  const info = await client.createSession({
    mode: "artifacts",
    artifacts_dir: artifacts,
  });
  sessionId = info.id;
  confirmedYlim = { y1: info.ylim.y1_lim, y2: info.ylim.y2_lim };
  const [[lo1, hi1], [lo2, hi2]] = info.ylim_box;
  const s1 = el<HTMLInputElement>("ylim-y1");
  const s2 = el<HTMLInputElement>("ylim-y2");
  s1.min = String(lo1); s1.max = String(hi1); s1.value = String(confirmedYlim.y1);
  s2.min = String(lo2); s2.max = String(hi2); s2.value = String(confirmedYlim.y2);
  subscribe(base, info.id, {
    onSnapshot: (snap) => { vm = applySnapshot(vm, snap); paint(); },
    onGap: () => { vm = markGap(vm); paint(); },
  });
  paint();
}

async function submitYlim() {
  if (!sessionId) return;
  const s1 = el<HTMLInputElement>("ylim-y1");
  const s2 = el<HTMLInputElement>("ylim-y2");
  const resp = await client.submitYlim(sessionId, Number(s1.value), Number(s2.value));
  if (resp.accepted) {
    confirmedYlim = { y1: resp.y1_lim!, y2: resp.y2_lim! };
    vm = setError(vm, null);
    vm = applyEvent(vm, { step: vm.sessionStep, event: "ylim_applied",
                          y1_lim: resp.y1_lim, y2_lim: resp.y2_lim });
  } else {
    // rejection: revert the sliders to the last confirmed values
    s1.value = String(confirmedYlim.y1);
    s2.value = String(confirmedYlim.y2);
    vm = setError(vm, `${resp.field}: ${resp.detail} (bound ${resp.bound})`);
  }
  paint();
}

async function injectDisturbance() {
  if (!sessionId) return;
  const kind = el<HTMLSelectElement>("dist-kind").value;
  const magnitude = Number(el<HTMLInputElement>("dist-mag").value);
  const ramp = Number(el<HTMLInputElement>("dist-ramp").value);
  try {
    const resp = await client.injectDisturbance(sessionId, kind, magnitude, ramp);
    vm = applyEvent(vm, { step: vm.sessionStep, event: "disturbance", kind,
                          magnitude, onset: resp.onset_step * 30.0, ramp: ramp * 30.0 });
    vm = setError(vm, null);
  } catch (err) {
    vm = setError(vm, String(err));
  }
  paint();
}

async function advance(steps: number) {
  if (!sessionId) return;
  await client.advance(sessionId, steps);
}

export function wire() {
  el("btn-connect").addEventListener("click", () => void boot());
  el("btn-ylim").addEventListener("click", () => void submitYlim());
  el("btn-disturb").addEventListener("click", () => void injectDisturbance());
  el("btn-step").addEventListener("click", () => void advance(1));
  el("btn-advance").addEventListener("click", () => void advance(30));
  el("btn-run").addEventListener("click", () => sessionId && void client.setMode(sessionId, "running", 4.0));
  el("btn-pause").addEventListener("click", () => sessionId && void client.setMode(sessionId, "paused"));
}

if (typeof document !== "undefined" && document.getElementById("btn-connect")) {
  wire();
}
