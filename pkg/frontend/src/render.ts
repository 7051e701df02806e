// SVG rendering of the view-model.  Pure string templating: given the same
// view-model the markup is identical, which the replay tests rely on.

import type { ViewModel, TrendPoint, FanPoint, Marker } from "./viewmodel.js";

const W = 880;
const H = 260;
const ML = 60;
const MB = 24;

function extent(values: number[]): [number, number] {
  let lo = Math.min(...values);
  let hi = Math.max(...values);
  if (!isFinite(lo) || !isFinite(hi)) return [0, 1];
  if (hi - lo < 1e-9) hi = lo + 1;
  const pad = 0.08 * (hi - lo);
  return [lo - pad, hi + pad];
}

export function renderTrend(
  title: string,
  cv: "y1" | "y2",
  trend: TrendPoint[],
  fan: FanPoint[],
  markers: Marker[],
  ylim: number,
): string {
  if (trend.length === 0) return `<svg data-empty="true"></svg>`;
  const steps = trend.map((p) => p.step).concat(fan.map((p) => p.step));
  const x0 = Math.min(...steps);
  const x1 = Math.max(...steps) + 1;
  const ys = trend.map((p) => p[cv]).concat(fan.map((p) => p[cv])).concat([ylim]);
  const [lo, hi] = extent(ys);
  const px = (s: number) => ML + ((s - x0) / (x1 - x0)) * (W - ML - 10);
  const py = (v: number) => 10 + (1 - (v - lo) / (hi - lo)) * (H - MB - 10);

  const line = trend.map((p) => `${px(p.step).toFixed(1)},${py(p[cv]).toFixed(1)}`).join(" ");
  const last = trend[trend.length - 1];
  const fanPts = fan
    .map((p) => `<circle class="fan-point" cx="${px(p.step).toFixed(1)}" cy="${py(p[cv]).toFixed(1)}" r="2.5" fill="#d62728"/>`)
    .join("");
  const fanLine = fan.length
    ? `<polyline class="fan-line" points="${[`${px(last.step).toFixed(1)},${py(last[cv]).toFixed(1)}`]
        .concat(fan.map((p) => `${px(p.step).toFixed(1)},${py(p[cv]).toFixed(1)}`)).join(" ")}" fill="none" stroke="#d62728" stroke-dasharray="3 2"/>`
    : "";
  const markerLines = markers
    .filter((m) => m.step >= x0 && m.step <= x1)
    .map((m) =>
      `<g class="marker marker-${m.kind}"><line x1="${px(m.step).toFixed(1)}" y1="10" x2="${px(m.step).toFixed(1)}" y2="${H - MB}" stroke="${m.kind === "retrain" ? "#ff7f0e" : "#444"}" stroke-dasharray="5 3"/><text x="${(px(m.step) + 3).toFixed(1)}" y="20" font-size="10">${m.label}</text></g>`)
    .join("");
  const limLine = `<line class="ylim-line" x1="${ML}" y1="${py(ylim).toFixed(1)}" x2="${W - 10}" y2="${py(ylim).toFixed(1)}" stroke="#999" stroke-dasharray="8 4"/>`;

  return [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${W}" height="${H}" font-family="sans-serif">`,
    `<text x="${ML}" y="12" font-size="12">${title}</text>`,
    `<rect x="${ML}" y="10" width="${W - ML - 10}" height="${H - MB - 10}" fill="none" stroke="#bbb"/>`,
    limLine,
    `<polyline class="measured" points="${line}" fill="none" stroke="#1f77b4" stroke-width="1.4"/>`,
    fanLine,
    fanPts,
    markerLines,
    `</svg>`,
  ].join("");
}

export function renderGauge(cv: string, m: number, mD: number, alerting: boolean, flash: boolean): string {
  const frac = mD > 0 ? Math.min(1, m / mD) : 0;
  const color = flash ? "#ff7f0e" : alerting ? "#d62728" : "#2ca02c";
  return [
    `<div class="gauge gauge-${cv}${flash ? " flash" : ""}" data-m="${m}" data-md="${mD}">`,
    `<span class="gauge-label">${cv} M=${m}/${mD}</span>`,
    `<div class="gauge-bar" style="background:#eee;width:160px;height:10px">`,
    `<div style="background:${color};width:${(frac * 160).toFixed(0)}px;height:10px"></div>`,
    `</div></div>`,
  ].join("");
}

export function renderFeed(vm: ViewModel): string {
  const items = vm.feed
    .map((e) => `<li class="feed-${e.kind}">[${e.step}] ${e.text}</li>`)
    .join("");
  return `<ul class="feed">${items}</ul>`;
}

/** Serializable rendering of the whole console; replay tests snapshot this. */
export function renderAll(vm: ViewModel): { [pane: string]: string } {
  return {
    pressure: renderTrend("bearing pressure (kPa)", "y1", vm.trend, vm.fan, vm.markers, vm.ylim.y1),
    power: renderTrend("motor power (kW)", "y2", vm.trend, vm.fan, vm.markers, vm.ylim.y2),
    gaugeY1: renderGauge("y1", vm.gauges.y1.m, vm.gauges.y1.m_d, vm.gauges.y1.alerting, vm.gauges.y1.flash),
    gaugeY2: renderGauge("y2", vm.gauges.y2.m, vm.gauges.y2.m_d, vm.gauges.y2.alerting, vm.gauges.y2.flash),
    feed: renderFeed(vm),
    status: `<div class="status${vm.gap ? " gap" : ""}">step ${vm.sessionStep}${vm.gap ? " (stream gap)" : ""}${vm.lastError ? ` | ${vm.lastError}` : ""}</div>`,
  };
}
