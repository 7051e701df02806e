// Pure view-model layer: snapshots and session events reduce into a plain
// serializable state object; rendering reads it, never the wire objects.
// Keeping this pure makes replay tests deterministic without pixel
// comparisons.

import type { DetectorInfo, SessionEvent, Snapshot } from "./types.js";

export const TREND_WINDOW = 240; // last 2 h of 30 s samples

export interface TrendPoint {
  step: number;
  y1: number;
  y2: number;
  u1: number;
  u2: number;
  u3: number;
  usp1: number;
  usp2: number;
  usp3: number;
}

export interface FanPoint {
  step: number;
  y1: number;
  y2: number;
}

export interface GaugeState {
  m: number;
  m_d: number;
  fill: number;
  alerting: boolean; // M > 0
  flash: boolean;    // retrain fired this step
}

export interface Marker {
  step: number;
  kind: string;
  label: string;
}

export interface FeedEntry {
  step: number;
  text: string;
  kind: string;
}

export interface ViewModel {
  sessionStep: number;
  trend: TrendPoint[];
  fan: FanPoint[];          // horizon fan ahead of the newest sample
  nowcast: { y1: number; y2: number } | null;
  ylim: { y1: number; y2: number };
  gauges: { y1: GaugeState; y2: GaugeState };
  markers: Marker[];        // onset/retrain markers on the trend axis
  feed: FeedEntry[];        // textual event feed, newest first
  twinActive: boolean;
  gap: boolean;             // true after a stream drop until data resumes
  lastError: string | null; // inline control-surface error
}

export function emptyViewModel(): ViewModel {
  return {
    sessionStep: -1,
    trend: [],
    fan: [],
    nowcast: null,
    ylim: { y1: NaN, y2: NaN },
    gauges: {
      y1: { m: 0, m_d: 0, fill: 0, alerting: false, flash: false },
      y2: { m: 0, m_d: 0, fill: 0, alerting: false, flash: false },
    },
    markers: [],
    feed: [],
    twinActive: false,
    gap: false,
    lastError: null,
  };
}

function gauge(info: DetectorInfo, cv: "y1" | "y2", retrained: string[]): GaugeState {
  const d = info[cv];
  if (!info.active || !d) {
    return { m: 0, m_d: 0, fill: 0, alerting: false, flash: false };
  }
  return {
    m: d.m,
    m_d: d.m_d,
    fill: d.window_fill,
    alerting: d.m > 0,
    flash: retrained.includes(cv),
  };
}

export function applySnapshot(vm: ViewModel, snap: Snapshot): ViewModel {
  const trend = vm.trend.concat([{
    step: snap.step,
    y1: snap.y[0], y2: snap.y[1],
    u1: snap.u[0], u2: snap.u[1], u3: snap.u[2],
    usp1: snap.usp[0], usp2: snap.usp[1], usp3: snap.usp[2],
  }]).slice(-TREND_WINDOW);

  // prediction fan: instants k+1..k+N drawn ahead of the current time
  let fan: FanPoint[] = [];
  let nowcast = vm.nowcast;
  if (snap.twin) {
    fan = snap.twin.y_hat.slice(1).map((row, i) => ({
      step: snap.step + 1 + i,
      y1: row[0],
      y2: row[1],
    }));
    nowcast = { y1: snap.twin.nowcast[0], y2: snap.twin.nowcast[1] };
  }

  const markers = vm.markers.slice();
  const feed = vm.feed.slice();
  if (snap.retrained.length > 0) {
    markers.push({ step: snap.step, kind: "retrain",
                   label: `retrain (${snap.retrained.join(",")})` });
    feed.unshift({ step: snap.step, kind: "retrain",
                   text: `model retrained on ${snap.retrained.join(", ")}` });
  }

  return {
    ...vm,
    sessionStep: snap.step,
    trend,
    fan,
    nowcast,
    ylim: { y1: snap.ylim.y1, y2: snap.ylim.y2 },
    gauges: {
      y1: gauge(snap.detector, "y1", snap.retrained),
      y2: gauge(snap.detector, "y2", snap.retrained),
    },
    markers,
    feed: feed.slice(0, 100),
    twinActive: snap.twin !== null,
    gap: false,
  };
}

export function applyEvent(vm: ViewModel, ev: SessionEvent): ViewModel {
  const markers = vm.markers.slice();
  const feed = vm.feed.slice();
  if (ev.event === "disturbance") {
    const onsetStep = Math.round((ev.onset as number) / 30.0);
    markers.push({ step: onsetStep, kind: "disturbance_onset",
                   label: `${ev.kind} onset` });
    feed.unshift({ step: ev.step, kind: "disturbance",
                   text: `disturbance injected: ${ev.kind} x${ev.magnitude} (onset @${onsetStep})` });
  } else if (ev.event === "ylim_applied") {
    feed.unshift({ step: ev.step, kind: "ylim",
                   text: `operating limits now ${ev.y1_lim} / ${ev.y2_lim}` });
  } else if (ev.event === "retrain_deferred") {
    feed.unshift({ step: ev.step, kind: "retrain_deferred",
                   text: `retrain deferred (insufficient data) for ${ev.cv}` });
  }
  return { ...vm, markers, feed: feed.slice(0, 100) };
}

export function markGap(vm: ViewModel): ViewModel {
  return { ...vm, gap: true };
}

export function setError(vm: ViewModel, message: string | null): ViewModel {
  return { ...vm, lastError: message };
}

/** Replay a recorded stream (snapshots interleaved with session events in
 *  step order); the result is a pure function of the inputs. */
export function replay(snapshots: Snapshot[], events: SessionEvent[]): ViewModel {
  let vm = emptyViewModel();
  for (const ev of events) {
    vm = applyEvent(vm, ev);
  }
  for (const snap of snapshots) {
    vm = applySnapshot(vm, snap);
  }
  return vm;
}
