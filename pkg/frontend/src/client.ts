// Thin twin-service client.  Every user action is exactly one HTTP call;
// the view reflects only service-confirmed state.

import type { SessionInfo, Snapshot, YlimResponse } from "./types.js";

export class ServiceClient {
  constructor(private base: string = "") {}

  async createSession(body: unknown): Promise<SessionInfo> {
    const r = await fetch(`${this.base}/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!r.ok) throw new Error(`create failed: ${r.status}`);
    return (await r.json()) as SessionInfo;
  }

  async advance(id: string, steps: number): Promise<Snapshot[]> {
    const r = await fetch(`${this.base}/sessions/${id}/advance`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ steps }),
    });
    if (!r.ok) throw new Error(`advance failed: ${r.status}`);
    return ((await r.json()) as { snapshots: Snapshot[] }).snapshots;
  }

  /** PUT new operating limits; resolves with the service's verdict.  On a
   *  rejection the caller reverts its controls to the last confirmed value. */
  async submitYlim(id: string, y1: number, y2: number): Promise<YlimResponse> {
    const r = await fetch(`${this.base}/sessions/${id}/ylim`, {
      method: "PUT",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ y1_lim: y1, y2_lim: y2 }),
    });
    const body = (await r.json()) as YlimResponse;
    if (r.status === 400) {
      return { ...body, accepted: false };
    }
    if (!r.ok) throw new Error(`ylim failed: ${r.status}`);
    return { ...body, accepted: true };
  }

  async injectDisturbance(
    id: string, kind: string, magnitude: number, rampSteps: number,
  ): Promise<{ accepted: boolean; onset_step: number }> {
    const r = await fetch(`${this.base}/sessions/${id}/disturbance`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ kind, magnitude, ramp_steps: rampSteps }),
    });
    if (!r.ok) throw new Error(`disturbance failed: ${r.status}`);
    return (await r.json()) as { accepted: boolean; onset_step: number };
  }

  async setMode(id: string, mode: string, speed = 2.0): Promise<void> {
    const r = await fetch(`${this.base}/sessions/${id}/mode`, {
      method: "PUT",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ mode, speed }),
    });
    if (!r.ok) throw new Error(`mode failed: ${r.status}`);
  }
}

export interface StreamHandlers {
  onSnapshot: (snap: Snapshot) => void;
  onGap: () => void;
}

/** Subscribe to the SSE snapshot feed with automatic resubscription; a
 *  drop triggers onGap() so the view can show the indicator, and the
 *  resubscription replays from the last seen step. */
export function subscribe(base: string, id: string, handlers: StreamHandlers): () => void {
  let lastStep = -1;
  let closed = false;
  let source: EventSource | null = null;

  const open = () => {
    if (closed) return;
    source = new EventSource(`${base}/sessions/${id}/stream?from_step=${lastStep + 1}`);
    source.addEventListener("snapshot", (ev) => {
      const snap = JSON.parse((ev as MessageEvent).data) as Snapshot;
      lastStep = snap.step;
      handlers.onSnapshot(snap);
    });
    source.onerror = () => {
      source?.close();
      if (!closed) {
        handlers.onGap();
        setTimeout(open, 1000);
      }
    };
  };
  open();
  return () => {
    closed = true;
    source?.close();
  };
}
