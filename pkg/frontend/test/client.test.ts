// submit_ylim round trip against a mocked service: the console reflects the
// service-confirmed value, and a 400-class rejection reverts with an inline
// message naming the violated bound.

import { afterEach, describe, expect, it, vi } from "vitest";

import { ServiceClient } from "../src/client.js";
import { applyEvent, emptyViewModel, setError } from "../src/viewmodel.js";

function mockFetch(status: number, body: unknown) {
  return vi.fn(async () => ({
    ok: status >= 200 && status < 300,
    status,
    json: async () => body,
  })) as unknown as typeof fetch;
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("submitYlim round trip", () => {
  it("accepted: view reflects the service-confirmed value", async () => {
    vi.stubGlobal("fetch", mockFetch(200, {
      accepted: true, y1_lim: 5600.0, y2_lim: 13400.0, applies_at_step: 12,
    }));
    const client = new ServiceClient("");
    const resp = await client.submitYlim("abc", 5600.0, 13400.0);
    expect(resp.accepted).toBe(true);

    let vm = emptyViewModel();
    vm = applyEvent(vm, { step: 12, event: "ylim_applied",
                          y1_lim: resp.y1_lim, y2_lim: resp.y2_lim });
    expect(vm.feed[0].text).toContain("5600");
    expect(vm.feed[0].text).toContain("13400");
  });

  it("rejected: inline error names the violated bound and controls revert", async () => {
    vi.stubGlobal("fetch", mockFetch(400, {
      detail: "y1_lim outside allowed box", field: "y1_lim",
      bound: [4950.0, 6050.0], value: 9999.0,
    }));
    const client = new ServiceClient("");
    const resp = await client.submitYlim("abc", 9999.0, 13000.0);
    expect(resp.accepted).toBe(false);
    expect(resp.field).toBe("y1_lim");
    expect(resp.bound).toEqual([4950.0, 6050.0]);

    // the console's revert path: sliders return to the confirmed value and
    // the status line carries the bound
    const confirmed = { y1: 5500.0, y2: 13300.0 };
    let vm = emptyViewModel();
    vm = setError(vm, `${resp.field}: ${resp.detail} (bound ${resp.bound})`);
    expect(vm.lastError).toContain("y1_lim");
    expect(vm.lastError).toContain("4950");
    expect(confirmed.y1).toBe(5500.0); // unchanged by the rejected submit
  });

  it("requests carry exactly one service call per action", async () => {
    const spy = mockFetch(200, { accepted: true, y1_lim: 1, y2_lim: 2 });
    vi.stubGlobal("fetch", spy);
    const client = new ServiceClient("");
    await client.submitYlim("abc", 1, 2);
    expect((spy as unknown as ReturnType<typeof vi.fn>).mock.calls.length).toBe(1);
    const [url, init] = (spy as unknown as ReturnType<typeof vi.fn>).mock.calls[0];
    expect(url).toBe("/sessions/abc/ylim");
    expect((init as RequestInit).method).toBe("PUT");
    expect(JSON.parse((init as RequestInit).body as string)).toEqual(
      { y1_lim: 1, y2_lim: 2 });
  });
});

describe("disturbance form", () => {
  it("posts and yields the onset step for the marker", async () => {
    vi.stubGlobal("fetch", mockFetch(200, {
      accepted: true, kind: "ore_hardness", magnitude: 0.1,
      onset_step: 42, ramp_steps: 10,
    }));
    const client = new ServiceClient("");
    const resp = await client.injectDisturbance("abc", "ore_hardness", 0.1, 10);
    expect(resp.accepted).toBe(true);
    let vm = emptyViewModel();
    vm = applyEvent(vm, { step: 41, event: "disturbance", kind: "ore_hardness",
                          magnitude: 0.1, onset: resp.onset_step * 30.0, ramp: 300.0 });
    const markers = vm.markers.filter((m) => m.kind === "disturbance_onset");
    expect(markers.length).toBe(1);
    expect(markers[0].step).toBe(42);
  });

  it("zero magnitude is accepted and renders a marker with no trend effect", async () => {
    vi.stubGlobal("fetch", mockFetch(200, {
      accepted: true, kind: "ore_hardness", magnitude: 0.0,
      onset_step: 5, ramp_steps: 0,
    }));
    const client = new ServiceClient("");
    const resp = await client.injectDisturbance("abc", "ore_hardness", 0.0, 0);
    expect(resp.accepted).toBe(true);
  });
});
