// Live-service checks: run with `npm run test:integration` while
// `noisedirs serve` is up (SERVICE_URL overrides the default address).
// Verifies the explorer's contract: a zero slider shows the byte-identical
// baseline, compositions render, and sidecars replay to the same image.

import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { baselineRequest, buildRequest, initialState, reduce } from "../src/state.js";

const RUN = !!process.env.RUN_INTEGRATION;
const BASE = process.env.SERVICE_URL ?? "http://127.0.0.1:8765";

describe.runIf(RUN)("against a running service", () => {
  const api = new ApiClient(BASE);

  it("health reports a frozen bank", async () => {
    const health = await api.health();
    expect(health.status).toBe("ok");
    expect(health.directions).toBeGreaterThan(0);
  });

  it("zero slider preview is byte-identical to the baseline", async () => {
    let s = initialState();
    s = reduce(s, { type: "set-seed", seed: 11 });
    const preview = await api.submitEdit(buildRequest(s, { direction: 0, scale: 0 }));
    const baseline = await api.submitEdit(baselineRequest(s));
    expect(preview.image_id).toBe(baseline.image_id);
    const a = new Uint8Array(await api.fetchImageBytes(preview.image_url));
    const b = new Uint8Array(await api.fetchImageBytes(baseline.image_url));
    expect(a).toEqual(b);
  });

  it("a two-edit stack renders one composed image", async () => {
    let s = initialState();
    s = reduce(s, { type: "set-seed", seed: 4 });
    s = reduce(s, { type: "push-edit", direction: 0, scale: 1.0 });
    s = reduce(s, { type: "push-edit", direction: 1, scale: -1.0 });
    const res = await api.submitEdit(buildRequest(s));
    expect(res.sidecar.edits).toHaveLength(2);
    const bytes = await api.fetchImageBytes(res.image_url);
    expect(bytes.byteLength).toBeGreaterThan(0);
  });

  it("identical requests return byte-identical previews", async () => {
    let s = initialState();
    s = reduce(s, { type: "set-seed", seed: 21 });
    s = reduce(s, { type: "push-edit", direction: 2, scale: 1.5 });
    const r1 = await api.submitEdit(buildRequest(s));
    const r2 = await api.submitEdit(buildRequest(s));
    const a = new Uint8Array(await api.fetchImageBytes(r1.image_url));
    const b = new Uint8Array(await api.fetchImageBytes(r2.image_url));
    expect(a).toEqual(b);
  });

  it("direction detail exposes the canonical strip", async () => {
    const detail = await api.directionDetail(0);
    expect(detail.strip_scales).toEqual([-2, -1, 0, 1, 2]);
    expect(detail.strip_urls).toHaveLength(5);
    const bytes = await api.fetchImageBytes(detail.strip_urls[2]);
    expect(new Uint8Array(bytes).slice(0, 4)).toEqual(new Uint8Array([0x89, 0x50, 0x4e, 0x47]));
  });
});

describe("integration gate", () => {
  it.runIf(!RUN)("skipped without RUN_INTEGRATION=1", () => {
    expect(RUN).toBe(false);
  });
});
