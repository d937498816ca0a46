import { describe, expect, it } from "vitest";

import { RENDER_REQUEST_SCHEMA } from "../src/api.js";
import {
  buildRenderRequest,
  canRender,
  clamp01,
  clampElevation,
  initialState,
  normalizeAzimuth,
  setIntensity,
  setLambda,
  setOrbit,
} from "../src/state.js";

function ready() {
  return { ...initialState(), styleA: "style_00", styleB: "style_01" };
}

describe("clamping", () => {
  it("confines slider values to [0, 1]", () => {
    expect(clamp01(-0.5)).toBe(0);
    expect(clamp01(1.5)).toBe(1);
    expect(clamp01(0.25)).toBe(0.25);
    expect(clamp01(Number.NaN)).toBe(0);
  });

  it("normalizes azimuth into [0, 360)", () => {
    expect(normalizeAzimuth(360)).toBe(0);
    expect(normalizeAzimuth(400)).toBe(40);
    expect(normalizeAzimuth(-30)).toBe(330);
  });

  it("clamps elevation away from the poles", () => {
    expect(clampElevation(120)).toBe(89);
    expect(clampElevation(-95)).toBe(-89);
  });

  it("slider setters clamp and switch mode", () => {
    const blended = setLambda(ready(), 2.0);
    expect(blended.lambda).toBe(1);
    expect(blended.mode).toBe("blend");
    const dialed = setIntensity(ready(), -1);
    expect(dialed.intensity).toBe(0);
    expect(dialed.mode).toBe("intensity");
  });

  it("orbit updates normalize in place", () => {
    const state = setOrbit(ready(), { azimuth: 725, elevation: -200 });
    expect(state.orbit.azimuth).toBe(5);
    expect(state.orbit.elevation).toBe(-89);
  });
});

describe("request building", () => {
  it("full orbit turn produces the same payload", () => {
    const base = ready();
    const a = buildRenderRequest(setOrbit(base, { azimuth: 0 }));
    const b = buildRenderRequest(setOrbit(base, { azimuth: 360 }));
    expect(a).toEqual(b);
  });

  it("blend mode emits the pair form", () => {
    const request = buildRenderRequest(setLambda(ready(), 0.3));
    expect(request.style).toEqual({ style_a: "style_00", style_b: "style_01", lambda: 0.3 });
    expect(RENDER_REQUEST_SCHEMA.safeParse(request).success).toBe(true);
  });

  it("intensity mode emits the dialed single form", () => {
    const request = buildRenderRequest(setIntensity(ready(), 0.4));
    expect(request.style).toEqual({ style_id: "style_00", intensity: 0.4 });
    expect(RENDER_REQUEST_SCHEMA.safeParse(request).success).toBe(true);
  });

  it("refuses to build without a selection", () => {
    expect(canRender(initialState())).toBe(false);
    expect(() => buildRenderRequest(initialState())).toThrow("no style selected");
  });

  it("never emits an out-of-range lambda even from a corrupted state", () => {
    const state = { ...ready(), lambda: 7 };
    const request = buildRenderRequest(state);
    expect(request.style.lambda).toBe(1);
    expect(RENDER_REQUEST_SCHEMA.safeParse(request).success).toBe(true);
  });
});
