// The viewer's single source of truth and its mapping to wire requests.
// All clamping/normalization lives here so the request builder can only
// produce schema-valid payloads.

import type { RenderRequest } from "./api.js";

export type StyleMode = "blend" | "intensity";

export interface Orbit {
  azimuth: number; // degrees, normalized to [0, 360)
  elevation: number; // degrees, clamped to [-89, 89]
  radius: number;
}

export interface ViewerState {
  styleA: string | null;
  styleB: string | null;
  mode: StyleMode;
  lambda: number; // [0, 1]
  intensity: number; // [0, 1]
  orbit: Orbit;
  resolution: 64 | 128 | 256;
  seed: number;
  lastLatencyMs: number | null;
  requestInFlight: boolean;
}

export const DEFAULT_ORBIT: Orbit = { azimuth: 45, elevation: 25, radius: 4 };

export function initialState(): ViewerState {
  return {
    styleA: null,
    styleB: null,
    mode: "blend",
    lambda: 0,
    intensity: 1,
    orbit: { ...DEFAULT_ORBIT },
    resolution: 128,
    seed: 0,
    lastLatencyMs: null,
    requestInFlight: false,
  };
}

export function clamp01(value: number): number {
  if (Number.isNaN(value)) return 0;
  return Math.min(1, Math.max(0, value));
}

export function normalizeAzimuth(degrees: number): number {
  const wrapped = degrees % 360;
  return wrapped < 0 ? wrapped + 360 : wrapped;
}

export function clampElevation(degrees: number): number {
  return Math.min(89, Math.max(-89, degrees));
}

export function setLambda(state: ViewerState, value: number): ViewerState {
  return { ...state, lambda: clamp01(value), mode: "blend" };
}

export function setIntensity(state: ViewerState, value: number): ViewerState {
  return { ...state, intensity: clamp01(value), mode: "intensity" };
}

export function setOrbit(state: ViewerState, orbit: Partial<Orbit>): ViewerState {
  const merged = { ...state.orbit, ...orbit };
  return {
    ...state,
    orbit: {
      azimuth: normalizeAzimuth(merged.azimuth),
      elevation: clampElevation(merged.elevation),
      radius: Math.max(0.1, merged.radius),
    },
  };
}

export function canRender(state: ViewerState): boolean {
  if (state.styleA === null) return false;
  if (state.mode === "blend" && state.styleB === null) return false;
  return true;
}

/** Resolve the control surface to exactly one wire style form. */
export function buildRenderRequest(state: ViewerState): RenderRequest {
  if (!canRender(state)) throw new Error("no style selected");
  const style =
    state.mode === "blend"
      ? {
          style_a: state.styleA as string,
          style_b: state.styleB as string,
          lambda: clamp01(state.lambda),
        }
      : { style_id: state.styleA as string, intensity: clamp01(state.intensity) };
  return {
    pose: {
      orbit: {
        azimuth: normalizeAzimuth(state.orbit.azimuth),
        elevation: clampElevation(state.orbit.elevation),
        radius: state.orbit.radius,
      },
    },
    style,
    resolution: state.resolution,
    seed: state.seed,
  };
}
