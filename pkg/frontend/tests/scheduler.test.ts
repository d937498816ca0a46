// The acceptance contract for the viewer: against a stub service, scripted
// control sequences must produce only schema-valid requests, at most one
// request in flight, and a display trail that ends at the latest state.

import { afterEach, beforeEach, describe, expect, it } from "vitest";
import { vi } from "vitest";

import { RENDER_REQUEST_SCHEMA, type RenderOutcome, type RenderRequest } from "../src/api.js";
import { PreviewScheduler } from "../src/scheduler.js";
import {
  initialState,
  setIntensity,
  setLambda,
  setOrbit,
  type ViewerState,
} from "../src/state.js";

const DEBOUNCE_MS = 150;
const LATENCY_MS = 40;

/** Deterministic stand-in for the render service. */
class StubService {
  requests: RenderRequest[] = [];
  inFlight = 0;
  maxInFlight = 0;
  failNextWith: number | null = null;

  constructor(private latencyMs: number = LATENCY_MS) {}

  /** Mirror of the server's style resolution, for display comparison. */
  static effectiveStyle(request: RenderRequest): string {
    const style = request.style;
    if (style.style_a !== undefined) {
      if (style.lambda === 0) return style.style_a;
      if (style.lambda === 1) return style.style_b as string;
      return `${style.style_a}+${style.style_b}@${style.lambda}`;
    }
    if (style.intensity !== undefined) return `${style.style_id}@i${style.intensity}`;
    return style.style_id as string;
  }

  static tag(request: RenderRequest): string {
    return JSON.stringify({
      style: StubService.effectiveStyle(request),
      orbit: request.pose.orbit,
      resolution: request.resolution,
    });
  }

  send = async (request: RenderRequest): Promise<RenderOutcome> => {
    // Independent structural check, not just the client-side parse.
    const poseForms = [request.pose.index, request.pose.matrix, request.pose.orbit].filter(
      (form) => form !== undefined,
    );
    expect(poseForms).toHaveLength(1);
    const parsed = RENDER_REQUEST_SCHEMA.safeParse(request);
    expect(parsed.success).toBe(true);

    this.requests.push(request);
    this.inFlight += 1;
    this.maxInFlight = Math.max(this.maxInFlight, this.inFlight);
    await new Promise((resolve) => setTimeout(resolve, this.latencyMs));
    this.inFlight -= 1;

    if (this.failNextWith !== null) {
      const status = this.failNextWith;
      this.failNextWith = null;
      return {
        kind: "error",
        status,
        message: `stub failure ${status}`,
        retryAfterMs: status === 503 ? 1000 : undefined,
      };
    }
    return { kind: "image", blob: new Blob([StubService.tag(request)]), latencyMs: this.latencyMs };
  };
}

interface Display {
  tag: Promise<string>;
  state: ViewerState;
}

function harness(stub: StubService) {
  const displays: { tag: string; state: ViewerState }[] = [];
  const errors: { message: string; status: number }[] = [];
  const scheduler = new PreviewScheduler(
    stub.send,
    {
      onImage: (result, state) => {
        // Blob.text() is async; stash the promise and resolve in flushes.
        void result.blob.text().then((tag) => displays.push({ tag, state }));
      },
      onError: (message, status) => errors.push({ message, status }),
    },
    DEBOUNCE_MS,
  );
  return { scheduler, displays, errors };
}

async function settle(ms: number) {
  await vi.advanceTimersByTimeAsync(ms);
}

function ready(): ViewerState {
  return { ...initialState(), styleA: "style_00", styleB: "style_01" };
}

beforeEach(() => {
  vi.useFakeTimers();
});

afterEach(() => {
  vi.useRealTimers();
});

describe("preview scheduling", () => {
  it("debounces a slider drag into at most one in-flight request", async () => {
    const stub = new StubService();
    const { scheduler, displays } = harness(stub);
    for (let i = 0; i <= 20; i++) {
      scheduler.request(setLambda(ready(), i / 20));
      await settle(10); // rapid drag, faster than the debounce window
    }
    await settle(5000);
    expect(stub.maxInFlight).toBe(1);
    expect(stub.requests.length).toBe(1); // only the trailing state fired
    expect(displays.length).toBe(1);
    expect(displays[0].state.lambda).toBe(1);
  });

  it("lambda zero displays the single-style-A image", async () => {
    const stub = new StubService();
    const { scheduler, displays } = harness(stub);
    scheduler.request(setLambda(ready(), 0));
    await settle(5000);
    const direct = StubService.tag({
      pose: { orbit: { azimuth: 45, elevation: 25, radius: 4 } },
      style: { style_id: "style_00" },
      resolution: 128,
      seed: 0,
    });
    expect(displays[0].tag).toBe(direct);
  });

  it("a newer state issued mid-flight is rendered after the current one", async () => {
    const stub = new StubService(200);
    const { scheduler, displays } = harness(stub);
    scheduler.request(setLambda(ready(), 0.2));
    await settle(DEBOUNCE_MS + 50); // first request now in flight
    scheduler.request(setLambda(ready(), 0.9));
    await settle(10_000);
    expect(stub.requests.length).toBe(2);
    expect(stub.maxInFlight).toBe(1);
    expect(displays.at(-1)?.state.lambda).toBe(0.9);
  });

  it("retries exactly once on 503 after the advertised delay", async () => {
    const stub = new StubService();
    stub.failNextWith = 503;
    const { scheduler, displays, errors } = harness(stub);
    scheduler.request(ready());
    await settle(20_000);
    expect(stub.requests.length).toBe(2);
    expect(errors).toHaveLength(0);
    expect(displays).toHaveLength(1);
  });

  it("surfaces 4xx as an error without displaying", async () => {
    const stub = new StubService();
    stub.failNextWith = 422;
    const { scheduler, displays, errors } = harness(stub);
    scheduler.request(ready());
    await settle(5000);
    expect(displays).toHaveLength(0);
    expect(errors).toHaveLength(1);
    expect(errors[0].status).toBe(422);
  });

  it("does not dispatch while no style is selected", async () => {
    const stub = new StubService();
    const { scheduler } = harness(stub);
    scheduler.request(initialState());
    await settle(5000);
    expect(stub.requests).toHaveLength(0);
  });
});

describe("50 scripted control sequences", () => {
  // Small deterministic PRNG so the scripts are reproducible.
  function lcg(seed: number) {
    let value = seed >>> 0;
    return () => {
      value = (value * 1664525 + 1013904223) >>> 0;
      return value / 2 ** 32;
    };
  }

  const STYLES = ["style_00", "style_01", "style_02", "content"];
  const RESOLUTIONS: (64 | 128 | 256)[] = [64, 128, 256];

  function scriptedStep(state: ViewerState, rand: () => number): ViewerState {
    const move = Math.floor(rand() * 6);
    switch (move) {
      case 0:
        return setLambda(state, rand() * 1.4 - 0.2); // deliberately overshoots
      case 1:
        return setIntensity(state, rand() * 1.4 - 0.2);
      case 2:
        return setOrbit(state, {
          azimuth: state.orbit.azimuth + (rand() - 0.5) * 900,
          elevation: state.orbit.elevation + (rand() - 0.5) * 240,
        });
      case 3:
        return { ...state, styleA: STYLES[Math.floor(rand() * STYLES.length)] };
      case 4:
        return { ...state, styleB: STYLES[Math.floor(rand() * STYLES.length)] };
      default:
        return { ...state, resolution: RESOLUTIONS[Math.floor(rand() * 3)] };
    }
  }

  it("every sequence stays schema-valid, single-flight, latest-wins", async () => {
    for (let sequence = 0; sequence < 50; sequence++) {
      const rand = lcg(1000 + sequence);
      const stub = new StubService(20 + Math.floor(rand() * 100));
      const { scheduler, displays, errors } = harness(stub);
      let state = ready();
      const steps = 3 + Math.floor(rand() * 12);
      for (let step = 0; step < steps; step++) {
        state = scriptedStep(state, rand);
        scheduler.request(state);
        // Sometimes pause long enough for the debounce to fire mid-script.
        await settle(rand() < 0.4 ? DEBOUNCE_MS + 30 : 30);
      }
      await settle(30_000); // flush: debounce + any chained dispatches
      // Schema validity asserted inside the stub for every request.
      expect(stub.maxInFlight).toBeLessThanOrEqual(1);
      expect(errors).toHaveLength(0);
      expect(displays.length).toBeGreaterThan(0);
      // The display trail ends at the final control state.
      const final = displays.at(-1)!;
      expect(final.tag).toBe(StubService.tag(stub.requests.at(-1)!));
      const finalRequest = stub.requests.at(-1)!;
      expect(finalRequest).toEqual(
        expect.objectContaining({ resolution: state.resolution, seed: state.seed }),
      );
      expect(finalRequest.pose.orbit).toEqual({
        azimuth: state.orbit.azimuth,
        elevation: state.orbit.elevation,
        radius: state.orbit.radius,
      });
    }
  }, 30_000);
});
