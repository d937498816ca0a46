import { afterEach, describe, expect, it, vi } from "vitest";

import { ServiceClient, type RenderRequest } from "../src/api.js";

function request(overrides: Partial<RenderRequest> = {}): RenderRequest {
  return {
    pose: { orbit: { azimuth: 10, elevation: 5, radius: 4 } },
    style: { style_id: "style_00" },
    resolution: 128,
    seed: 0,
    ...overrides,
  };
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("ServiceClient", () => {
  it("refuses to send schema-invalid requests", async () => {
    const fetchSpy = vi.fn();
    vi.stubGlobal("fetch", fetchSpy);
    const client = new ServiceClient();
    const invalid = request({
      style: { style_a: "a", style_b: "b", lambda: 2 } as never,
    });
    await expect(client.render(invalid)).rejects.toThrow();
    expect(fetchSpy).not.toHaveBeenCalled();
  });

  it("returns image outcomes with latency", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn(async () => new Response(new Blob(["png-bytes"]), { status: 200 })),
    );
    const outcome = await new ServiceClient().render(request());
    expect(outcome.kind).toBe("image");
    if (outcome.kind === "image") {
      expect(await outcome.blob.text()).toBe("png-bytes");
      expect(outcome.latencyMs).toBeGreaterThanOrEqual(0);
    }
  });

  it("parses Retry-After on 503", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn(
        async () =>
          new Response("busy", { status: 503, headers: { "Retry-After": "2" } }),
      ),
    );
    const outcome = await new ServiceClient().render(request());
    expect(outcome).toMatchObject({ kind: "error", status: 503, retryAfterMs: 2000 });
  });

  it("surfaces field-level detail from 400 responses", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn(
        async () =>
          new Response(JSON.stringify({ detail: [{ field: "style", message: "bad" }] }), {
            status: 400,
            headers: { "Content-Type": "application/json" },
          }),
      ),
    );
    const outcome = await new ServiceClient().render(request());
    expect(outcome.kind).toBe("error");
    if (outcome.kind === "error") {
      expect(outcome.status).toBe(400);
      expect(outcome.message).toContain("style");
    }
  });

  it("loadStyles propagates service failures", async () => {
    vi.stubGlobal("fetch", vi.fn(async () => new Response("down", { status: 500 })));
    await expect(new ServiceClient().loadStyles()).rejects.toThrow("500");
  });
});
