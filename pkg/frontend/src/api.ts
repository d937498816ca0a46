// Wire types for the render service, with runtime validation so the UI
// can never emit a request the server would reject.

import { z } from "zod";

export const ORBIT_SCHEMA = z
  .object({
    azimuth: z.number().finite(),
    elevation: z.number().finite(),
    radius: z.number().positive().optional(),
  })
  .strict();

export const POSE_SCHEMA = z
  .object({
    index: z.number().int().nonnegative().optional(),
    matrix: z.array(z.array(z.number()).length(4)).length(4).optional(),
    orbit: ORBIT_SCHEMA.optional(),
  })
  .strict()
  .refine(
    (pose) =>
      [pose.index !== undefined, pose.matrix !== undefined, pose.orbit !== undefined].filter(
        Boolean,
      ).length === 1,
    { message: "exactly one pose form must be present" },
  );

export const STYLE_SCHEMA = z
  .object({
    style_id: z.string().optional(),
    style_a: z.string().optional(),
    style_b: z.string().optional(),
    lambda: z.number().min(0).max(1).optional(),
    intensity: z.number().min(0).max(1).optional(),
  })
  .strict()
  .refine(
    (style) => {
      const pair =
        style.style_a !== undefined && style.style_b !== undefined && style.lambda !== undefined;
      const pairPartial =
        style.style_a !== undefined || style.style_b !== undefined || style.lambda !== undefined;
      const single = style.style_id !== undefined;
      if (pairPartial) return pair && !single && style.intensity === undefined;
      return single; // plain style_id, optionally with intensity
    },
    { message: "exactly one style form must be present" },
  );

export const RENDER_REQUEST_SCHEMA = z
  .object({
    pose: POSE_SCHEMA,
    style: STYLE_SCHEMA,
    resolution: z.union([z.literal(64), z.literal(128), z.literal(256)]),
    seed: z.number().int(),
  })
  .strict();

export type RenderRequest = z.infer<typeof RENDER_REQUEST_SCHEMA>;

export interface StyleEntry {
  style_id: string;
  name: string;
  thumbnail: string;
}

export interface RenderSuccess {
  kind: "image";
  blob: Blob;
  latencyMs: number;
}

export interface RenderFailure {
  kind: "error";
  status: number;
  message: string;
  retryAfterMs?: number;
}

export type RenderOutcome = RenderSuccess | RenderFailure;

export class ServiceClient {
  constructor(private readonly baseUrl: string = "") {}

  async loadStyles(): Promise<StyleEntry[]> {
    const response = await fetch(`${this.baseUrl}/styles`);
    if (!response.ok) throw new Error(`styles endpoint returned ${response.status}`);
    return (await response.json()) as StyleEntry[];
  }

  async render(request: RenderRequest): Promise<RenderOutcome> {
    RENDER_REQUEST_SCHEMA.parse(request); // refuse to send anything invalid
    const started = performance.now();
    const response = await fetch(`${this.baseUrl}/render`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
    if (response.ok) {
      return {
        kind: "image",
        blob: await response.blob(),
        latencyMs: performance.now() - started,
      };
    }
    const retryAfter = response.headers.get("Retry-After");
    let message = `render failed (${response.status})`;
    try {
      const body = await response.json();
      if (body && body.detail) message = JSON.stringify(body.detail);
    } catch {
      // non-JSON error body; keep the generic message
    }
    return {
      kind: "error",
      status: response.status,
      message,
      retryAfterMs: retryAfter ? Number(retryAfter) * 1000 : undefined,
    };
  }
}
