// Latest-wins preview dispatch: debounced, never more than one request in
// flight, stale responses dropped, one automatic retry on 503.

import type { RenderOutcome, RenderRequest, RenderSuccess } from "./api.js";
import { buildRenderRequest, canRender, type ViewerState } from "./state.js";

export interface SchedulerCallbacks {
  onImage(result: RenderSuccess, state: ViewerState): void;
  onError(message: string, status: number): void;
  onBusyChange?(inFlight: boolean): void;
}

export class PreviewScheduler {
  private debounceTimer: ReturnType<typeof setTimeout> | null = null;
  private inFlight = false;
  private pendingState: ViewerState | null = null;
  private issuedSerial = 0;
  private displayedSerial = 0;

  constructor(
    private readonly send: (request: RenderRequest) => Promise<RenderOutcome>,
    private readonly callbacks: SchedulerCallbacks,
    private readonly debounceMs: number = 150,
  ) {}

  get busy(): boolean {
    return this.inFlight;
  }

  /** Register the newest control state; dispatch follows after the debounce. */
  request(state: ViewerState): void {
    if (!canRender(state)) return;
    this.pendingState = state;
    if (this.debounceTimer !== null) clearTimeout(this.debounceTimer);
    this.debounceTimer = setTimeout(() => {
      this.debounceTimer = null;
      this.dispatchPending();
    }, this.debounceMs);
  }

  private dispatchPending(): void {
    if (this.inFlight || this.pendingState === null) return;
    const state = this.pendingState;
    this.pendingState = null;
    void this.dispatch(state);
  }

  private async dispatch(state: ViewerState, isRetry = false): Promise<void> {
    const serial = isRetry ? this.issuedSerial : ++this.issuedSerial;
    this.inFlight = true;
    this.callbacks.onBusyChange?.(true);
    let outcome: RenderOutcome;
    try {
      outcome = await this.send(buildRenderRequest(state));
    } catch (error) {
      outcome = { kind: "error", status: 0, message: String(error) };
    }

    if (outcome.kind === "error" && outcome.status === 503 && !isRetry) {
      // One retry after the advertised delay; the budget frees up quickly.
      await delay(outcome.retryAfterMs ?? 1000);
      return this.dispatch(state, true);
    }

    this.inFlight = false;
    this.callbacks.onBusyChange?.(false);

    if (outcome.kind === "image") {
      if (serial > this.displayedSerial) {
        this.displayedSerial = serial;
        this.callbacks.onImage(outcome, state);
      }
    } else {
      this.callbacks.onError(outcome.message, outcome.status);
    }

    // Control state moved on while we were rendering: dispatch it now.
    this.dispatchPending();
  }
}

function delay(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
