// DOM wiring: style pickers with thumbnails, blend/intensity sliders,
// drag-to-orbit preview canvas, resolution toggle, latency readout.

import { ServiceClient, type StyleEntry, type RenderSuccess } from "./api.js";
import { PreviewScheduler } from "./scheduler.js";
import {
  canRender,
  initialState,
  setIntensity,
  setLambda,
  setOrbit,
  type ViewerState,
} from "./state.js";

const CONTENT_STYLE_ID = "content";

export class ViewerApp {
  private state: ViewerState = initialState();
  private scheduler: PreviewScheduler;
  private client: ServiceClient;

  constructor(private readonly root: HTMLElement, baseUrl = "") {
    this.client = new ServiceClient(baseUrl);
    this.scheduler = new PreviewScheduler(
      (request) => this.client.render(request),
      {
        onImage: (result, state) => this.showImage(result, state),
        onError: (message, status) => this.showError(`${status || "network"}: ${message}`),
        onBusyChange: (busy) => this.setBusy(busy),
      },
    );
    this.buildLayout();
  }

  async start(): Promise<void> {
    try {
      const styles = await this.client.loadStyles();
      this.populatePickers(styles);
    } catch {
      this.showBanner("service unreachable", () => void this.start());
    }
  }

  private buildLayout(): void {
    this.root.innerHTML = `
      <div class="panel">
        <div id="banner" class="banner" hidden></div>
        <div class="pickers">
          <label>style A <select id="style-a"></select></label>
          <label>style B <select id="style-b"></select></label>
          <div id="thumbs"></div>
        </div>
        <label>blend λ <input id="lambda" type="range" min="0" max="1" step="0.01" value="0"></label>
        <label>intensity <input id="intensity" type="range" min="0" max="1" step="0.01" value="1"></label>
        <label>resolution
          <select id="resolution">
            <option>64</option><option selected>128</option><option>256</option>
          </select>
        </label>
        <div id="status"><span id="latency"></span><span id="error" class="chip" hidden></span></div>
      </div>
      <canvas id="preview" width="128" height="128"></canvas>
    `;
    this.lambdaSlider.addEventListener("input", () => {
      this.update(setLambda(this.state, Number(this.lambdaSlider.value)));
    });
    this.intensitySlider.addEventListener("input", () => {
      this.update(setIntensity(this.state, Number(this.intensitySlider.value)));
    });
    this.select("style-a").addEventListener("change", () => {
      this.update({ ...this.state, styleA: this.select("style-a").value });
    });
    this.select("style-b").addEventListener("change", () => {
      this.update({ ...this.state, styleB: this.select("style-b").value });
    });
    this.select("resolution").addEventListener("change", () => {
      const resolution = Number(this.select("resolution").value) as 64 | 128 | 256;
      this.update({ ...this.state, resolution });
      this.canvas.width = resolution;
      this.canvas.height = resolution;
    });
    this.attachOrbitDrag();
  }

  private attachOrbitDrag(): void {
    let dragging = false;
    let last: { x: number; y: number } | null = null;
    this.canvas.addEventListener("pointerdown", (event) => {
      dragging = true;
      last = { x: event.clientX, y: event.clientY };
      this.canvas.setPointerCapture(event.pointerId);
    });
    this.canvas.addEventListener("pointermove", (event) => {
      if (!dragging || last === null) return;
      const dx = event.clientX - last.x;
      const dy = event.clientY - last.y;
      last = { x: event.clientX, y: event.clientY };
      this.update(
        setOrbit(this.state, {
          azimuth: this.state.orbit.azimuth + dx * 0.8,
          elevation: this.state.orbit.elevation - dy * 0.8,
        }),
      );
    });
    this.canvas.addEventListener("pointerup", () => {
      dragging = false;
      last = null;
    });
  }

  private populatePickers(styles: StyleEntry[]): void {
    const pickerA = this.select("style-a");
    const pickerB = this.select("style-b");
    pickerA.innerHTML = "";
    pickerB.innerHTML = "";
    if (styles.length === 0) {
      this.showBanner("no styles registered", null);
      this.setControlsEnabled(false);
      return;
    }
    for (const style of styles) {
      for (const picker of [pickerA, pickerB]) {
        const option = document.createElement("option");
        option.value = style.style_id;
        option.textContent =
          style.style_id === CONTENT_STYLE_ID ? `◦ ${style.name} (original)` : style.name;
        picker.appendChild(option);
      }
      const img = document.createElement("img");
      img.src = style.thumbnail;
      img.alt = style.name;
      img.width = 40;
      img.onerror = () => {
        img.removeAttribute("src");
        img.classList.add("placeholder");
      };
      this.element("thumbs").appendChild(img);
    }
    this.setControlsEnabled(true);
    const fallback = styles[0].style_id;
    const second = styles.length > 1 ? styles[1].style_id : fallback;
    pickerA.value = fallback;
    pickerB.value = second;
    this.update({ ...this.state, styleA: fallback, styleB: second });
  }

  private update(state: ViewerState): void {
    this.state = state;
    if (canRender(state)) this.scheduler.request(state);
  }

  private showImage(result: RenderSuccess, state: ViewerState): void {
    this.element("error").hidden = true;
    this.element("latency").textContent = `${result.latencyMs.toFixed(0)} ms`;
    this.state = { ...this.state, lastLatencyMs: result.latencyMs };
    const context = this.canvas.getContext("2d");
    if (context === null) return;
    void createImageBitmap(result.blob).then((bitmap) => {
      context.drawImage(bitmap, 0, 0, this.canvas.width, this.canvas.height);
    });
    void state;
  }

  private showError(message: string): void {
    const chip = this.element("error");
    chip.textContent = message;
    chip.hidden = false;
  }

  private showBanner(message: string, retry: (() => void) | null): void {
    const banner = this.element("banner");
    banner.hidden = false;
    banner.textContent = message + " ";
    if (retry !== null) {
      const button = document.createElement("button");
      button.textContent = "retry";
      button.addEventListener("click", retry);
      banner.appendChild(button);
    }
  }

  private setBusy(busy: boolean): void {
    this.state = { ...this.state, requestInFlight: busy };
    this.root.classList.toggle("busy", busy);
  }

  private setControlsEnabled(enabled: boolean): void {
    for (const id of ["style-a", "style-b", "lambda", "intensity", "resolution"]) {
      (this.element(id) as HTMLInputElement | HTMLSelectElement).disabled = !enabled;
    }
  }

  private get canvas(): HTMLCanvasElement {
    return this.element("preview") as HTMLCanvasElement;
  }

  private get lambdaSlider(): HTMLInputElement {
    return this.element("lambda") as HTMLInputElement;
  }

  private get intensitySlider(): HTMLInputElement {
    return this.element("intensity") as HTMLInputElement;
  }

  private select(id: string): HTMLSelectElement {
    return this.element(id) as HTMLSelectElement;
  }

  private element(id: string): HTMLElement {
    const found = this.root.querySelector(`#${id}`);
    if (found === null) throw new Error(`missing element #${id}`);
    return found as HTMLElement;
  }
}
