// DOM wiring for the explorer: gallery, sliders, composition stack,
// before/after comparator, strip viewer, and the upload-and-invert flow.
// Every gesture maps to exactly one service request; each preview shows the
// sidecar the service returned so any session can be replayed via the CLI.

import { ApiClient, DirectionSummary, EditResponse, ServiceError } from "./api.js";
import { makeRenderScheduler } from "./debounce.js";
import {
  Action,
  SessionState,
  WINDOW_PRESETS,
  WindowPreset,
  activeWindow,
  baselineRequest,
  buildRequest,
  initialState,
  reduce,
} from "./state.js";

type LiveSlider = { direction: number; scale: number } | undefined;

export class ExplorerApp {
  state: SessionState = initialState();
  directions: DirectionSummary[] = [];
  private liveSlider: LiveSlider;

  private readonly scheduler = makeRenderScheduler<
    { state: SessionState; liveSlider: LiveSlider },
    { preview: EditResponse; baseline: EditResponse }
  >(
    async ({ state, liveSlider }, signal) => {
      const preview = await this.api.submitEdit(buildRequest(state, liveSlider), signal);
      const baseline = await this.api.submitEdit(baselineRequest(state), signal);
      return { preview, baseline };
    },
    (_args, { preview, baseline }) => {
      this.dispatch({
        type: "preview-rendered",
        imageUrl: this.api.imageUrl(preview.image_url),
        sidecar: preview.sidecar,
      });
      this.dispatch({ type: "baseline-rendered", imageUrl: this.api.imageUrl(baseline.image_url) });
      this.setBanner(null);
    },
    (err) => {
      if (err instanceof ServiceError) {
        this.setBanner(`service error: ${JSON.stringify(err.detail)}`);
      } else {
        this.dispatch({ type: "service-status", up: false });
        this.setBanner("service unreachable; previews are stale");
      }
    },
  );

  constructor(
    readonly api: ApiClient,
    readonly rootEl: HTMLElement,
  ) {}

  dispatch(action: Action) {
    this.state = reduce(this.state, action);
    this.render();
  }

  async start() {
    try {
      await this.api.health();
      this.directions = await this.api.listDirections();
      this.dispatch({ type: "service-status", up: true });
    } catch {
      this.dispatch({ type: "service-status", up: false });
      this.setBanner("service unreachable; start it with `noisedirs serve`");
      return;
    }
    this.render();
    this.requestPreview();
  }

  requestPreview() {
    this.scheduler.submit({ state: this.state, liveSlider: this.liveSlider });
    this.render();
  }

  onSlider(direction: number, scale: number) {
    this.dispatch({ type: "set-slider", direction, scale });
    this.liveSlider = scale === 0 ? undefined : { direction, scale };
    this.requestPreview();
  }

  commitSlider(direction: number) {
    const scale = this.state.sliders[direction] ?? 0;
    if (scale !== 0) {
      this.dispatch({ type: "push-edit", direction, scale });
      this.dispatch({ type: "set-slider", direction, scale: 0 });
    }
    this.liveSlider = undefined;
    this.requestPreview();
  }

  async onUpload(file: File) {
    try {
      const imageId = await this.api.upload(file, file.name);
      this.dispatch({ type: "set-upload", imageId });
      this.requestPreview();
    } catch (err) {
      this.setBanner(`upload failed: ${err}`);
    }
  }

  setBanner(text: string | null) {
    const banner = this.rootEl.querySelector<HTMLElement>("#banner");
    if (!banner) return;
    banner.textContent = text ?? "";
    banner.style.display = text ? "block" : "none";
  }

  render() {
    const el = (id: string) => this.rootEl.querySelector<HTMLElement>(`#${id}`)!;

    // gallery
    const gallery = el("gallery");
    gallery.replaceChildren(
      ...this.directions.map((d) => {
        const card = document.createElement("div");
        card.className = "card";
        const title = document.createElement("h4");
        title.textContent = d.label ? `#${d.id} ${d.label}` : `direction ${d.id}`;
        card.appendChild(title);
        const meta = document.createElement("small");
        meta.textContent = `consistency ${d.self_consistency.toFixed(2)}`;
        card.appendChild(meta);
        const strip = document.createElement("div");
        strip.className = "strip";
        d.strip_scales.forEach((_scale, i) => {
          const img = document.createElement("img");
          img.loading = "lazy";
          img.src = this.api.imageUrl(`strip-d${d.id}-s${i}`);
          img.width = 48;
          strip.appendChild(img);
        });
        card.appendChild(strip);

        const slider = document.createElement("input");
        slider.type = "range";
        slider.min = "-2";
        slider.max = "2";
        slider.step = "0.1";
        slider.value = String(this.state.sliders[d.id] ?? 0);
        slider.addEventListener("input", () => this.onSlider(d.id, Number(slider.value)));
        const commit = document.createElement("button");
        commit.textContent = "add to stack";
        commit.addEventListener("click", () => this.commitSlider(d.id));
        card.appendChild(slider);
        card.appendChild(commit);
        return card;
      }),
    );

    // composition stack
    const stack = el("stack");
    stack.replaceChildren(
      ...this.state.stack.map((entry, i) => {
        const row = document.createElement("div");
        row.className = "stack-row";
        const toggle = document.createElement("input");
        toggle.type = "checkbox";
        toggle.checked = entry.enabled;
        toggle.addEventListener("change", () => {
          this.dispatch({ type: "toggle-edit", index: i });
          this.requestPreview();
        });
        const label = document.createElement("span");
        label.textContent = `d${entry.direction} @ ${entry.scale.toFixed(1)} [${entry.window[0]}, ${entry.window[1]}]`;
        const remove = document.createElement("button");
        remove.textContent = "x";
        remove.addEventListener("click", () => {
          this.dispatch({ type: "remove-edit", index: i });
          this.requestPreview();
        });
        row.append(toggle, label, remove);
        return row;
      }),
    );

    // before/after comparator
    const before = el("before") as HTMLImageElement;
    const after = el("after") as HTMLImageElement;
    if (this.state.baselineUrl) before.src = this.state.baselineUrl;
    if (this.state.lastPreview) after.src = this.state.lastPreview.imageUrl;
    el("sidecar").textContent = this.state.lastPreview
      ? JSON.stringify(this.state.lastPreview.sidecar, null, 2)
      : "";

    const pending = el("pending");
    pending.style.display = this.scheduler.inFlight() ? "inline" : "none";
  }

  wireControls() {
    const el = (id: string) => this.rootEl.querySelector<HTMLElement>(`#${id}`)!;
    const seedInput = el("seed") as HTMLInputElement;
    seedInput.addEventListener("change", () => {
      this.dispatch({ type: "set-seed", seed: Number(seedInput.value) });
      this.requestPreview();
    });
    const presetSelect = el("preset") as HTMLSelectElement;
    presetSelect.addEventListener("change", () => {
      const value = presetSelect.value as WindowPreset;
      if (value !== "custom") {
        this.dispatch({ type: "set-preset", preset: value });
      }
      el("custom-window").style.display = value === "custom" ? "inline" : "none";
      this.requestPreview();
    });
    const hi = el("win-hi") as HTMLInputElement;
    const lo = el("win-lo") as HTMLInputElement;
    const applyCustom = () => {
      this.dispatch({
        type: "set-custom-window",
        window: [Number(hi.value), Number(lo.value)],
      });
      this.requestPreview();
    };
    hi.addEventListener("change", applyCustom);
    lo.addEventListener("change", applyCustom);
    const upload = el("upload") as HTMLInputElement;
    upload.addEventListener("change", () => {
      if (upload.files && upload.files[0]) this.onUpload(upload.files[0]);
    });
  }
}

export function mount(root: HTMLElement, baseUrl = ""): ExplorerApp {
  const app = new ExplorerApp(new ApiClient(baseUrl), root);
  app.wireControls();
  void app.start();
  return app;
}

declare global {
  interface Window {
    explorer?: ExplorerApp;
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  window.explorer = mount(document.getElementById("app")!);
}

export { WINDOW_PRESETS, activeWindow };
