// Session state: the edit stack, slider positions, source, and window preset.
// The invariant the UI maintains: the stack rendered is exactly the stack
// sent, and a slider's position is exactly the scale submitted.

import type { EditRequest, EditSpecWire } from "./api.js";

export type WindowPreset = "fine" | "coarse" | "full" | "custom";

export const WINDOW_PRESETS: Record<Exclude<WindowPreset, "custom">, [number, number]> = {
  fine: [0.5, 0.0],
  coarse: [0.9, 0.8],
  full: [1.0, 0.0],
};

export interface StackEntry {
  direction: number;
  scale: number;
  window: [number, number];
  enabled: boolean;
}

export interface SessionState {
  source: { kind: "seed"; seed: number } | { kind: "upload"; imageId: string };
  stack: StackEntry[];
  sliders: Record<number, number>;
  preset: WindowPreset;
  customWindow: [number, number];
  lastPreview: { imageUrl: string; sidecar: unknown } | null;
  baselineUrl: string | null;
  serviceUp: boolean;
}

export function initialState(): SessionState {
  return {
    source: { kind: "seed", seed: 0 },
    stack: [],
    sliders: {},
    preset: "fine",
    customWindow: [0.5, 0.0],
    lastPreview: null,
    baselineUrl: null,
    serviceUp: true,
  };
}

export function activeWindow(state: SessionState): [number, number] {
  return state.preset === "custom" ? state.customWindow : WINDOW_PRESETS[state.preset];
}

export type Action =
  | { type: "set-seed"; seed: number }
  | { type: "set-upload"; imageId: string }
  | { type: "set-slider"; direction: number; scale: number }
  | { type: "push-edit"; direction: number; scale: number }
  | { type: "remove-edit"; index: number }
  | { type: "toggle-edit"; index: number }
  | { type: "set-preset"; preset: WindowPreset }
  | { type: "set-custom-window"; window: [number, number] }
  | { type: "preview-rendered"; imageUrl: string; sidecar: unknown }
  | { type: "baseline-rendered"; imageUrl: string }
  | { type: "service-status"; up: boolean };

export function reduce(state: SessionState, action: Action): SessionState {
  switch (action.type) {
    case "set-seed":
      return { ...state, source: { kind: "seed", seed: action.seed }, baselineUrl: null };
    case "set-upload":
      return { ...state, source: { kind: "upload", imageId: action.imageId }, baselineUrl: null };
    case "set-slider":
      return { ...state, sliders: { ...state.sliders, [action.direction]: action.scale } };
    case "push-edit": {
      const entry: StackEntry = {
        direction: action.direction,
        scale: action.scale,
        window: activeWindow(state),
        enabled: true,
      };
      return { ...state, stack: [...state.stack, entry] };
    }
    case "remove-edit":
      return { ...state, stack: state.stack.filter((_, i) => i !== action.index) };
    case "toggle-edit":
      return {
        ...state,
        stack: state.stack.map((e, i) => (i === action.index ? { ...e, enabled: !e.enabled } : e)),
      };
    case "set-preset":
      return { ...state, preset: action.preset };
    case "set-custom-window":
      return { ...state, preset: "custom", customWindow: action.window };
    case "preview-rendered":
      return { ...state, lastPreview: { imageUrl: action.imageUrl, sidecar: action.sidecar } };
    case "baseline-rendered":
      return { ...state, baselineUrl: action.imageUrl };
    case "service-status":
      return { ...state, serviceUp: action.up };
  }
}

// The request built from the state is exactly what the preview shows: the
// enabled stack entries, plus the live slider direction when one is active.
export function buildRequest(
  state: SessionState,
  liveSlider?: { direction: number; scale: number },
): EditRequest {
  const edits: EditSpecWire[] = state.stack
    .filter((e) => e.enabled)
    .map((e) => ({ direction_id: e.direction, scale: e.scale, window: e.window }));
  if (liveSlider && liveSlider.scale !== 0) {
    edits.push({
      direction_id: liveSlider.direction,
      scale: liveSlider.scale,
      window: activeWindow(state),
    });
  }
  const source =
    state.source.kind === "seed"
      ? { seed: state.source.seed, image_id: null }
      : { seed: null, image_id: state.source.imageId };
  return { source, edits, return_metrics: false };
}

export function baselineRequest(state: SessionState): EditRequest {
  return { ...buildRequest(state), edits: [] };
}
