/** Overlay state and its pure transitions.
 *
 * Everything the view shows derives from (payload, OverlayState) alone;
 * transitions return fresh state objects so renders are reproducible.
 */

import type { Payload, PredictionDoc, ReviewDecision } from "./types.js";

export const ALL_CLASSES = [
  "window",
  "door",
  "fence",
  "tree",
  "bin",
  "road",
  "other",
] as const;

export type ClassName = (typeof ALL_CLASSES)[number];

export interface OverlayState {
  visibleClasses: ReadonlySet<string>;
  threshold: number;
  accepted: readonly boolean[];
  selected: number | null;
}

export function initialState(payload: Payload): OverlayState {
  return {
    visibleClasses: new Set<string>(ALL_CLASSES),
    threshold: 0,
    accepted: payload.predictions.map((p) => p.accepted),
    selected: null,
  };
}

export function toggleClass(state: OverlayState, name: string): OverlayState {
  if (!(ALL_CLASSES as readonly string[]).includes(name)) {
    return state;
  }
  const visible = new Set(state.visibleClasses);
  if (visible.has(name)) {
    visible.delete(name);
  } else {
    visible.add(name);
  }
  return { ...state, visibleClasses: visible };
}

export function setThreshold(state: OverlayState, threshold: number): OverlayState {
  const clamped = Math.min(1, Math.max(0, threshold));
  return { ...state, threshold: clamped };
}

export function setAccepted(state: OverlayState, index: number, accepted: boolean): OverlayState {
  if (index < 0 || index >= state.accepted.length) {
    return state;
  }
  const flags = state.accepted.slice();
  flags[index] = accepted;
  return { ...state, accepted: flags };
}

export function select(state: OverlayState, index: number | null): OverlayState {
  if (index !== null && (index < 0 || index >= state.accepted.length)) {
    return state;
  }
  return { ...state, selected: index };
}

export function isVisible(prediction: PredictionDoc, state: OverlayState): boolean {
  return (
    state.visibleClasses.has(prediction.category) && prediction.score >= state.threshold
  );
}

export function visiblePredictions(payload: Payload, state: OverlayState): PredictionDoc[] {
  return payload.predictions.filter((p) => isVisible(p, state));
}

/** Visible-instance count per class, for the toggle badges. */
export function classCounts(payload: Payload, state: OverlayState): Record<string, number> {
  const counts: Record<string, number> = {};
  for (const name of ALL_CLASSES) {
    counts[name] = 0;
  }
  for (const p of visiblePredictions(payload, state)) {
    counts[p.category] = (counts[p.category] ?? 0) + 1;
  }
  return counts;
}

export function decisions(state: OverlayState): ReviewDecision[] {
  return state.accepted.map((accepted, prediction_index) => ({
    prediction_index,
    accepted,
  }));
}
