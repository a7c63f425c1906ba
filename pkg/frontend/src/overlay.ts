/** Overlay construction: payload + state -> drawable instructions.
 *
 * Pure and canvas-free so it is testable; main.ts paints the result.
 * Warm hues mark heat-loss sources, cool hues obstructive objects.
 * The UI never mutates pixels; artifacts always come from the service.
 */

import { decodeRLE, RLEDecodeError, type DecodedMask } from "./rle.js";
import { isVisible, type OverlayState } from "./state.js";
import type { Payload, PredictionDoc } from "./types.js";

export type RGB = [number, number, number];

export const CLASS_COLORS: Record<string, RGB> = {
  window: [255, 99, 71], // warm family: heat-loss sources
  door: [255, 170, 40],
  fence: [80, 160, 255], // cool family: obstructive objects
  tree: [60, 200, 160],
  bin: [140, 120, 255],
  road: [90, 210, 230],
  other: [120, 140, 200],
};

export const MASK_ALPHA = 0.45;

export interface MaskInstruction {
  kind: "mask";
  predictionIndex: number;
  category: string;
  role: string;
  color: RGB;
  mask: DecodedMask;
  accepted: boolean;
  selected: boolean;
}

export interface BoxInstruction {
  kind: "box";
  predictionIndex: number;
  bbox: [number, number, number, number];
  color: RGB;
  label: string;
  selected: boolean;
}

export interface ErrorBadgeInstruction {
  kind: "error";
  predictionIndex: number;
  bbox: [number, number, number, number];
  message: string;
}

export type OverlayInstruction = MaskInstruction | BoxInstruction | ErrorBadgeInstruction;

function colorFor(prediction: PredictionDoc): RGB {
  return CLASS_COLORS[prediction.category] ?? [200, 200, 200];
}

/** Build the draw list for every visible prediction.
 *
 * A mask that fails to decode yields an error badge for that instance
 * only; all other instances still render.
 */
export function buildOverlay(payload: Payload, state: OverlayState): OverlayInstruction[] {
  const instructions: OverlayInstruction[] = [];
  for (const prediction of payload.predictions) {
    if (!isVisible(prediction, state)) {
      continue;
    }
    const selected = state.selected === prediction.index;
    const color = colorFor(prediction);
    if (prediction.mask !== null) {
      try {
        instructions.push({
          kind: "mask",
          predictionIndex: prediction.index,
          category: prediction.category,
          role: prediction.role,
          color,
          mask: decodeRLE(prediction.mask),
          accepted: state.accepted[prediction.index] ?? true,
          selected,
        });
      } catch (err) {
        if (!(err instanceof RLEDecodeError)) {
          throw err;
        }
        instructions.push({
          kind: "error",
          predictionIndex: prediction.index,
          bbox: prediction.bbox,
          message: err.message,
        });
      }
    }
    instructions.push({
      kind: "box",
      predictionIndex: prediction.index,
      bbox: prediction.bbox,
      color,
      label: `${prediction.category} ${(100 * prediction.score).toFixed(0)}%`,
      selected,
    });
  }
  return instructions;
}

/** RGBA pixel buffer for one mask, ready for ImageData. Rejected
 * instances render dimmed ("kept in image" for obstructive ones). */
export function maskPixels(instruction: MaskInstruction, alpha: number = MASK_ALPHA) {
  const { mask, color, accepted } = instruction;
  const out = new Uint8ClampedArray(mask.width * mask.height * 4);
  const a = Math.round(255 * (accepted ? alpha : alpha * 0.35));
  for (let i = 0; i < mask.data.length; i++) {
    if (mask.data[i]) {
      const o = i * 4;
      out[o] = color[0];
      out[o + 1] = color[1];
      out[o + 2] = color[2];
      out[o + 3] = a;
    }
  }
  return out;
}
