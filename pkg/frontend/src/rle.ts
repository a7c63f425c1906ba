/** Client-side decoder for the service's uncompressed RLE masks.
 *
 * Must agree with the backend codec bit-for-bit; both test suites check
 * the shared vector file shared/rle_test_vectors.json.
 */

import type { RLE } from "./types.js";

export class RLEDecodeError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "RLEDecodeError";
  }
}

export interface DecodedMask {
  width: number;
  height: number;
  /** Row-major flat mask, one byte per pixel (0 or 1). */
  data: Uint8Array;
}

/** Sum of the foreground (odd-indexed) runs. */
export function foregroundArea(rle: RLE): number {
  let total = 0;
  for (let i = 1; i < rle.counts.length; i += 2) {
    total += rle.counts[i] ?? 0;
  }
  return total;
}

export function decodeRLE(rle: RLE): DecodedMask {
  const [height, width] = rle.size;
  if (!Number.isInteger(width) || !Number.isInteger(height) || width < 0 || height < 0) {
    throw new RLEDecodeError(`bad mask size [${rle.size}]`);
  }
  const total = width * height;
  let sum = 0;
  for (const count of rle.counts) {
    if (!Number.isInteger(count) || count < 0) {
      throw new RLEDecodeError(`negative or fractional run length ${count}`);
    }
    sum += count;
  }
  if (sum !== total) {
    throw new RLEDecodeError(`run lengths sum to ${sum}, canvas is ${width}x${height} = ${total}`);
  }
  const data = new Uint8Array(total);
  let pos = 0; // column-major position: row = pos % height, col = (pos / height) | 0
  let value = 0;
  for (const count of rle.counts) {
    if (value === 1) {
      for (let k = 0; k < count; k++) {
        const p = pos + k;
        const col = (p / height) | 0;
        const row = p % height;
        data[row * width + col] = 1;
      }
    }
    pos += count;
    value = 1 - value;
  }
  return { width, height, data };
}

export function countPixels(mask: DecodedMask): number {
  let total = 0;
  for (let i = 0; i < mask.data.length; i++) {
    total += mask.data[i] ?? 0;
  }
  return total;
}
