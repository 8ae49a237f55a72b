/**
 * Mask-overlay compositing on raw RGBA buffers.
 *
 * The mask pixels come straight from the server PNG; this blends them over
 * the base layer for display only - mask content is never modified.
 */

export interface Rgba {
  data: Uint8ClampedArray; // RGBA, length = 4 * width * height
  width: number;
  height: number;
}

export const OVERLAY_COLOR: [number, number, number] = [64, 220, 120];

/**
 * Blend the overlay color into `base` wherever the (grayscale) mask is on,
 * weighted by `opacity`. Returns a new buffer; inputs are untouched.
 */
export function compositeMask(base: Rgba, mask: Rgba, opacity: number): Rgba {
  if (base.width !== mask.width || base.height !== mask.height) {
    throw new Error(
      `overlay dims ${mask.width}x${mask.height} != base ` +
      `${base.width}x${base.height}`,
    );
  }
  const a = Math.min(1, Math.max(0, opacity));
  const out = new Uint8ClampedArray(base.data);
  const [cr, cg, cb] = OVERLAY_COLOR;
  for (let i = 0; i < out.length; i += 4) {
    const on = mask.data[i] > 127 ? 1 : 0;
    if (!on) continue;
    out[i] = out[i] * (1 - a) + cr * a;
    out[i + 1] = out[i + 1] * (1 - a) + cg * a;
    out[i + 2] = out[i + 2] * (1 - a) + cb * a;
  }
  return { data: out, width: base.width, height: base.height };
}
