/** Fixed blue -> red ramp for per-vertex weight heatmaps. */

export interface Rgb {
  r: number;
  g: number;
  b: number;
}

/** Map t in [0, 1] through blue -> cyan -> yellow -> red. */
export function heatColor(t: number): Rgb {
  const x = Math.min(1, Math.max(0, t));
  if (x < 1 / 3) {
    const u = x * 3;
    return { r: 0, g: Math.round(255 * u), b: 255 };
  }
  if (x < 2 / 3) {
    const u = (x - 1 / 3) * 3;
    return { r: Math.round(255 * u), g: 255, b: Math.round(255 * (1 - u)) };
  }
  const u = (x - 2 / 3) * 3;
  return { r: 255, g: Math.round(255 * (1 - u)), b: 0 };
}

export function cssColor(c: Rgb): string {
  return `rgb(${c.r},${c.g},${c.b})`;
}
