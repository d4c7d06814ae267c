// Heatmap rendering as pure pixel math over RGBA buffers. No DOM or canvas
// here so the golden-image tests run in node; app.ts moves the buffers in
// and out of real canvases.

import type { MapPayload } from "./api";

export interface Rgba {
  width: number;
  height: number;
  data: Uint8ClampedArray<ArrayBuffer>; // RGBA, row-major
}

export function makeRgba(width: number, height: number): Rgba {
  return { width, height, data: new Uint8ClampedArray(width * height * 4) };
}

// Diverging colormap for signed maps: blue (negative) -> white -> red
// (positive), scaled by the larger absolute extreme.
function divergingColor(t: number): [number, number, number] {
  const clamped = Math.max(-1, Math.min(1, t));
  if (clamped >= 0) {
    const u = clamped;
    return [255, Math.round(255 * (1 - u)), Math.round(255 * (1 - u))];
  }
  const u = -clamped;
  return [Math.round(255 * (1 - u)), Math.round(255 * (1 - u)), 255];
}

// Sequential colormap for clipped maps: black -> yellow -> red-ish warm.
function sequentialColor(t: number): [number, number, number] {
  const u = Math.max(0, Math.min(1, t));
  return [Math.round(255 * u), Math.round(180 * u * u), 0];
}

// Corner-aligned bilinear sample of a row-major map at fractional (r, c),
// matching the server's upsampling convention.
export function sampleMap(map: MapPayload, r: number, c: number): number {
  const { h, w, values } = map;
  const r0 = Math.min(Math.floor(r), h - 1);
  const c0 = Math.min(Math.floor(c), w - 1);
  const r1 = Math.min(r0 + 1, h - 1);
  const c1 = Math.min(c0 + 1, w - 1);
  const fr = r - r0;
  const fc = c - c0;
  const top = values[r0 * w + c0] * (1 - fc) + values[r0 * w + c1] * fc;
  const bot = values[r1 * w + c0] * (1 - fc) + values[r1 * w + c1] * fc;
  return top * (1 - fr) + bot * fr;
}

export interface OverlayOptions {
  signed: boolean; // diverging palette, negatives visible
  opacity: number; // 0..1 blend factor at full activation
}

// Composite an activation map over an image. The map is resized
// client-side (corner-aligned bilinear) when its dims differ from the
// image's. Zero activation leaves pixels untouched; blend strength scales
// with |activation| so weak evidence stays transparent.
export function overlayHeatmap(image: Rgba, map: MapPayload, opts: OverlayOptions): Rgba {
  if (map.values.length !== map.h * map.w) {
    throw new Error(`map payload corrupt: ${map.values.length} values for ${map.h}x${map.w}`);
  }
  if (map.h < 1 || map.w < 1 || image.width < 1 || image.height < 1) {
    throw new Error("empty image or map");
  }
  const out = makeRgba(image.width, image.height);
  const peak = opts.signed
    ? Math.max(Math.abs(map.min), Math.abs(map.max))
    : Math.max(map.max, 0);
  const rScale = image.height === 1 ? 0 : (map.h - 1) / (image.height - 1);
  const cScale = image.width === 1 ? 0 : (map.w - 1) / (image.width - 1);
  for (let y = 0; y < image.height; y++) {
    for (let x = 0; x < image.width; x++) {
      const i = (y * image.width + x) * 4;
      let v = peak > 0 ? sampleMap(map, y * rScale, x * cScale) / peak : 0;
      if (!opts.signed) v = Math.max(0, v);
      const strength = Math.min(1, Math.abs(v)) * opts.opacity;
      const [hr, hg, hb] = opts.signed ? divergingColor(v) : sequentialColor(v);
      out.data[i] = Math.round(image.data[i] * (1 - strength) + hr * strength);
      out.data[i + 1] = Math.round(image.data[i + 1] * (1 - strength) + hg * strength);
      out.data[i + 2] = Math.round(image.data[i + 2] * (1 - strength) + hb * strength);
      out.data[i + 3] = 255;
    }
  }
  return out;
}

// Outline the feature cell a click resolved to (for the clicked image).
// Cell (i, j) of an m x n grid anchors at corner-aligned pixel positions.
export function cellRect(
  cell: [number, number],
  grid: [number, number],
  width: number,
  height: number,
): { x: number; y: number; w: number; h: number } {
  const [i, j] = cell;
  const [m, n] = grid;
  const cellH = height / m;
  const cellW = width / n;
  return {
    x: Math.round(j * cellW),
    y: Math.round(i * cellH),
    w: Math.max(1, Math.round(cellW)),
    h: Math.max(1, Math.round(cellH)),
  };
}
