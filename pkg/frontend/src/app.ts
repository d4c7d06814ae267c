// DOM wiring: two image panes with heatmap overlays, click-to-inspect, an
// RoI list, and the retrieval strip. All math lives in heatmap.ts/state.ts;
// this file only moves pixels between <canvas> elements and the pure
// functions, and fires at most one API call per user action.

import { ApiClient, type ImageInfo, type MapPayload } from "./api";
import { cellRect, overlayHeatmap, type Rgba } from "./heatmap";
import {
  applyExplain,
  applyPoint,
  applyRetrieve,
  clickPoint,
  initialState,
  promoteResult,
  selectPair,
  selectVariant,
  startRetrieve,
  toggleRoiPixel,
  type SessionState,
} from "./state";

const state: SessionState = initialState();
const api = new ApiClient("");
let images: ImageInfo[] = [];
const bitmaps = new Map<string, Rgba>();

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function toast(message: string): void {
  const banner = el<HTMLDivElement>("banner");
  banner.textContent = message;
  banner.style.display = "block";
  window.setTimeout(() => (banner.style.display = "none"), 2500);
}

async function loadBitmap(id: string): Promise<Rgba> {
  const cached = bitmaps.get(id);
  if (cached) return cached;
  const info = images.find((i) => i.id === id);
  if (!info) throw new Error(`unknown image ${id}`);
  const img = new Image();
  img.src = api.imageUrl(id);
  await img.decode();
  const scratch = document.createElement("canvas");
  scratch.width = info.w;
  scratch.height = info.h;
  const ctx = scratch.getContext("2d")!;
  ctx.drawImage(img, 0, 0, info.w, info.h);
  const data = ctx.getImageData(0, 0, info.w, info.h);
  const rgba: Rgba = { width: info.w, height: info.h, data: data.data };
  bitmaps.set(id, rgba);
  return rgba;
}

function paint(canvasId: string, rgba: Rgba, outline?: { x: number; y: number; w: number; h: number }) {
  const canvas = el<HTMLCanvasElement>(canvasId);
  canvas.width = rgba.width;
  canvas.height = rgba.height;
  const ctx = canvas.getContext("2d")!;
  ctx.putImageData(new ImageData(rgba.data, rgba.width, rgba.height), 0, 0);
  if (outline) {
    ctx.strokeStyle = "#00e0ff";
    ctx.lineWidth = 1;
    ctx.strokeRect(outline.x + 0.5, outline.y + 0.5, outline.w - 1, outline.h - 1);
  }
  for (const [x, y] of state.roi) {
    if (canvasId === "query-canvas") {
      ctx.fillStyle = "rgba(0,224,255,0.9)";
      ctx.fillRect(x - 1, y - 1, 3, 3);
    }
  }
}

async function repaint(): Promise<void> {
  if (!state.queryId || !state.refId) return;
  const signed = el<HTMLInputElement>("signed").checked;
  const opacity = Number(el<HTMLInputElement>("opacity").value) / 100;
  state.opacity = opacity;
  const queryImg = await loadBitmap(state.queryId);
  const refImg = await loadBitmap(state.refId);

  try {
    let queryOut = queryImg;
    let refOut = refImg;
    if (state.overallQuery) {
      queryOut = overlayHeatmap(queryImg, state.overallQuery, { signed, opacity });
    }
    // the point map replaces the overall overlay on the opposite image
    const pointSide = state.clickedPoint?.side;
    if (state.pointMap && pointSide === "query") {
      refOut = overlayHeatmap(refImg, state.pointMap, { signed, opacity });
    } else if (state.pointMap && pointSide === "ref") {
      queryOut = overlayHeatmap(queryImg, state.pointMap, { signed, opacity });
    } else if (state.overallRef) {
      refOut = overlayHeatmap(refImg, state.overallRef, { signed, opacity });
    }

    paint("query-canvas", queryOut, outlineFor("query", queryImg));
    paint("ref-canvas", refOut, outlineFor("ref", refImg));
  } catch (err) {
    toast(`render failed: ${(err as Error).message}`);
  }

  el<HTMLDivElement>("similarity").textContent = state.similarity
    ? `S = ${state.similarity.S.toFixed(4)}   D = ${state.similarity.D.toFixed(4)}`
    : "";
}

// Outline the clicked feature cell. The point map's dims are the opposite
// image's feature grid; with one model per workspace every image shares
// that grid, so it also locates the clicked cell.
function outlineFor(side: "query" | "ref", img: Rgba) {
  if (!state.clickedCell || !state.clickedPoint || state.clickedPoint.side !== side) {
    return undefined;
  }
  const map: MapPayload | null = state.pointMap;
  if (!map) return undefined;
  return cellRect(state.clickedCell, [map.h, map.w], img.width, img.height);
}

async function runExplain(seq: number): Promise<void> {
  if (!state.queryId || !state.refId) return;
  try {
    const resp = await api.explain(state.queryId, state.refId, state.variant, state.withBias);
    if (applyExplain(state, seq, resp)) await repaint();
  } catch (err) {
    toast((err as Error).message);
  }
}

function canvasPixel(canvas: HTMLCanvasElement, ev: MouseEvent): [number, number] {
  const rect = canvas.getBoundingClientRect();
  const x = Math.floor(((ev.clientX - rect.left) / rect.width) * canvas.width);
  const y = Math.floor(((ev.clientY - rect.top) / rect.height) * canvas.height);
  return [x, y];
}

async function onPaneClick(side: "query" | "ref", ev: MouseEvent): Promise<void> {
  if (!state.queryId || !state.refId) return;
  const canvas = el<HTMLCanvasElement>(side === "query" ? "query-canvas" : "ref-canvas");
  const [x, y] = canvasPixel(canvas, ev);
  const info = images.find((i) => i.id === (side === "query" ? state.queryId : state.refId))!;

  if (el<HTMLInputElement>("roi-mode").checked && side === "query") {
    if (x < 0 || y < 0 || x >= info.w || y >= info.h) return;
    toggleRoiPixel(state, x, y);
    await repaint();
    return;
  }

  const seq = clickPoint(state, x, y, side, info.w, info.h);
  if (seq === null) {
    toast("click outside image ignored");
    return;
  }
  try {
    const resp = await api.point(state.queryId, state.refId, x, y, side);
    if (applyPoint(state, seq, resp)) await repaint();
  } catch (err) {
    toast((err as Error).message);
  }
}

async function onRetrieve(): Promise<void> {
  if (!state.queryId) return;
  const k = Number(el<HTMLInputElement>("topk").value);
  const seq = startRetrieve(state, k);
  if (seq === null) {
    toast(state.roi.length === 0 ? "click some RoI pixels first" : "k must be >= 1");
    return;
  }
  try {
    const results = await api.retrieve(state.queryId, state.roi, k);
    if (!applyRetrieve(state, seq, results)) return;
    const strip = el<HTMLDivElement>("results");
    strip.textContent = "";
    for (const r of results) {
      const card = document.createElement("figure");
      const img = document.createElement("img");
      img.src = r.image;
      img.title = `${r.id}: ${r.similarity.toFixed(4)}`;
      img.addEventListener("click", () => {
        const eseq = promoteResult(state, r.id);
        el<HTMLSelectElement>("ref-select").value = r.id;
        void runExplain(eseq);
      });
      const cap = document.createElement("figcaption");
      cap.textContent = `${r.id} (${r.similarity.toFixed(3)})`;
      card.append(img, cap);
      strip.append(card);
    }
  } catch (err) {
    toast((err as Error).message);
  }
}

export async function boot(): Promise<void> {
  images = await api.listImages();
  const querySel = el<HTMLSelectElement>("query-select");
  const refSel = el<HTMLSelectElement>("ref-select");
  for (const sel of [querySel, refSel]) {
    sel.textContent = "";
    for (const info of images) {
      const opt = document.createElement("option");
      opt.value = info.id;
      opt.textContent = info.id;
      sel.append(opt);
    }
  }
  if (images.length > 1) refSel.selectedIndex = 1;

  const firePair = () => {
    const seq = selectPair(state, querySel.value, refSel.value);
    void runExplain(seq);
  };
  querySel.addEventListener("change", firePair);
  refSel.addEventListener("change", firePair);

  el<HTMLSelectElement>("variant-select").addEventListener("change", (ev) => {
    const value = (ev.target as HTMLSelectElement).value;
    const withBias = value === "overall_decomp_bias";
    const variant = (withBias ? "overall_decomp" : value) as SessionState["variant"];
    const seq = selectVariant(state, variant, withBias);
    void runExplain(seq);
  });
  el<HTMLInputElement>("opacity").addEventListener("input", () => void repaint());
  el<HTMLInputElement>("signed").addEventListener("change", () => void repaint());
  el<HTMLCanvasElement>("query-canvas").addEventListener("click", (ev) => void onPaneClick("query", ev));
  el<HTMLCanvasElement>("ref-canvas").addEventListener("click", (ev) => void onPaneClick("ref", ev));
  el<HTMLButtonElement>("retrieve-btn").addEventListener("click", () => void onRetrieve());
  el<HTMLButtonElement>("clear-roi").addEventListener("click", () => {
    state.roi = [];
    void repaint();
  });

  firePair();
}
