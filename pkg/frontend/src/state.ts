// Session state and its transitions. Pure data + reducer-style updates so
// the tests can replay an action log and land on the same state. Network
// responses carry the sequence number of the action that fired them;
// anything stale is dropped.

import type { MapPayload, RetrieveResult, Variant } from "./api";

export interface SessionState {
  queryId: string | null;
  refId: string | null;
  variant: Variant;
  withBias: boolean;
  opacity: number;
  // last overall maps (image resolution) for both panes
  overallQuery: MapPayload | null;
  overallRef: MapPayload | null;
  similarity: { S: number; D: number } | null;
  // point interaction
  clickedPoint: { x: number; y: number; side: "query" | "ref" } | null;
  clickedCell: [number, number] | null;
  pointMap: MapPayload | null; // shown on the opposite image
  // interactive retrieval
  roi: Array<[number, number]>;
  ranking: RetrieveResult[];
  // request bookkeeping: one in-flight sequence per action type
  seq: { explain: number; point: number; retrieve: number };
  error: string | null;
}

export function initialState(): SessionState {
  return {
    queryId: null,
    refId: null,
    variant: "overall_decomp",
    withBias: false,
    opacity: 0.6,
    overallQuery: null,
    overallRef: null,
    similarity: null,
    clickedPoint: null,
    clickedCell: null,
    pointMap: null,
    roi: [],
    ranking: [],
    seq: { explain: 0, point: 0, retrieve: 0 },
    error: null,
  };
}

function clearPoint(state: SessionState): void {
  state.clickedPoint = null;
  state.clickedCell = null;
  state.pointMap = null;
}

export function selectPair(state: SessionState, queryId: string, refId: string): number {
  state.queryId = queryId;
  state.refId = refId;
  clearPoint(state);
  state.roi = [];
  state.ranking = [];
  state.overallQuery = null;
  state.overallRef = null;
  state.similarity = null;
  return ++state.seq.explain;
}

// Switching variants invalidates overlays derived from the previous one.
export function selectVariant(state: SessionState, variant: Variant, withBias: boolean): number {
  state.variant = variant;
  state.withBias = withBias;
  clearPoint(state);
  state.overallQuery = null;
  state.overallRef = null;
  return ++state.seq.explain;
}

export function applyExplain(
  state: SessionState,
  seq: number,
  resp: { S: number; D: number; overall_query: MapPayload; overall_ref: MapPayload },
): boolean {
  if (seq !== state.seq.explain) return false; // superseded
  state.similarity = { S: resp.S, D: resp.D };
  state.overallQuery = resp.overall_query;
  state.overallRef = resp.overall_ref;
  return true;
}

// A click inside either pane. Returns the sequence number for the /api/point
// call, or null when the click must be ignored (outside image bounds).
export function clickPoint(
  state: SessionState,
  x: number,
  y: number,
  side: "query" | "ref",
  imageW: number,
  imageH: number,
): number | null {
  if (x < 0 || y < 0 || x >= imageW || y >= imageH) return null;
  state.clickedPoint = { x, y, side };
  return ++state.seq.point;
}

export function applyPoint(
  state: SessionState,
  seq: number,
  resp: { map: MapPayload; clicked_feature_cell: [number, number] },
): boolean {
  if (seq !== state.seq.point) return false;
  state.pointMap = resp.map;
  state.clickedCell = resp.clicked_feature_cell;
  return true;
}

export function toggleRoiPixel(state: SessionState, x: number, y: number): void {
  const at = state.roi.findIndex(([px, py]) => px === x && py === y);
  if (at >= 0) state.roi.splice(at, 1);
  else state.roi.push([x, y]);
}

// k must be a positive integer; an empty RoI means "prompt the user", both
// rejected client-side with no API call.
export function startRetrieve(state: SessionState, k: number): number | null {
  if (!Number.isInteger(k) || k < 1) return null;
  if (state.roi.length === 0) return null;
  return ++state.seq.retrieve;
}

export function applyRetrieve(state: SessionState, seq: number, results: RetrieveResult[]): boolean {
  if (seq !== state.seq.retrieve) return false;
  state.ranking = results;
  return true;
}

// Clicking a retrieval result promotes it to the reference image so the
// next inspection continues from it.
export function promoteResult(state: SessionState, id: string): number {
  state.refId = id;
  clearPoint(state);
  state.overallQuery = null;
  state.overallRef = null;
  state.similarity = null;
  return ++state.seq.explain;
}
