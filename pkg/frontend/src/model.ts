/** Pure view-model for the search console.
 *
 * Everything here is a plain function of (API responses, UI state): the DOM
 * layer in app.ts only paints what these functions return. Wire boxes are
 * integer [x, y, w, h] in original page pixels throughout.
 */

export type WireBox = [number, number, number, number];

export interface Hit {
  page_id: string;
  box: WireBox;
  similarity: number;
  rank: number;
}

export interface PageInfo {
  page_id: string;
  width: number;
  height: number;
}

export type Query =
  | { kind: "qbs"; text: string }
  | { kind: "qbe"; page_id: string; box: WireBox };

export interface QbeBody {
  page_id: string;
  box: WireBox;
  k: number;
}

// -- similarity color -------------------------------------------------------

const clamp01 = (v: number) => Math.min(1, Math.max(0, v));

/** Hue in degrees: 0 (red) at similarity 0, 120 (green) at 1, clamped. */
export function hueOf(similarity: number): number {
  return 120 * clamp01(similarity);
}

export function similarityColor(similarity: number): string {
  return `hsl(${hueOf(similarity).toFixed(1)}, 72%, 42%)`;
}

// -- hit views --------------------------------------------------------------

export interface HitView {
  page_id: string;
  box: WireBox;
  similarity: number;
  rank: number;
  color: string;
  /** Region to cut for the result thumbnail: the hit box plus context,
   * clamped to the page when its dimensions are known. */
  crop: WireBox;
}

const THUMB_PAD = 6;

export function toHitViews(hits: Hit[], pages?: Map<string, PageInfo>): HitView[] {
  return hits.map((h) => {
    const [x, y, w, h0] = h.box;
    let cx = x - THUMB_PAD;
    let cy = y - THUMB_PAD;
    let cw = w + 2 * THUMB_PAD;
    let ch = h0 + 2 * THUMB_PAD;
    const page = pages?.get(h.page_id);
    if (page) {
      cx = Math.max(0, cx);
      cy = Math.max(0, cy);
      cw = Math.min(cw, page.width - cx);
      ch = Math.min(ch, page.height - cy);
    }
    return {
      page_id: h.page_id,
      box: h.box,
      similarity: h.similarity,
      rank: h.rank,
      color: similarityColor(h.similarity),
      crop: [cx, cy, cw, ch],
    };
  });
}

// -- query gating -----------------------------------------------------------

export function shouldSearch(text: string): boolean {
  return text.trim().length > 0;
}

// -- drawn-box validation ---------------------------------------------------

export const MIN_DRAWN_SIDE = 4;

export type BoxValidation =
  | { ok: true; box: WireBox }
  | { ok: false; message: string };

/** Reject degenerate user-drawn rectangles before they reach the server. */
export function validateDrawnBox(
  x: number,
  y: number,
  w: number,
  h: number,
): BoxValidation {
  const box: WireBox = [Math.round(x), Math.round(y), Math.round(w), Math.round(h)];
  if (box[2] < MIN_DRAWN_SIDE || box[3] < MIN_DRAWN_SIDE) {
    return {
      ok: false,
      message: `drawn box must be at least ${MIN_DRAWN_SIDE}x${MIN_DRAWN_SIDE} px at image scale`,
    };
  }
  return { ok: true, box };
}

/** The documented POST body for a query-by-example request. */
export function qbeBody(page_id: string, box: WireBox, k: number): QbeBody {
  return { page_id, box: [...box] as WireBox, k };
}

// -- application state ------------------------------------------------------

export interface Breadcrumb {
  query: Query;
  hits: Hit[];
}

export interface AppState {
  query: Query | null;
  hits: Hit[];
  /** Token of the request whose results are awaited; stale responses carry
   * older tokens and are ignored (latest wins). */
  pendingToken: number | null;
  error: string | null;
  breadcrumb: Breadcrumb[];
  selectedRank: number | null;
}

export function initialState(): AppState {
  return {
    query: null,
    hits: [],
    pendingToken: null,
    error: null,
    breadcrumb: [],
    selectedRank: null,
  };
}

export function beginSearch(state: AppState, query: Query, token: number): AppState {
  return { ...state, query, pendingToken: token, error: null };
}

export function applyResults(state: AppState, token: number, hits: Hit[]): AppState {
  if (state.pendingToken !== token) return state; // stale response
  return { ...state, hits, pendingToken: null, error: null, selectedRank: null };
}

export function applyError(state: AppState, token: number, message: string): AppState {
  if (state.pendingToken !== token) return state;
  return { ...state, pendingToken: null, error: message };
}

export function selectHit(state: AppState, rank: number | null): AppState {
  return { ...state, selectedRank: rank };
}

/** Record the current query + results, then switch to the pivot query.
 * Returns the new state and the body to POST. */
export function pivotToQbe(
  state: AppState,
  page_id: string,
  box: WireBox,
  k: number,
  token: number,
): { state: AppState; body: QbeBody } {
  const breadcrumb =
    state.query === null
      ? state.breadcrumb
      : [...state.breadcrumb, { query: state.query, hits: state.hits }];
  const query: Query = { kind: "qbe", page_id, box };
  return {
    state: { ...state, breadcrumb, query, pendingToken: token, error: null },
    body: qbeBody(page_id, box, k),
  };
}

/** Pop the breadcrumb: restores the prior query and its results verbatim,
 * without re-requesting. */
export function goBack(state: AppState): AppState {
  if (state.breadcrumb.length === 0) return state;
  const prev = state.breadcrumb[state.breadcrumb.length - 1];
  return {
    ...state,
    breadcrumb: state.breadcrumb.slice(0, -1),
    query: prev.query,
    hits: prev.hits,
    pendingToken: null,
    error: null,
    selectedRank: null,
  };
}

export function queryLabel(q: Query): string {
  if (q.kind === "qbs") return `"${q.text}"`;
  const [x, y, w, h] = q.box;
  return `${q.page_id}:${x},${y},${w}×${h}`;
}

// -- page overlay geometry --------------------------------------------------

export interface ViewTransform {
  scale: number;
  offsetX: number;
  offsetY: number;
}

/** Letterbox fit of a page into a viewport; zoom multiplies the base fit. */
export function overlayTransform(
  page: { width: number; height: number },
  view: { width: number; height: number },
  zoom = 1,
): ViewTransform {
  const scale = zoom * Math.min(view.width / page.width, view.height / page.height);
  return {
    scale,
    offsetX: (view.width - page.width * scale) / 2,
    offsetY: (view.height - page.height * scale) / 2,
  };
}

export function boxToView(box: WireBox, t: ViewTransform): WireBox {
  const [x, y, w, h] = box;
  return [
    t.offsetX + x * t.scale,
    t.offsetY + y * t.scale,
    w * t.scale,
    h * t.scale,
  ];
}

export function viewToImage(
  vx: number,
  vy: number,
  t: ViewTransform,
): { x: number; y: number } {
  return { x: (vx - t.offsetX) / t.scale, y: (vy - t.offsetY) / t.scale };
}
