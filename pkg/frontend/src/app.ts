/** DOM shell: wires the pure model to the engine's HTTP API.
 *
 * All rendering decisions (order, colors, crops, breadcrumb, validation)
 * come from model.ts; this file only reads inputs and paints.
 */

import { ApiClient, ApiError, SearchGate } from "./api.js";
import { debounce } from "./debounce.js";
import {
  AppState,
  Hit,
  PageInfo,
  Query,
  applyError,
  applyResults,
  beginSearch,
  boxToView,
  goBack,
  hueOf,
  initialState,
  overlayTransform,
  pivotToQbe,
  queryLabel,
  selectHit,
  shouldSearch,
  similarityColor,
  toHitViews,
  validateDrawnBox,
  viewToImage,
} from "./model.js";

const K = 25;
const DEBOUNCE_MS = 250;

const api = new ApiClient("");
const gate = new SearchGate();

let state: AppState = initialState();
let pages = new Map<string, PageInfo>();
let openPage: string | null = null;
let zoom = 1;
const imageCache = new Map<string, Promise<HTMLImageElement>>();

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const searchInput = $<HTMLInputElement>("search-input");
const resultsEl = $<HTMLElement>("results");
const errorEl = $<HTMLElement>("error-banner");
const breadcrumbEl = $<HTMLElement>("breadcrumb");
const pageViewEl = $<HTMLElement>("page-view");
const pageCanvas = $<HTMLCanvasElement>("page-canvas");
const pageTitleEl = $<HTMLElement>("page-title");
const hoverTip = $<HTMLElement>("hover-tip");
const statusEl = $<HTMLElement>("status-line");

function setState(next: AppState) {
  state = next;
  render();
}

function loadImage(page_id: string): Promise<HTMLImageElement> {
  let p = imageCache.get(page_id);
  if (!p) {
    p = new Promise((resolve, reject) => {
      const img = new Image();
      img.onload = () => resolve(img);
      img.onerror = () => reject(new Error(`image for ${page_id} failed to load`));
      img.src = api.pageImageUrl(page_id);
    });
    imageCache.set(page_id, p);
  }
  return p;
}

// -- queries ----------------------------------------------------------------

async function runQuery(query: Query) {
  const { token, signal } = gate.next();
  setState(beginSearch(state, query, token));
  try {
    const hits =
      query.kind === "qbs"
        ? await api.search(query.text, K, signal)
        : await api.qbe({ page_id: query.page_id, box: query.box, k: K }, signal);
    setState(applyResults(state, token, hits));
  } catch (e) {
    if (e instanceof DOMException && e.name === "AbortError") return;
    const msg = e instanceof ApiError ? `${e.status}: ${e.message}` : String(e);
    setState(applyError(state, token, msg));
  }
}

const debouncedSearch = debounce((text: string) => {
  if (!shouldSearch(text)) return; // empty input issues no request
  void runQuery({ kind: "qbs", text });
}, DEBOUNCE_MS);

searchInput.addEventListener("input", () => {
  const text = searchInput.value;
  if (!shouldSearch(text)) {
    setState({ ...state, hits: [], error: null, query: null, pendingToken: null });
    return;
  }
  debouncedSearch(text);
});

function pivot(page_id: string, box: [number, number, number, number]) {
  const { token, signal } = gate.next();
  const { state: next, body } = pivotToQbe(state, page_id, box, K, token);
  setState(next);
  void (async () => {
    try {
      const hits = await api.qbe(body, signal);
      setState(applyResults(state, token, hits));
    } catch (e) {
      if (e instanceof DOMException && e.name === "AbortError") return;
      const msg = e instanceof ApiError ? `${e.status}: ${e.message}` : String(e);
      setState(applyError(state, token, msg));
    }
  })();
}

// -- rendering --------------------------------------------------------------

function render() {
  errorEl.textContent = state.error ?? "";
  errorEl.hidden = state.error === null;
  renderBreadcrumb();
  void renderResults();
  if (openPage) void renderPage(openPage);
}

function renderBreadcrumb() {
  breadcrumbEl.replaceChildren();
  if (state.breadcrumb.length === 0 && !state.query) return;
  for (const crumb of state.breadcrumb) {
    const span = document.createElement("span");
    span.className = "crumb past";
    span.textContent = queryLabel(crumb.query);
    breadcrumbEl.appendChild(span);
  }
  if (state.query) {
    const span = document.createElement("span");
    span.className = "crumb current";
    span.textContent = queryLabel(state.query);
    breadcrumbEl.appendChild(span);
  }
  if (state.breadcrumb.length > 0) {
    const back = document.createElement("button");
    back.textContent = "back";
    back.addEventListener("click", () => {
      setState(goBack(state));
      if (state.query?.kind === "qbs") searchInput.value = state.query.text;
    });
    breadcrumbEl.appendChild(back);
  }
}

async function renderResults() {
  const views = toHitViews(state.hits, pages);
  resultsEl.replaceChildren();
  if (views.length === 0) {
    const empty = document.createElement("div");
    empty.className = "empty-state";
    empty.textContent = state.query ? "no results" : "type a query to search";
    resultsEl.appendChild(empty);
    return;
  }
  for (const v of views) {
    const row = document.createElement("div");
    row.className = "hit-row";
    if (state.selectedRank === v.rank) row.classList.add("selected");

    const canvas = document.createElement("canvas");
    canvas.className = "thumb";
    canvas.width = 160;
    canvas.height = 48;
    row.appendChild(canvas);
    void drawThumb(canvas, v.page_id, v.crop);

    const badge = document.createElement("span");
    badge.className = "badge";
    badge.style.backgroundColor = v.color;
    badge.textContent = v.similarity.toFixed(3);
    badge.title = `similarity ${v.similarity}`;

    const label = document.createElement("span");
    label.className = "hit-label";
    label.textContent = `#${v.rank}  ${v.page_id}`;

    const open = document.createElement("button");
    open.textContent = "page";
    open.addEventListener("click", () => {
      openPage = v.page_id;
      setState(selectHit(state, v.rank));
    });

    const similar = document.createElement("button");
    similar.textContent = "similar";
    similar.addEventListener("click", () => pivot(v.page_id, v.box));

    row.append(badge, label, open, similar);
    resultsEl.appendChild(row);
  }
}

async function drawThumb(
  canvas: HTMLCanvasElement,
  page_id: string,
  crop: [number, number, number, number],
) {
  try {
    const img = await loadImage(page_id);
    const ctx = canvas.getContext("2d");
    if (!ctx) return;
    const [x, y, w, h] = crop;
    ctx.fillStyle = "#fff";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    const s = Math.min(canvas.width / w, canvas.height / h);
    ctx.drawImage(img, x, y, w, h, 0, 0, w * s, h * s);
  } catch {
    // image unavailable: leave the blank thumbnail
  }
}

async function renderPage(page_id: string) {
  const page = pages.get(page_id);
  if (!page) return;
  pageViewEl.hidden = false;
  pageTitleEl.textContent = page_id;
  const img = await loadImage(page_id).catch(() => null);
  const ctx = pageCanvas.getContext("2d");
  if (!ctx) return;
  const view = { width: pageCanvas.width, height: pageCanvas.height };
  const t = overlayTransform(page, view, zoom);
  ctx.fillStyle = "#222";
  ctx.fillRect(0, 0, view.width, view.height);
  if (img) {
    ctx.drawImage(
      img,
      t.offsetX,
      t.offsetY,
      page.width * t.scale,
      page.height * t.scale,
    );
  }
  for (const hit of state.hits) {
    if (hit.page_id !== page_id) continue;
    const [vx, vy, vw, vh] = boxToView(hit.box, t);
    ctx.lineWidth = state.selectedRank === hit.rank ? 3 : 2;
    ctx.strokeStyle = similarityColor(hit.similarity);
    ctx.strokeRect(vx, vy, vw, vh);
  }
}

// -- page canvas interaction ------------------------------------------------

function canvasPoint(ev: MouseEvent): { x: number; y: number } {
  const r = pageCanvas.getBoundingClientRect();
  return { x: ev.clientX - r.left, y: ev.clientY - r.top };
}

function hitAt(vx: number, vy: number): Hit | null {
  if (!openPage) return null;
  const page = pages.get(openPage);
  if (!page) return null;
  const t = overlayTransform(page, { width: pageCanvas.width, height: pageCanvas.height }, zoom);
  const p = viewToImage(vx, vy, t);
  for (const hit of state.hits) {
    if (hit.page_id !== openPage) continue;
    const [x, y, w, h] = hit.box;
    if (p.x >= x && p.x <= x + w && p.y >= y && p.y <= y + h) return hit;
  }
  return null;
}

pageCanvas.addEventListener("mousemove", (ev) => {
  if (drag) return;
  const { x, y } = canvasPoint(ev);
  const hit = hitAt(x, y);
  if (hit) {
    hoverTip.hidden = false;
    hoverTip.style.left = `${ev.clientX + 12}px`;
    hoverTip.style.top = `${ev.clientY + 12}px`;
    hoverTip.textContent = `similarity ${hit.similarity.toFixed(4)} (hue ${hueOf(hit.similarity).toFixed(0)})`;
  } else {
    hoverTip.hidden = true;
  }
});

let drag: { x: number; y: number } | null = null;

pageCanvas.addEventListener("mousedown", (ev) => {
  drag = canvasPoint(ev);
});

pageCanvas.addEventListener("mouseup", (ev) => {
  if (!drag || !openPage) {
    drag = null;
    return;
  }
  const page = pages.get(openPage);
  const end = canvasPoint(ev);
  const start = drag;
  drag = null;
  if (!page) return;
  const t = overlayTransform(page, { width: pageCanvas.width, height: pageCanvas.height }, zoom);
  const a = viewToImage(start.x, start.y, t);
  const b = viewToImage(end.x, end.y, t);
  const x = Math.min(a.x, b.x);
  const y = Math.min(a.y, b.y);
  const w = Math.abs(a.x - b.x);
  const h = Math.abs(a.y - b.y);
  if (w < 2 && h < 2) {
    // treat as a click: select the box under the cursor
    const hit = hitAt(end.x, end.y);
    setState(selectHit(state, hit ? hit.rank : null));
    return;
  }
  const check = validateDrawnBox(x, y, w, h);
  if (!check.ok) {
    statusEl.textContent = check.message;
    return;
  }
  statusEl.textContent = "";
  pivot(openPage, check.box);
});

$<HTMLButtonElement>("zoom-in").addEventListener("click", () => {
  zoom = Math.min(zoom * 1.25, 8);
  if (openPage) void renderPage(openPage);
});
$<HTMLButtonElement>("zoom-out").addEventListener("click", () => {
  zoom = Math.max(zoom / 1.25, 0.25);
  if (openPage) void renderPage(openPage);
});
$<HTMLButtonElement>("close-page").addEventListener("click", () => {
  openPage = null;
  pageViewEl.hidden = true;
  hoverTip.hidden = true;
});
$<HTMLButtonElement>("search-selected").addEventListener("click", () => {
  const hit = state.hits.find((h) => h.rank === state.selectedRank);
  if (hit) pivot(hit.page_id, hit.box);
});

// -- boot -------------------------------------------------------------------

async function boot() {
  try {
    const list = await api.pages();
    pages = new Map(list.map((p) => [p.page_id, p]));
    const health = await api.health();
    statusEl.textContent = `${health.pages} pages, ${health.proposals} regions indexed`;
  } catch (e) {
    statusEl.textContent = `service unavailable: ${String(e)}`;
  }
  render();
}

void boot();
