"""Read-only HTTP search service over a prebuilt index.

Endpoints (JSON; boxes on the wire are integer [x, y, w, h] in original
page pixels):

    GET  /api/pages                  page inventory
    GET  /api/pages/{page_id}/image  page raster as PNG
    GET  /api/search?q=&k=           query by string
    POST /api/search/qbe             query by example {page_id, box}
    GET  /api/health                 status + index stats

The index is immutable once loaded, so concurrent requests share it freely.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import Response
from fastapi.staticfiles import StaticFiles

from .errors import DegenerateBox, EmptyLabel, UnknownPage, WordspotError
from .geometry import Box
from .image_ops import GrayImage, load_gray, png_bytes
from .index import (
    INDEX_VERSION,
    LoadedIndex,
    load_index,
    query_by_example,
    query_by_string,
)


def _wire_hits(hits) -> dict:
    rows = []
    for rank, h in enumerate(hits, start=1):
        b = h.box
        rows.append(
            {
                "page_id": h.page_id,
                "box": [
                    int(round(b.x0)),
                    int(round(b.y0)),
                    int(round(b.w)),
                    int(round(b.h)),
                ],
                "similarity": h.similarity,
                "rank": rank,
            }
        )
    return {"hits": rows}


def _parse_wire_box(value) -> tuple[int, int, int, int]:
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise HTTPException(400, "box must be [x, y, w, h]")
    coords = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise HTTPException(400, "box coordinates must be numbers")
        if isinstance(v, float) and not v.is_integer():
            raise HTTPException(400, "box coordinates must be integers")
        coords.append(int(v))
    return tuple(coords)


def create_app(
    index_path: str | Path | LoadedIndex,
    model_path: str | Path | None = None,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    idx = index_path if isinstance(index_path, LoadedIndex) else load_index(index_path)
    pages = {p.page_id: p for p in idx.pages}
    model = None
    if model_path is not None:
        from .embedder import load_model

        model = load_model(model_path)
    image_cache: dict[str, GrayImage] = {}

    app = FastAPI(title="wordspot", docs_url=None, redoc_url=None)

    def page_or_404(page_id: str):
        page = pages.get(page_id)
        if page is None:
            raise HTTPException(404, f"unknown page {page_id!r}")
        return page

    def page_image(page_id: str) -> GrayImage:
        if page_id not in image_cache:
            page = page_or_404(page_id)
            try:
                image_cache[page_id] = load_gray(page.image_path)
            except OSError as e:
                raise HTTPException(404, f"page image unavailable: {e}")
        return image_cache[page_id]

    @app.get("/api/pages")
    def list_pages():
        return [
            {"page_id": p.page_id, "width": p.width, "height": p.height}
            for p in sorted(idx.pages, key=lambda p: p.page_id)
        ]

    @app.get("/api/pages/{page_id}/image")
    def get_page_image(page_id: str):
        img = page_image(page_id)
        return Response(content=png_bytes(img), media_type="image/png")

    @app.get("/api/search")
    def search(q: str = "", k: int = 25):
        if not q:
            raise HTTPException(400, "missing query parameter q")
        if k < 1:
            raise HTTPException(400, "k must be >= 1")
        if idx.embed_cfg is None:
            raise HTTPException(400, "index lacks an embedding config")
        try:
            hits = query_by_string(idx.pages, q, idx.embed_cfg, k=k)
        except EmptyLabel as e:
            raise HTTPException(400, str(e))
        return _wire_hits(hits)

    @app.post("/api/search/qbe")
    def search_qbe(body: dict):
        if not isinstance(body, dict) or "page_id" not in body or "box" not in body:
            raise HTTPException(400, "body must contain page_id and box")
        page = page_or_404(str(body["page_id"]))
        x, y, w, h = _parse_wire_box(body["box"])
        if w <= 0 or h <= 0:
            raise HTTPException(400, "box must have positive size")
        if w > page.width or h > page.height:
            raise HTTPException(413, "query box exceeds page dimensions")
        k = body.get("k", 25)
        if not isinstance(k, int) or k < 1:
            raise HTTPException(400, "k must be a positive integer")
        if model is None:
            raise HTTPException(400, "service started without a model; QbE unavailable")
        try:
            hits = query_by_example(
                idx.pages,
                page.page_id,
                Box.from_xywh(x, y, w, h),
                model,
                k=k,
                page_image=page_image(page.page_id),
            )
        except UnknownPage as e:
            raise HTTPException(404, str(e))
        except (DegenerateBox, WordspotError) as e:
            raise HTTPException(400, str(e))
        return _wire_hits(hits)

    @app.get("/api/health")
    def health():
        return {
            "status": "ok",
            "index_version": INDEX_VERSION,
            "pages": len(idx.pages),
            "proposals": sum(len(p.proposals) for p in idx.pages),
        }

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
