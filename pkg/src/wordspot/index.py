"""Searchable page index: build, persist, and query.

Indexing a page runs the proposal generator over the (optionally resized)
image, extracts a wordness score and a unit descriptor per proposal, keeps
proposals scoring above t_s, suppresses overlaps with NMS at t_nms, and maps
the survivors back to original pixel coordinates.

Querying embeds the query (a string via the word embedding, or an image
crop via the network), ranks every stored proposal by cosine similarity,
and removes overlapping hits per page with a zero-overlap NMS pass.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dtp import DtpConfig, dtp_proposals
from .embedder import TrainedModel, embed_cfg_from_json, extract_features
from .embeddings import EmbeddingConfig, embed_label, normalize_label
from .errors import CorruptIndex, DegenerateBox, UnknownPage, VersionMismatch
from .geometry import Box, clip_box, nms
from .image_ops import GrayImage, load_gray, resize_by_scale, resize_longest_side

INDEX_MAGIC = b"WSIX"
INDEX_VERSION = 1

# float rounding can land a sigmoid exactly on 0 or 1; keep wordness open
_P_EPS = 1e-9


@dataclass(frozen=True)
class QueryConfig:
    t_s: float = 0.5
    t_nms: float = 0.4
    k: int = 25

    def __post_init__(self):
        if not 0.0 <= self.t_s <= 1.0:
            raise ValueError(f"t_s {self.t_s} outside [0, 1]")
        if not 0.0 <= self.t_nms <= 1.0:
            raise ValueError(f"t_nms {self.t_nms} outside [0, 1]")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class Proposal:
    """A retained region: box in original page coordinates, wordness
    probability, unit-norm descriptor (float32)."""

    box: Box
    wordness: float
    descriptor: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, Proposal)
            and self.box == other.box
            and self.wordness == other.wordness
            and np.array_equal(self.descriptor, other.descriptor)
        )


@dataclass
class PageIndex:
    page_id: str
    image_path: str
    width: int
    height: int
    scale: float
    n_dtp: int
    n_total: int
    proposals: list[Proposal]

    def __eq__(self, other):
        return (
            isinstance(other, PageIndex)
            and self.page_id == other.page_id
            and self.image_path == other.image_path
            and (self.width, self.height, self.scale) == (other.width, other.height, other.scale)
            and (self.n_dtp, self.n_total) == (other.n_dtp, other.n_total)
            and self.proposals == other.proposals
        )


@dataclass
class RawPage:
    """A page before threshold/NMS filtering: every proposal with its score
    and descriptor, boxes still in resized coordinates."""

    page_id: str
    image_path: str
    width: int
    height: int
    scale: float
    boxes: list[Box]
    wordness: np.ndarray
    descriptors: np.ndarray


def index_page_raw(
    img: GrayImage,
    page_id: str,
    model: TrainedModel,
    dtp_cfg: DtpConfig | None = None,
    long_side: int | None = None,
    image_path: str = "",
) -> RawPage:
    """Proposals + descriptors for one page, unfiltered."""
    h, w = img.shape
    if long_side is not None:
        resized, scale = resize_longest_side(img, long_side)
    else:
        resized, scale = img, 1.0
    boxes = dtp_proposals(resized, dtp_cfg)
    if boxes:
        feats = np.stack([extract_features(resized, b) for b in boxes])
        descriptors, probs = model.describe(feats)
        descriptors = descriptors.astype(np.float32)
        probs = np.clip(probs, _P_EPS, 1.0 - _P_EPS)
    else:
        descriptors = np.zeros((0, model.net.cfg.out_dim), dtype=np.float32)
        probs = np.zeros(0)
    return RawPage(
        page_id=page_id,
        image_path=image_path,
        width=w,
        height=h,
        scale=scale,
        boxes=boxes,
        wordness=probs,
        descriptors=descriptors,
    )


def filter_raw_page(raw: RawPage, q: QueryConfig) -> PageIndex:
    """Wordness threshold + NMS, then map boxes to original coordinates."""
    keep = [i for i in range(len(raw.boxes)) if raw.wordness[i] > q.t_s]
    if keep:
        kept_boxes = [raw.boxes[i] for i in keep]
        kept_scores = raw.wordness[keep]
        nms_keep = nms(kept_boxes, kept_scores, q.t_nms)
        keep = sorted(keep[i] for i in nms_keep)  # canonical storage order
    proposals = []
    bounds = (float(raw.width), float(raw.height))
    for i in keep:
        b = raw.boxes[i]
        s = raw.scale
        orig = clip_box(
            Box.from_corners(b.x0 / s, b.y0 / s, b.x1 / s, b.y1 / s), bounds
        )
        proposals.append(
            Proposal(box=orig, wordness=float(raw.wordness[i]), descriptor=raw.descriptors[i])
        )
    return PageIndex(
        page_id=raw.page_id,
        image_path=raw.image_path,
        width=raw.width,
        height=raw.height,
        scale=raw.scale,
        n_dtp=len(raw.boxes),
        n_total=len(raw.boxes),
        proposals=proposals,
    )


def build_index(
    pages: Sequence[tuple[GrayImage, str]],
    model: TrainedModel,
    dtp_cfg: DtpConfig | None = None,
    q: QueryConfig | None = None,
    long_side: int | None = None,
    image_paths: dict[str, str] | None = None,
    errors_out: list[tuple[str, str]] | None = None,
) -> list[PageIndex]:
    """Index a batch of pages; per-page failures are reported, not fatal.

    Failures land in ``errors_out`` as (page_id, message).  Output is sorted
    by page_id so results never depend on input order.
    """
    q = q or QueryConfig()
    out = []
    for img, page_id in pages:
        path = (image_paths or {}).get(page_id, "")
        try:
            raw = index_page_raw(img, page_id, model, dtp_cfg, long_side, path)
            out.append(filter_raw_page(raw, q))
        except Exception as e:  # keep the batch alive, report the page
            if errors_out is None:
                raise
            errors_out.append((page_id, f"{type(e).__name__}: {e}"))
    return sorted(out, key=lambda p: p.page_id)


# ---------------------------------------------------------------------------
# Querying


@dataclass(frozen=True)
class Hit:
    page_id: str
    box: Box
    similarity: float


def _rank(pages: Sequence[PageIndex], query_vec: np.ndarray, k: int) -> list[Hit]:
    """Cosine-rank all proposals, zero-overlap NMS per page, global top-k."""
    hits = []
    for page in pages:
        if not page.proposals:
            continue
        descs = np.stack([p.descriptor for p in page.proposals]).astype(np.float64)
        sims = descs @ query_vec
        boxes = [p.box for p in page.proposals]
        for i in nms(boxes, sims, 0.0):
            hits.append(Hit(page.page_id, boxes[i], float(sims[i])))
    hits.sort(key=lambda h: (-h.similarity, h.page_id, h.box.y0, h.box.x0, h.box.w, h.box.h))
    return hits[:k]


def query_by_string(
    pages: Sequence[PageIndex], q: str, embed_cfg: EmbeddingConfig, k: int = 25
) -> list[Hit]:
    """Rank proposals against the word embedding of a text query."""
    word = normalize_label(q, embed_cfg.alphabet)
    vec = embed_label(word, embed_cfg).values
    vec = vec / np.linalg.norm(vec)
    return _rank(pages, vec, k)


def query_by_example(
    pages: Sequence[PageIndex],
    page_id: str,
    box: Box,
    model: TrainedModel,
    k: int = 25,
    page_image: GrayImage | None = None,
) -> list[Hit]:
    """Rank proposals against the descriptor of an image crop.

    The crop is taken from the same resized image the index was built on
    (reconstructed via the stored scale), so an indexed box queries as
    exactly its own descriptor.
    """
    page = next((p for p in pages if p.page_id == page_id), None)
    if page is None:
        raise UnknownPage(f"page {page_id!r} not in index")
    clipped = clip_box(box, (float(page.width), float(page.height)))
    if clipped.w < 1.0 or clipped.h < 1.0:
        raise DegenerateBox(f"query box {box} collapses on page {page_id!r}")
    img = page_image if page_image is not None else load_gray(page.image_path)
    resized = resize_by_scale(img, page.scale)
    s = page.scale
    rbox = Box.from_corners(clipped.x0 * s, clipped.y0 * s, clipped.x1 * s, clipped.y1 * s)
    feats = extract_features(resized, rbox)[None, :]
    emb, _probs = model.describe(feats)
    return _rank(pages, emb[0].astype(np.float64), k)


# ---------------------------------------------------------------------------
# Persistence: "WSIX" header + per-page records + CRC32 trailer.


@dataclass
class LoadedIndex:
    """Page list plus the header metadata needed to query it."""

    pages: list[PageIndex]
    embed_cfg: EmbeddingConfig | None = None
    query_cfg: QueryConfig = field(default_factory=QueryConfig)
    long_side: int | None = None

    def __iter__(self):
        return iter(self.pages)

    def __len__(self):
        return len(self.pages)

    def __getitem__(self, i):
        return self.pages[i]


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("string too long for index record")
    return struct.pack("<H", len(raw)) + raw


class _Reader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptIndex("truncated index file")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u16()).decode("utf-8")


def save_index(
    pages: Sequence[PageIndex],
    path: str | Path,
    embed_cfg_doc: dict | None = None,
    query_cfg: QueryConfig | None = None,
    long_side: int | None = None,
) -> None:
    query_cfg = query_cfg or QueryConfig()
    dim = 0
    for p in pages:
        for prop in p.proposals:
            if dim == 0:
                dim = prop.descriptor.size
            elif prop.descriptor.size != dim:
                raise ValueError("inconsistent descriptor dimensions")
    header = {
        "kind": (embed_cfg_doc or {}).get("kind", ""),
        "dim": dim,
        "embedding": embed_cfg_doc,
        "t_s": query_cfg.t_s,
        "t_nms": query_cfg.t_nms,
        "k": query_cfg.k,
        "long_side": long_side,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [INDEX_MAGIC, struct.pack("<I", INDEX_VERSION)]
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    parts.append(struct.pack("<I", len(pages)))
    for page in pages:
        parts.append(_pack_str(page.page_id))
        parts.append(_pack_str(page.image_path))
        parts.append(
            struct.pack(
                "<IId III",
                page.width,
                page.height,
                page.scale,
                page.n_dtp,
                page.n_total,
                len(page.proposals),
            )
        )
        for prop in page.proposals:
            b = prop.box
            parts.append(struct.pack("<4d", b.x0, b.y0, b.x1, b.y1))
            parts.append(struct.pack("<d", prop.wordness))
            parts.append(prop.descriptor.astype("<f4").tobytes())
    body = b"".join(parts)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(body)
        f.write(struct.pack("<I", crc))


def load_index(path: str | Path) -> LoadedIndex:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 8 or data[:4] != INDEX_MAGIC:
        raise VersionMismatch("not an index file (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != INDEX_VERSION:
        raise VersionMismatch(f"unsupported index version {version}")
    if len(data) < 12:
        raise CorruptIndex("truncated index file")
    body, trailer = data[:-4], data[-4:]
    (crc_stored,) = struct.unpack("<I", trailer)
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise CorruptIndex("checksum mismatch")
    r = _Reader(body, 8)
    try:
        blob_len = r.u32()
        header = json.loads(r.take(blob_len))
        dim = header["dim"]
        n_pages = r.u32()
        pages = []
        for _ in range(n_pages):
            page_id = r.string()
            image_path = r.string()
            width, height, scale, n_dtp, n_total, n_props = struct.unpack(
                "<IId III", r.take(4 + 4 + 8 + 12)
            )
            proposals = []
            for _ in range(n_props):
                x0, y0, x1, y1 = struct.unpack("<4d", r.take(32))
                wordness = r.f64()
                desc = np.frombuffer(r.take(dim * 4), dtype="<f4").copy()
                proposals.append(
                    Proposal(Box.from_corners(x0, y0, x1, y1), wordness, desc)
                )
            pages.append(
                PageIndex(
                    page_id=page_id,
                    image_path=image_path,
                    width=width,
                    height=height,
                    scale=scale,
                    n_dtp=n_dtp,
                    n_total=n_total,
                    proposals=proposals,
                )
            )
        if r.pos != len(body):
            raise CorruptIndex("trailing bytes after page records")
    except (
        struct.error,
        UnicodeDecodeError,
        ValueError,
        KeyError,
    ) as e:
        raise CorruptIndex(f"malformed index structure: {e}") from e
    embed_cfg = (
        embed_cfg_from_json(header["embedding"]) if header.get("embedding") else None
    )
    return LoadedIndex(
        pages=pages,
        embed_cfg=embed_cfg,
        query_cfg=QueryConfig(
            t_s=header.get("t_s", 0.5),
            t_nms=header.get("t_nms", 0.4),
            k=header.get("k", 25),
        ),
        long_side=header.get("long_side"),
    )
