"""Boxes, IoU, NMS, box regression coding, anchor grids, and GT matching."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateBox, NoPositives


@dataclass(frozen=True, slots=True)
class Box:
    """Axis-aligned rectangle in pixel coordinates, center form."""

    x_c: float
    y_c: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise DegenerateBox(f"box must have positive size, got w={self.w} h={self.h}")

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "Box":
        return cls((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "Box":
        return cls(x + w / 2.0, y + h / 2.0, w, h)

    @property
    def x0(self) -> float:
        return self.x_c - self.w / 2.0

    @property
    def y0(self) -> float:
        return self.y_c - self.h / 2.0

    @property
    def x1(self) -> float:
        return self.x_c + self.w / 2.0

    @property
    def y1(self) -> float:
        return self.y_c + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    def xywh(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.w, self.h)


@dataclass(frozen=True, slots=True)
class RegressionTarget:
    """Normalized translation offsets and log-space scale factors."""

    tx: float
    ty: float
    tw: float
    th: float


@dataclass(frozen=True)
class AnchorConfig:
    heights: tuple[float, ...] = (20.0, 40.0, 60.0)
    widths: tuple[float, ...] = (30.0, 90.0, 150.0, 210.0, 300.0)
    stride: int = 8

    @property
    def anchors_per_position(self) -> int:
        return len(self.heights) * len(self.widths)


@dataclass(frozen=True)
class MatchConfig:
    pos_iou: float = 0.75
    neg_iou: float = 0.4
    batch: int = 256
    pos_per_batch: int = 128

    def __post_init__(self):
        if not (0 <= self.neg_iou < self.pos_iou <= 1):
            raise ValueError("need 0 <= neg_iou < pos_iou <= 1")
        if self.pos_per_batch > self.batch:
            raise ValueError("pos_per_batch must not exceed batch")


def boxes_to_corners(boxes: Sequence[Box]) -> np.ndarray:
    """Stack boxes into an (N, 4) float array of (x0, y0, x1, y1) rows."""
    if len(boxes) == 0:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([b.corners() for b in boxes], dtype=np.float64)


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union overlap of two boxes, in [0, 1]."""
    ix = min(a.x1, b.x1) - max(a.x0, b.x0)
    iy = min(a.y1, b.y1) - max(a.y0, b.y0)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two corner-form box arrays, shape (N, M)."""
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    ix = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


def nms(boxes: Sequence[Box], scores: Sequence[float], t: float) -> list[int]:
    """Greedy non-maximum suppression.

    Repeatedly keeps the highest-scoring remaining box and discards every
    remaining box whose IoU with it is strictly greater than ``t`` (so t = 0
    suppresses any positive overlap).  Equal scores are ordered by ascending
    original index.  Returns kept indices in descending score order.
    """
    n = len(boxes)
    if n == 0:
        return []
    if n != len(scores):
        raise ValueError("boxes and scores must have equal length")
    corners = boxes_to_corners(boxes)
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    alive = np.ones(n, dtype=bool)
    kept: list[int] = []
    for pos, i in enumerate(order):
        if not alive[pos]:
            continue
        kept.append(int(i))
        rest = order[pos + 1 :]
        if rest.size:
            ious = iou_matrix(corners[i : i + 1], corners[rest])[0]
            alive[pos + 1 :] &= ~(ious > t)
    return kept


def encode_box(anchor: Box, gt: Box) -> RegressionTarget:
    """Parameterize ``gt`` relative to ``anchor`` (translation + log scale)."""
    return RegressionTarget(
        tx=(gt.x_c - anchor.x_c) / anchor.w,
        ty=(gt.y_c - anchor.y_c) / anchor.h,
        tw=math.log(gt.w / anchor.w),
        th=math.log(gt.h / anchor.h),
    )


def decode_box(
    anchor: Box, t: RegressionTarget, bounds: tuple[float, float] | None = None
) -> Box:
    """Invert encode_box; clamps to (width, height) image bounds when given."""
    box = Box(
        x_c=anchor.x_c + t.tx * anchor.w,
        y_c=anchor.y_c + t.ty * anchor.h,
        w=anchor.w * math.exp(t.tw),
        h=anchor.h * math.exp(t.th),
    )
    if bounds is None:
        return box
    return clip_box(box, bounds)


def clip_box(box: Box, bounds: tuple[float, float]) -> Box:
    """Clamp a box to [0, w] x [0, h], preserving a positive minimal extent."""
    bw, bh = bounds
    eps = 1e-6
    x0 = min(max(box.x0, 0.0), bw - eps)
    y0 = min(max(box.y0, 0.0), bh - eps)
    x1 = max(min(box.x1, bw), x0 + eps)
    y1 = max(min(box.y1, bh), y0 + eps)
    return Box.from_corners(x0, y0, x1, y1)


def anchor_grid(image_w: int, image_h: int, cfg: AnchorConfig | None = None) -> list[Box]:
    """All anchors for an image: one per grid position and (height, width) pair.

    Grid positions sit at stride*(i + 1/2) for i in [0, floor(dim/stride)),
    so every anchor center lies inside the image.
    """
    cfg = cfg or AnchorConfig()
    if image_w <= 0 or image_h <= 0:
        raise ValueError("image dimensions must be positive")
    nx = image_w // cfg.stride
    ny = image_h // cfg.stride
    sizes = [(w, h) for h in cfg.heights for w in cfg.widths]
    out: list[Box] = []
    for iy in range(ny):
        y_c = cfg.stride * (iy + 0.5)
        for ix in range(nx):
            x_c = cfg.stride * (ix + 0.5)
            for w, h in sizes:
                out.append(Box(x_c, y_c, float(w), float(h)))
    return out


def label_proposals(
    proposals: Sequence[Box],
    gts: Sequence[tuple[Box, str]],
    cfg: MatchConfig,
) -> tuple[list[tuple[int, int]], list[int]]:
    """Split proposals into positives and negatives by max IoU against GT.

    A proposal is positive iff its best IoU over ground-truth boxes exceeds
    cfg.pos_iou (paired with the argmax gt), negative iff the best IoU is
    below cfg.neg_iou; anything between is ignored.  Returns
    (positives as (proposal_idx, gt_idx), negative proposal indices).
    """
    if len(proposals) == 0:
        raise ValueError("proposals must be non-empty")
    prop_arr = boxes_to_corners(proposals)
    gt_arr = boxes_to_corners([g[0] for g in gts])
    positives: list[tuple[int, int]] = []
    negatives: list[int] = []
    if gt_arr.shape[0] == 0:
        return positives, list(range(len(proposals)))
    ious = iou_matrix(prop_arr, gt_arr)
    best = ious.max(axis=1)
    best_gt = ious.argmax(axis=1)
    for i in range(len(proposals)):
        if best[i] > cfg.pos_iou:
            positives.append((i, int(best_gt[i])))
        elif best[i] < cfg.neg_iou:
            negatives.append(i)
    return positives, negatives


@dataclass
class MatchSample:
    positives: list[tuple[int, int, RegressionTarget]]  # (proposal, gt, target)
    negatives: list[int]


def match_and_sample(
    proposals: Sequence[Box],
    gts: Sequence[tuple[Box, str]],
    cfg: MatchConfig | None = None,
    rng_seed: int = 0,
) -> MatchSample:
    """Label proposals and draw a balanced training sample.

    Takes up to cfg.pos_per_batch positives (all of them when fewer exist)
    and fills the remainder of cfg.batch with negatives, both sampled without
    replacement.  Deterministic for a fixed seed.  Raises NoPositives when no
    proposal clears the positive threshold.
    """
    cfg = cfg or MatchConfig()
    pos, neg = label_proposals(proposals, gts, cfg)
    if not pos:
        raise NoPositives("no proposal overlaps any ground-truth box enough")
    rng = np.random.default_rng(rng_seed)
    if len(pos) > cfg.pos_per_batch:
        picked = rng.choice(len(pos), size=cfg.pos_per_batch, replace=False)
        pos = [pos[i] for i in sorted(picked)]
    n_neg = min(len(neg), cfg.batch - len(pos))
    if len(neg) > n_neg:
        picked = rng.choice(len(neg), size=n_neg, replace=False)
        neg = [neg[i] for i in sorted(picked)]
    positives = [
        (p, g, encode_box(proposals[p], gts[g][0])) for p, g in pos
    ]
    return MatchSample(positives=positives, negatives=neg)
