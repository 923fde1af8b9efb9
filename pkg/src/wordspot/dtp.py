"""Dilated text proposals.

Region proposals from connected components: binarize the page at several
multiples of its mean intensity, close each binary image with a family of
rectangular kernels sized to bridge intra-word gaps, and pool the component
bounding boxes from every (threshold, kernel) pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, iou_matrix
from .image_ops import (
    BinaryImage,
    GrayImage,
    StructuringElement,
    binary_close,
    connected_components,
    threshold,
)

DEFAULT_KERNEL_WIDTHS = (1, 3, 5, 7, 9, 11, 15, 21)
DEFAULT_KERNEL_HEIGHTS = (1, 3, 5)


def default_kernels() -> tuple[StructuringElement, ...]:
    return tuple(
        StructuringElement(w, h)
        for w in DEFAULT_KERNEL_WIDTHS
        for h in DEFAULT_KERNEL_HEIGHTS
    )


@dataclass(frozen=True)
class DtpConfig:
    mean_multiples: tuple[float, ...] = (0.7, 0.8, 0.9)
    kernels: tuple[StructuringElement, ...] = field(default_factory=default_kernels)
    min_area: int = 24
    pad: int = 0
    dedup_iou: float = 0.95

    def __post_init__(self):
        if not self.mean_multiples or any(m <= 0 for m in self.mean_multiples):
            raise ValueError("mean_multiples must be non-empty and positive")
        if not self.kernels:
            raise ValueError("at least one kernel is required")


def pad_box(box: Box, pad: float, bounds: tuple[float, float]) -> Box:
    """Grow a box by ``pad`` pixels on every side, clamped to (width, height)."""
    if pad < 0:
        raise ValueError("pad must be non-negative")
    bw, bh = bounds
    x0 = max(box.x0 - pad, 0.0)
    y0 = max(box.y0 - pad, 0.0)
    x1 = min(box.x1 + pad, bw)
    y1 = min(box.y1 + pad, bh)
    return Box.from_corners(x0, y0, x1, y1)


def _dedup(boxes: list[Box], dedup_iou: float) -> list[Box]:
    """Greedy near-duplicate removal: keep the first of any pair above IoU."""
    if not boxes:
        return []
    # Exact duplicates dominate (nested kernels produce identical components);
    # drop them with a set before the quadratic IoU pass.
    seen: set[tuple[float, float, float, float]] = set()
    unique: list[Box] = []
    for b in boxes:
        key = b.corners()
        if key not in seen:
            seen.add(key)
            unique.append(b)
    kept: list[Box] = []
    kept_arr = np.zeros((0, 4), dtype=np.float64)
    for b in unique:
        arr = np.array([b.corners()], dtype=np.float64)
        if kept_arr.shape[0]:
            if (iou_matrix(arr, kept_arr)[0] > dedup_iou).any():
                continue
        kept.append(b)
        kept_arr = np.vstack([kept_arr, arr])
    return kept


def dtp_proposals(img: GrayImage, cfg: DtpConfig | None = None) -> list[Box]:
    """Proposal boxes for one grayscale page.

    For every (mean multiple, kernel) pair: threshold at multiple * mean,
    close, and collect component boxes with at least ``min_area`` foreground
    pixels.  The union is padded, near-deduplicated, and returned sorted by
    (y, x, w, h).
    """
    cfg = cfg or DtpConfig()
    img = np.asarray(img)
    h, w = img.shape
    mean = float(img.mean()) if img.size else 0.0
    binaries: list[BinaryImage] = [threshold(img, m * mean) for m in cfg.mean_multiples]
    pooled: list[Box] = []
    for binary in binaries:
        if not binary.any():
            continue
        for kernel in cfg.kernels:
            closed = binary_close(binary, kernel)
            for box, area in connected_components(closed):
                if area >= cfg.min_area:
                    pooled.append(box)
    if cfg.pad > 0:
        pooled = [pad_box(b, cfg.pad, (w, h)) for b in pooled]
    deduped = _dedup(pooled, cfg.dedup_iou)
    deduped.sort(key=lambda b: (b.y0, b.x0, b.w, b.h))
    return deduped
