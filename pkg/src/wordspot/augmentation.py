"""Training-data generation.

Two augmentation schemes for handwriting crops:

* in-place: each annotated word is cropped, sheared, passed through grayscale
  morphology, resized back to its exact original box, and pasted where it
  came from, so the page layout and the ground truth survive untouched;
* full page: word crops are sampled uniformly by class, augmented, and laid
  out row by row on a freshly synthesized background canvas, giving pages
  with exactly known boxes and a controllable class distribution.

A procedural glyph corpus (5 x 3 bitmap font over digits and lowercase)
rides on the full-page generator so the whole pipeline can be exercised
without any external dataset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyCorpus, WordTooLarge
from .geometry import Box
from .image_ops import (
    GrayImage,
    StructuringElement,
    bilinear_roi_resize,
    gray_dilate,
    gray_erode,
    shear,
)

MorphElement = tuple[str, int]  # ("dilate" | "erode", odd size)

DEFAULT_MORPH_ELEMENTS: tuple[MorphElement, ...] = (
    ("dilate", 1),
    ("dilate", 3),
    ("dilate", 5),
    ("erode", 1),
    ("erode", 3),
    ("erode", 5),
)

# ink/background split used when re-tightening augmented crops
INK_THRESHOLD = 128


@dataclass(frozen=True)
class AugmentConfig:
    shear_range: float = 12.0
    morph_elements: tuple[MorphElement, ...] = DEFAULT_MORPH_ELEMENTS
    canvas_noise_sigma: float = 4.0
    background_interval: float = 10.0
    row_gap: int = 12
    word_gap: int = 16
    margin: int = 24
    seed: int = 0

    def __post_init__(self):
        if self.shear_range < 0 or self.canvas_noise_sigma < 0:
            raise ValueError("ranges must be non-negative")
        if self.background_interval < 0:
            raise ValueError("background_interval must be non-negative")
        if min(self.row_gap, self.word_gap, self.margin) < 0:
            raise ValueError("layout gaps must be non-negative")
        for op, size in self.morph_elements:
            if op not in ("dilate", "erode"):
                raise ValueError(f"unknown morphology op {op!r}")
            if size < 1 or size % 2 == 0:
                raise ValueError(f"morphology size {size} must be odd and >= 1")


def _augment_crop(crop: GrayImage, rng: np.random.Generator, cfg: AugmentConfig) -> GrayImage:
    """Shear by a uniform random angle, then one random gray morphology op."""
    angle = rng.uniform(-cfg.shear_range, cfg.shear_range)
    out = shear(crop, angle)
    op, size = cfg.morph_elements[rng.integers(len(cfg.morph_elements))]
    se = StructuringElement(size, size)
    return gray_dilate(out, se) if op == "dilate" else gray_erode(out, se)


def _resize_to(crop: GrayImage, out_w: int, out_h: int) -> GrayImage:
    if crop.shape == (out_h, out_w):
        return crop
    h, w = crop.shape
    box = Box.from_corners(0.0, 0.0, float(w), float(h))
    vals = bilinear_roi_resize(crop, box, out_w, out_h)
    return np.clip(np.rint(vals * 255.0), 0, 255).astype(np.uint8)


def augment_in_place(
    page: GrayImage, gts: Sequence[tuple[Box, str]], cfg: AugmentConfig
) -> GrayImage:
    """Augment every annotated word where it stands.

    Each crop is sheared and morphed, brought back to the exact original box
    size, and pasted over itself; pixels outside ground-truth boxes and the
    boxes themselves stay valid unchanged.
    """
    out = page.copy()
    rng = np.random.default_rng(cfg.seed)
    h, w = page.shape
    for box, _label in gts:
        x0, y0 = int(round(box.x0)), int(round(box.y0))
        x1, y1 = int(round(box.x1)), int(round(box.y1))
        if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
            raise ValueError(f"gt box {box} outside page {w}x{h}")
        crop = out[y0:y1, x0:x1]
        aug = _augment_crop(crop, rng, cfg)
        out[y0:y1, x0:x1] = _resize_to(aug, x1 - x0, y1 - y0)
    return out


def _tighten(crop: GrayImage) -> GrayImage:
    """Crop to the bounding box of ink pixels; unchanged if there is none."""
    ys, xs = np.nonzero(crop < INK_THRESHOLD)
    if ys.size == 0:
        return crop
    return crop[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]


def augment_full_page(
    word_bank: Sequence[tuple[GrayImage, str]],
    canvas_w: int,
    canvas_h: int,
    cfg: AugmentConfig,
    max_words: int | None = None,
) -> tuple[GrayImage, list[tuple[Box, str]]]:
    """Compose a synthetic page from augmented word crops.

    The background is a uniform draw around the bank's median intensity plus
    Gaussian noise.  Classes are sampled uniformly, then an instance within
    the class.  Augmented crops are re-tightened to their ink bounding box
    before placement and pasted with a darkness-preserving min blend, so the
    returned boxes are exact.  Rows fill left to right, top to bottom.
    """
    if not word_bank:
        raise EmptyCorpus("word bank is empty")
    usable_w = canvas_w - 2 * cfg.margin
    usable_h = canvas_h - 2 * cfg.margin
    for crop, label in word_bank:
        ch, cw = crop.shape
        if cw > usable_w or ch > usable_h:
            raise WordTooLarge(
                f"crop {cw}x{ch} for {label!r} exceeds usable canvas {usable_w}x{usable_h}"
            )

    rng = np.random.default_rng(cfg.seed)
    med = float(np.median(np.concatenate([c.reshape(-1) for c, _ in word_bank])))
    bg = rng.uniform(med - cfg.background_interval, med + cfg.background_interval)
    canvas = bg + rng.normal(0.0, cfg.canvas_noise_sigma, (canvas_h, canvas_w))
    canvas = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)

    by_class: dict[str, list[GrayImage]] = {}
    for crop, label in word_bank:
        by_class.setdefault(label, []).append(crop)
    classes = sorted(by_class)

    gts: list[tuple[Box, str]] = []
    x, y, row_h = cfg.margin, cfg.margin, 0
    while max_words is None or len(gts) < max_words:
        label = classes[rng.integers(len(classes))]
        instances = by_class[label]
        crop = instances[rng.integers(len(instances))]
        word = _tighten(_augment_crop(crop, rng, cfg))
        if word.size == 0 or not (word < INK_THRESHOLD).any():
            word = _tighten(crop)
        wh, ww = word.shape
        if x + ww > canvas_w - cfg.margin:
            x = cfg.margin
            y += row_h + cfg.row_gap
            row_h = 0
        if y + wh > canvas_h - cfg.margin:
            break  # page full
        region = canvas[y : y + wh, x : x + ww]
        canvas[y : y + wh, x : x + ww] = np.minimum(region, word)
        gts.append((Box.from_corners(x, y, x + ww, y + wh), label))
        x += ww + cfg.word_gap
        row_h = max(row_h, wh)
    return canvas, gts


# ---------------------------------------------------------------------------
# Procedural glyph corpus

GLYPH_ROWS = 5
GLYPH_COLS = 3
GLYPH_GAP = 1  # pattern px between glyphs

GLYPHS: dict[str, tuple[str, ...]] = {
    "0": ("111", "101", "101", "101", "111"),
    "1": ("010", "110", "010", "010", "111"),
    "2": ("111", "001", "111", "100", "111"),
    "3": ("111", "001", "111", "001", "111"),
    "4": ("101", "101", "111", "001", "001"),
    "5": ("111", "100", "111", "001", "111"),
    "6": ("111", "100", "111", "101", "111"),
    "7": ("111", "001", "010", "010", "010"),
    "8": ("111", "101", "111", "101", "111"),
    "9": ("111", "101", "111", "001", "111"),
    "a": ("010", "101", "111", "101", "101"),
    "b": ("110", "101", "110", "101", "110"),
    "c": ("011", "100", "100", "100", "011"),
    "d": ("110", "101", "101", "101", "110"),
    "e": ("111", "100", "110", "100", "111"),
    "f": ("111", "100", "110", "100", "100"),
    "g": ("011", "100", "101", "101", "011"),
    "h": ("101", "101", "111", "101", "101"),
    "i": ("111", "010", "010", "010", "111"),
    "j": ("001", "001", "001", "101", "010"),
    "k": ("101", "110", "100", "110", "101"),
    "l": ("100", "100", "100", "100", "111"),
    "m": ("101", "111", "111", "101", "101"),
    "n": ("110", "101", "101", "101", "101"),
    "o": ("010", "101", "101", "101", "010"),
    "p": ("110", "101", "110", "100", "100"),
    "q": ("011", "101", "101", "011", "001"),
    "r": ("110", "101", "110", "110", "101"),
    "s": ("011", "100", "010", "001", "110"),
    "t": ("111", "010", "010", "010", "010"),
    "u": ("101", "101", "101", "101", "111"),
    "v": ("101", "101", "101", "101", "010"),
    "w": ("101", "101", "111", "111", "101"),
    "x": ("101", "101", "010", "101", "101"),
    "y": ("101", "101", "010", "010", "010"),
    "z": ("111", "001", "010", "100", "111"),
}


def render_word(word: str, scale: int = 3) -> GrayImage:
    """Rasterize a word from the bitmap font, dark ink on white.

    Width is scale*(3*len(word) + (len(word)-1)): glyphs are 3 pattern px
    wide with a 1 pattern px gap, all multiplied by the scale factor.
    """
    if not word:
        raise EmptyCorpus("cannot render an empty word")
    for ch in word:
        if ch not in GLYPHS:
            raise KeyError(f"no glyph for character {ch!r}")
    cols = GLYPH_COLS * len(word) + GLYPH_GAP * (len(word) - 1)
    grid = np.zeros((GLYPH_ROWS, cols), dtype=bool)
    for k, ch in enumerate(word):
        cx = k * (GLYPH_COLS + GLYPH_GAP)
        for r, row in enumerate(GLYPHS[ch]):
            for c, bit in enumerate(row):
                if bit == "1":
                    grid[r, cx + c] = True
    big = np.kron(grid, np.ones((scale, scale), dtype=bool))
    img = np.full(big.shape, 255, dtype=np.uint8)
    img[big] = 0
    return img


@dataclass(frozen=True)
class SyntheticCorpusConfig:
    vocabulary: tuple[str, ...]
    scale: int = 3
    pages: int = 4
    words_per_page: int = 40
    canvas_w: int = 760
    canvas_h: int = 560
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0

    def __post_init__(self):
        if not self.vocabulary:
            raise EmptyCorpus("vocabulary is empty")
        if self.scale < 1:
            raise ValueError("scale must be >= 1")
        used = {ch for w in self.vocabulary for ch in w}
        missing = used - set(GLYPHS)
        if missing:
            raise KeyError(f"no glyphs for {sorted(missing)}")
        patterns = [GLYPHS[ch] for ch in sorted(used)]
        if len(set(patterns)) != len(patterns):
            raise ValueError("duplicate glyph patterns in the font table")


def generate_synthetic_corpus(
    cfg: SyntheticCorpusConfig,
) -> list[tuple[GrayImage, list[tuple[Box, str]]]]:
    """Render glyph pages with exact ground truth, one rng stream per page.

    Page p uses seed cfg.seed + p, so any subset of pages can be produced
    independently with identical output.
    """
    bank = [(render_word(w, cfg.scale), w) for w in cfg.vocabulary]
    out = []
    for p in range(cfg.pages):
        page_cfg = replace(cfg.augment, seed=cfg.seed + p)
        out.append(
            augment_full_page(
                bank, cfg.canvas_w, cfg.canvas_h, page_cfg, max_words=cfg.words_per_page
            )
        )
    return out


# ---------------------------------------------------------------------------
# Ground-truth sidecar: {page: file, words: [{x, y, w, h, label}]}


def write_ground_truth(
    path: str | Path, page_file: str, gts: Sequence[tuple[Box, str]]
) -> None:
    words = []
    for box, label in gts:
        words.append(
            {
                "x": int(round(box.x0)),
                "y": int(round(box.y0)),
                "w": int(round(box.w)),
                "h": int(round(box.h)),
                "label": label,
            }
        )
    doc = {"page": page_file, "words": words}
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def read_ground_truth(path: str | Path) -> tuple[str, list[tuple[Box, str]]]:
    with open(path) as f:
        doc = json.load(f)
    gts = []
    for w in doc["words"]:
        gts.append((Box.from_xywh(w["x"], w["y"], w["w"], w["h"]), w["label"]))
    return doc["page"], gts
