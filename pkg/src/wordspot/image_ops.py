"""Grayscale raster primitives.

Images are (H, W) uint8 numpy arrays with 0 = black ink and 255 = white
paper; binary images are (H, W) bool arrays where True marks foreground
(ink).  All sampling uses the half-pixel convention: pixel (i, j) occupies
the unit square [j, j+1) x [i, i+1) and its center sits at (j+0.5, i+0.5).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DegenerateBox
from .geometry import Box

GrayImage = np.ndarray  # (H, W) uint8
BinaryImage = np.ndarray  # (H, W) bool

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class StructuringElement:
    """Rectangular morphology kernel with odd side lengths."""

    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1 or self.w % 2 == 0 or self.h % 2 == 0:
            raise ValueError(f"kernel sides must be odd and >= 1, got {self.w}x{self.h}")


def _as_gray(img: np.ndarray) -> GrayImage:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-d grayscale array, got shape {img.shape}")
    return img.astype(np.uint8, copy=False)


def _sample_bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear lookup at center-space coordinates, clamping to the border."""
    h, w = img.shape
    x = np.clip(xs, 0.0, w - 1.0)
    y = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    v = img.astype(np.float64, copy=False)
    top = v[y0, x0] * (1.0 - fx) + v[y0, x1] * fx
    bot = v[y1, x0] * (1.0 - fx) + v[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def _sample_bilinear_fill(
    img: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill: float
) -> np.ndarray:
    """Bilinear lookup where neighbors outside the image contribute ``fill``."""
    h, w = img.shape
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    fx = xs - x0
    fy = ys - y0
    v = img.astype(np.float64, copy=False)

    def at(yy, xx):
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = np.full(xx.shape, fill, dtype=np.float64)
        vals[inside] = v[yy[inside], xx[inside]]
        return vals

    top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx
    bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx
    return top * (1.0 - fy) + bot * fy


def _roi_grid(box: Box, out_w: int, out_h: int) -> tuple[np.ndarray, np.ndarray]:
    """Center-space sample coordinates for an out_h x out_w grid over a box."""
    jx = (np.arange(out_w) + 0.5) * (box.w / out_w) + box.x0 - 0.5
    iy = (np.arange(out_h) + 0.5) * (box.h / out_h) + box.y0 - 0.5
    return np.meshgrid(jx, iy)


def bilinear_roi_resize(img: GrayImage, box: Box, out_w: int, out_h: int) -> np.ndarray:
    """Resample a box region to out_h x out_w, intensities scaled to [0, 1].

    Output pixel centers map affinely into the box; samples falling outside
    the image clamp to the nearest valid pixel.
    """
    if box.w <= 0 or box.h <= 0:
        raise DegenerateBox(f"box has non-positive size: {box}")
    if out_w < 1 or out_h < 1:
        raise ValueError("output size must be positive")
    xs, ys = _roi_grid(box, out_w, out_h)
    return _sample_bilinear(_as_gray(img), xs, ys) / 255.0


def resize_longest_side(img: GrayImage, target: int) -> tuple[GrayImage, float]:
    """Scale so the longest side equals ``target``, keeping the aspect ratio.

    Returns (resized image, scale); original coordinates times scale give
    resized coordinates.
    """
    if target <= 0:
        raise ValueError("target must be positive")
    img = _as_gray(img)
    h, w = img.shape
    scale = target / max(h, w)
    out_h = max(1, round(h * scale))
    out_w = max(1, round(w * scale))
    if (out_h, out_w) == (h, w):
        return img.copy(), 1.0
    xs, ys = _roi_grid(Box.from_corners(0, 0, w, h), out_w, out_h)
    vals = _sample_bilinear(img, xs, ys)
    return np.clip(np.rint(vals), 0, 255).astype(np.uint8), scale


def resize_by_scale(img: GrayImage, scale: float) -> GrayImage:
    """Rescale by an exact factor, reproducing resize_longest_side output
    for the scale it reported."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    img = _as_gray(img)
    h, w = img.shape
    out_h = max(1, round(h * scale))
    out_w = max(1, round(w * scale))
    if (out_h, out_w) == (h, w):
        return img.copy()
    xs, ys = _roi_grid(Box.from_corners(0, 0, w, h), out_w, out_h)
    vals = _sample_bilinear(img, xs, ys)
    return np.clip(np.rint(vals), 0, 255).astype(np.uint8)


def threshold(img: GrayImage, t: float) -> BinaryImage:
    """Foreground = pixels strictly darker than ``t`` (ink is dark)."""
    return _as_gray(img) < t


def binary_close(img: BinaryImage, se: StructuringElement) -> BinaryImage:
    """Morphological closing (dilate then erode) with background padding.

    The image is treated as embedded in an infinite background plane, so the
    dilation may grow past the borders before the erosion pulls it back;
    this keeps closing idempotent at the edges.
    """
    img = np.asarray(img, dtype=bool)
    if se.w == 1 and se.h == 1:
        return img.copy()
    sh, sw = se.h // 2, se.w // 2
    padded = np.pad(img, ((sh, sh), (sw, sw)), constant_values=False)
    dilated = ndimage.maximum_filter(padded, size=(se.h, se.w), mode="constant", cval=False)
    closed = ndimage.minimum_filter(dilated, size=(se.h, se.w), mode="constant", cval=False)
    return closed[sh : sh + img.shape[0], sw : sw + img.shape[1]]


def gray_dilate(img: GrayImage, se: StructuringElement) -> GrayImage:
    """Grow ink: window minimum (ink is dark), replicating the border."""
    return ndimage.minimum_filter(_as_gray(img), size=(se.h, se.w), mode="nearest")


def gray_erode(img: GrayImage, se: StructuringElement) -> GrayImage:
    """Thin ink: window maximum, replicating the border."""
    return ndimage.maximum_filter(_as_gray(img), size=(se.h, se.w), mode="nearest")


def connected_components(img: BinaryImage) -> list[tuple[Box, int]]:
    """8-connected foreground components as (tight bounding box, pixel area).

    Components are ordered by (top, left) of their bounding boxes.
    """
    img = np.asarray(img, dtype=bool)
    labels, n = ndimage.label(img, structure=_EIGHT_CONNECTED)
    if n == 0:
        return []
    areas = np.bincount(labels.ravel())
    out = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        ys, xs = sl
        box = Box.from_corners(xs.start, ys.start, xs.stop, ys.stop)
        out.append((box, int(areas[i])))
    out.sort(key=lambda t: (t[0].y0, t[0].x0, t[0].y1, t[0].x1))
    return out


def shear(img: GrayImage, angle: float) -> GrayImage:
    """Horizontal shear about the image center by ``angle`` degrees.

    Output has the same size as the input; samples pulled from outside the
    image are filled with the median intensity.
    """
    if abs(angle) > 45:
        raise ValueError("shear angle must be within +/-45 degrees")
    img = _as_gray(img)
    if angle == 0:
        return img.copy()
    h, w = img.shape
    slope = np.tan(np.radians(angle))
    cy = (h - 1) / 2.0
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    src_x = xs + slope * (ys - cy)
    fill = float(np.median(img))
    vals = _sample_bilinear_fill(img, src_x, ys, fill)
    return np.clip(np.rint(vals), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# Codecs: PGM (P5) is hand-rolled and bit-exact; PNG goes through Pillow.


def write_pgm(path: str | Path, img: GrayImage) -> None:
    img = _as_gray(img)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_pgm(path: str | Path) -> GrayImage:
    data = Path(path).read_bytes()
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed; a single whitespace byte ends the header.
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)").match(data, pos)
        if m is None:
            raise ValueError(f"truncated PGM header in {path}")
        tokens.append(m.group(2))
        pos = m.end()
    if tokens[0] != b"P5":
        raise ValueError(f"not a binary PGM file: {path}")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    raster = data[pos : pos + w * h]
    if len(raster) != w * h:
        raise ValueError(f"truncated PGM raster in {path}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w)


def write_png(path: str | Path, img: GrayImage) -> None:
    Image.fromarray(_as_gray(img), mode="L").save(path, format="PNG")


def read_png(path: str | Path) -> GrayImage:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def save_gray(path: str | Path, img: GrayImage) -> None:
    if str(path).lower().endswith(".pgm"):
        write_pgm(path, img)
    else:
        write_png(path, img)


def load_gray(path: str | Path) -> GrayImage:
    if str(path).lower().endswith(".pgm"):
        return read_pgm(path)
    return read_png(path)


def png_bytes(img: GrayImage) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(_as_gray(img), mode="L").save(buf, format="PNG")
    return buf.getvalue()
