"""Mask rasterization and per-building chip extraction.

A chip is the model-facing sample: the RGB window around one building plus a
binary mask channel marking its roof polygon. Chips are cut with a margin on
every side of the polygon bounding box; window area outside the source image
is zero-filled so a chip's size depends only on the bbox and the margin.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, PngImagePlugin, UnidentifiedImageError

from roofstack.errors import ChipCodecError, ChipError
from roofstack.geodata import Building, Point, Polygon, polygon_bbox


@dataclass(frozen=True, eq=False)
class ImageRGB:
    """8-bit RGB raster, pixels shaped (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3 or self.pixels.dtype != np.uint8:
            raise ChipError(f"ImageRGB wants uint8 (H, W, 3), got {self.pixels.dtype} {self.pixels.shape}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True, eq=False)
class Chip:
    """RGB window plus binary roof mask for one building.

    ``margin`` records the pixel margin used at extraction; augmentation crops
    are expressed relative to it. Mask values are exactly 0 or 255.
    """

    rgb: np.ndarray
    mask: np.ndarray
    margin: int
    building_id: str

    def __post_init__(self):
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3 or self.rgb.dtype != np.uint8:
            raise ChipError(f"chip rgb wants uint8 (H, W, 3), got {self.rgb.dtype} {self.rgb.shape}")
        if self.mask.shape != self.rgb.shape[:2] or self.mask.dtype != np.uint8:
            raise ChipError("chip mask must be uint8 and share the rgb height/width")

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def height(self) -> int:
        return self.rgb.shape[0]


def chips_equal(a: Chip, b: Chip) -> bool:
    return (
        a.building_id == b.building_id
        and a.margin == b.margin
        and np.array_equal(a.rgb, b.rgb)
        and np.array_equal(a.mask, b.mask)
    )


def rasterize_mask(p: Polygon, origin: Point, width: int, height: int) -> np.ndarray:
    """Even-odd fill of the polygon over a pixel grid.

    Pixel (row i, col j) is 255 iff its center (origin.x + j + 0.5,
    origin.y + i + 0.5) lies inside the polygon by the even-odd rule.
    """
    if width <= 0 or height <= 0:
        raise ChipError(f"mask window must be positive, got {width}x{height}")
    cx = origin.x + np.arange(width, dtype=np.float64) + 0.5
    cy = origin.y + np.arange(height, dtype=np.float64) + 0.5
    px = np.broadcast_to(cx[None, :], (height, width))
    py = np.broadcast_to(cy[:, None], (height, width))

    inside = np.zeros((height, width), dtype=bool)
    pts = p.exterior
    n = len(pts)
    for i in range(n):
        x1, y1 = pts[i].x, pts[i].y
        x2, y2 = pts[(i + 1) % n].x, pts[(i + 1) % n].y
        crosses = (y1 > py) != (y2 > py)
        if not crosses.any():
            continue
        # x of the edge at each scanline; guarded by `crosses` so y2 != y1 there
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < xint)
    return np.where(inside, np.uint8(255), np.uint8(0))


def chip_window(b: Building, margin: int) -> tuple[int, int, int, int]:
    """Integer window (x0, y0, x1, y1), half-open, covering bbox + margin."""
    lo, hi = polygon_bbox(b.polygon)
    x0 = math.floor(lo.x) - margin
    y0 = math.floor(lo.y) - margin
    x1 = math.ceil(hi.x) + margin
    y1 = math.ceil(hi.y) + margin
    if x1 <= x0:
        x1 = x0 + 1
    if y1 <= y0:
        y1 = y0 + 1
    return x0, y0, x1, y1


def extract_chip(img: ImageRGB, b: Building, margin: int) -> Chip:
    """Cut the building's window from the map image, mask channel included.

    The window is the polygon bbox expanded by ``margin`` on every side.
    Portions outside the image are zero-filled; the chip keeps its full
    requested size either way. Raises :class:`ChipError` when the bbox lies
    entirely outside the image.
    """
    if margin < 0:
        raise ChipError(f"margin must be >= 0, got {margin}")
    lo, hi = polygon_bbox(b.polygon)
    if math.ceil(hi.x) <= 0 or math.floor(lo.x) >= img.width or math.ceil(hi.y) <= 0 or math.floor(lo.y) >= img.height:
        raise ChipError(f"building {b.id!r}: bbox entirely outside the {img.width}x{img.height} image")

    x0, y0, x1, y1 = chip_window(b, margin)
    w, h = x1 - x0, y1 - y0
    rgb = np.zeros((h, w, 3), dtype=np.uint8)

    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x1, img.width), min(y1, img.height)
    if sx1 > sx0 and sy1 > sy0:
        rgb[sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0] = img.pixels[sy0:sy1, sx0:sx1]

    mask = rasterize_mask(b.polygon, Point(float(x0), float(y0)), w, h)
    return Chip(rgb=rgb, mask=mask, margin=margin, building_id=b.id)


def encode_chip(c: Chip) -> bytes:
    """Serialize a chip as a 4-channel PNG, alpha = mask; metadata in text chunks."""
    rgba = np.dstack([c.rgb, c.mask])
    info = PngImagePlugin.PngInfo()
    info.add_text("roofstack:building_id", c.building_id)
    info.add_text("roofstack:margin", str(c.margin))
    buf = io.BytesIO()
    Image.fromarray(rgba, mode="RGBA").save(buf, format="PNG", pnginfo=info)
    return buf.getvalue()


def decode_chip(data: bytes) -> Chip:
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            if im.mode != "RGBA":
                raise ChipCodecError(f"chip PNG must be RGBA, got mode {im.mode!r}")
            text = dict(getattr(im, "text", {}))
            rgba = np.asarray(im, dtype=np.uint8)
    except ChipCodecError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise ChipCodecError(f"cannot decode chip PNG: {exc}") from exc
    try:
        building_id = text["roofstack:building_id"]
        margin = int(text["roofstack:margin"])
    except (KeyError, ValueError) as exc:
        raise ChipCodecError("chip PNG is missing roofstack metadata") from exc
    return Chip(rgb=rgba[:, :, :3].copy(), mask=rgba[:, :, 3].copy(), margin=margin, building_id=building_id)


def write_chip(c: Chip, path: str | Path) -> None:
    Path(path).write_bytes(encode_chip(c))


def read_chip(path: str | Path) -> Chip:
    return decode_chip(Path(path).read_bytes())


def load_image_rgb(path: str | Path) -> ImageRGB:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise ChipCodecError(f"cannot read image {path}: {exc}") from exc
    return ImageRGB(arr)


def save_image_rgb(img: ImageRGB, path: str | Path) -> None:
    Image.fromarray(img.pixels, mode="RGB").save(path, format="PNG")
