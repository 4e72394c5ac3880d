"""Binary PPM (P6) frames and the redaction styles applied to them."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np

from .core import PixelMask, ValidationError
from .geometry import min_bbox
from .metrics import coverage_ratio
from .postproc import DesensRegion

REGULATION_FLOOR = 0.5


class ImageFormatError(ValidationError):
    pass


@dataclass(frozen=True, eq=False)
class Image:
    pixels: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ValidationError("image pixels must be an (h, w, 3) uint8 array")
        px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def blank(cls, width: int, height: int, color=(0, 0, 0)) -> Image:
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[:] = color
        return cls(px)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Image):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    __hash__ = None


_HEADER = re.compile(rb"P6(?:\s+|#[^\n]*\n)+?(\d+)(?:\s+|#[^\n]*\n)+?(\d+)(?:\s+|#[^\n]*\n)+?(\d+)\s")


def read_image(data: bytes) -> Image:
    m = _HEADER.match(data)
    if m is None:
        raise ImageFormatError("malformed P6 header")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}")
    if w <= 0 or h <= 0:
        raise ImageFormatError("image dimensions must be positive")
    body = data[m.end():]
    need = 3 * w * h
    if len(body) < need:
        raise ImageFormatError(f"truncated payload: {len(body)} of {need} bytes")
    return Image(np.frombuffer(body[:need], dtype=np.uint8).reshape(h, w, 3))


def write_image(img: Image) -> bytes:
    return b"P6\n%d %d\n255\n" % (img.width, img.height) + img.pixels.tobytes()


# ---------------------------------------------------------------------------
# styles

@dataclass(frozen=True)
class Mosaic:
    block: int = 8

    def __post_init__(self):
        if self.block < 2:
            raise ValidationError("mosaic block must be >= 2")


@dataclass(frozen=True)
class Solid:
    color: tuple[int, int, int] = (128, 128, 128)


@dataclass(frozen=True, eq=False)
class Icon:
    image: Image
    alpha: np.ndarray | None = None  # (h, w) bool/uint8; None means opaque
    anchor: Literal["center", "top-left"] = "center"


RedactStyle = Mosaic | Solid | Icon


def default_icon(size: int = 16) -> Icon:
    """A flat smiley disc on a transparent background."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    r = size / 2
    d = np.hypot(xx - r, yy - r)
    px = np.zeros((size, size, 3), dtype=np.uint8)
    px[:] = (250, 210, 40)
    eyes = (np.hypot(xx - 0.35 * size, yy - 0.38 * size) < size * 0.08) | (
        np.hypot(xx - 0.65 * size, yy - 0.38 * size) < size * 0.08)
    mouth = (np.abs(d - 0.28 * size) < size * 0.05) & (yy > 0.55 * size)
    px[eyes | mouth] = (40, 30, 20)
    return Icon(Image(px), alpha=d <= r)


def _resize_nearest(a: np.ndarray, h: int, w: int) -> np.ndarray:
    ys = (np.arange(h) * a.shape[0]) // h
    xs = (np.arange(w) * a.shape[1]) // w
    return a[ys][:, xs]


def apply_with_mask(img: Image, region: DesensRegion, style: RedactStyle) -> tuple[Image, PixelMask]:
    """Redact one region; returns the new image and the pixels actually written."""
    mask = region.mask
    if (mask.width, mask.height) != (img.width, img.height):
        raise ValidationError("region mask does not match the image size")
    out = img.pixels.copy()
    x0, y0, x1, y1 = mask.bounds
    sub = mask.bits
    if isinstance(style, Solid):
        out[y0:y1, x0:x1][sub] = style.color
        applied = mask
    elif isinstance(style, Mosaic):
        b = style.block
        # cells are aligned to the image grid
        for cy in range((y0 // b) * b, y1, b):
            for cx in range((x0 // b) * b, x1, b):
                ys, ye = max(cy, y0), min(cy + b, y1)
                xs, xe = max(cx, x0), min(cx + b, x1)
                cell = sub[ys - y0:ye - y0, xs - x0:xe - x0]
                n = int(cell.sum())
                if not n:
                    continue
                view = out[ys:ye, xs:xe]
                tot = view[cell].astype(np.int64).sum(axis=0)
                view[cell] = (tot + n // 2) // n
        applied = mask
    elif isinstance(style, Icon):
        out, applied = _apply_icon(out, mask, style)
    else:
        raise ValidationError(f"unknown style {style!r}")
    return Image(out), applied


def _apply_icon(out: np.ndarray, mask: PixelMask, style: Icon) -> tuple[np.ndarray, PixelMask]:
    box = min_bbox(mask)
    bx0, by0, bx1, by1 = (int(v) for v in box.as_list())
    bw, bh = bx1 - bx0, by1 - by0
    ih, iw = style.image.height, style.image.width
    alpha = np.ones((ih, iw), dtype=bool) if style.alpha is None else np.asarray(style.alpha) > 0

    def place(w: int, h: int):
        w, h = max(1, min(w, bw)), max(1, min(h, bh))
        if style.anchor == "center":
            ox, oy = bx0 + (bw - w) // 2, by0 + (bh - h) // 2
        else:
            ox, oy = bx0, by0
        a = np.zeros((mask.height, mask.width), dtype=bool)
        a[oy:oy + h, ox:ox + w] = _resize_nearest(alpha, h, w)
        return ox, oy, w, h, PixelMask.from_dense(a)

    scale = min(bw / iw, bh / ih)
    ox, oy, w, h, applied = place(round(iw * scale), round(ih * scale))
    if coverage_ratio(applied, mask) < REGULATION_FLOOR:
        ox, oy, w, h, applied = place(bw, bh)  # stretch to the whole box
    icon = _resize_nearest(style.image.pixels, h, w)
    a = applied.window(ox, oy, ox + w, oy + h)
    out[oy:oy + h, ox:ox + w][a] = icon[a]
    if coverage_ratio(applied, mask) < REGULATION_FLOOR:
        # icon shape too sparse: fill the rest of the region grey
        rest = mask - applied
        rx0, ry0, rx1, ry1 = rest.bounds
        out[ry0:ry1, rx0:rx1][rest.bits] = Solid().color
        applied = applied | mask
    assert coverage_ratio(applied, mask) >= REGULATION_FLOOR
    return out, applied


def apply(img: Image, region: DesensRegion, style: RedactStyle) -> Image:
    return apply_with_mask(img, region, style)[0]


def apply_all(img: Image, regions: Iterable[DesensRegion], style: RedactStyle) -> tuple[Image, PixelMask]:
    """Redact every region in order; returns the image and the union of written pixels."""
    covered = PixelMask.empty(img.width, img.height)
    for r in regions:
        img, a = apply_with_mask(img, r, style)
        covered = covered | a
    return img, covered


def parse_style(text: str) -> RedactStyle:
    """'solid', 'solid:R,G,B', 'mosaic', 'mosaic:BLOCK' or 'icon'."""
    name, _, arg = text.partition(":")
    if name == "solid":
        if not arg:
            return Solid()
        parts = [int(v) for v in arg.split(",")]
        if len(parts) != 3 or any(not 0 <= v <= 255 for v in parts):
            raise ValidationError(f"bad solid color {arg!r}")
        return Solid(tuple(parts))
    if name == "mosaic":
        return Mosaic(int(arg)) if arg else Mosaic()
    if name == "icon":
        return default_icon()
    raise ValidationError(f"unknown style {text!r}")
