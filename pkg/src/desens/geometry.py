"""Box and mask geometry shared by the metrics and the post-processing."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .core import BBox, PixelMask, ValidationError


class EmptyMaskError(ValidationError):
    """An operation that needs set pixels got an empty mask."""


def _overlap(a: BBox, b: BBox) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    return w * h if w > 0 and h > 0 else 0.0


def box_iou(a: BBox, b: BBox) -> float:
    inter = _overlap(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def containment(inner: BBox, outer: BBox) -> float:
    """Fraction of ``inner``'s area that lies inside ``outer``."""
    return _overlap(inner, outer) / inner.area


def mask_iou(a: PixelMask, b: PixelMask) -> float:
    inter = a.intersection_area(b)
    union = a.area + b.area - inter
    if union == 0:
        raise EmptyMaskError("IoU of two empty masks is undefined")
    return inter / union


def min_bbox(m: PixelMask) -> BBox:
    """Tightest box around the set pixels; pixel (x, y) covers [x, x+1] x [y, y+1]."""
    b = m.bounds
    if b is None:
        raise EmptyMaskError("minimum box of an empty mask")
    return BBox(*map(float, b))


_FOUR = ndimage.generate_binary_structure(2, 1)


def connected_components(m: PixelMask) -> list[PixelMask]:
    """4-connected components, ordered by first pixel in row-major order."""
    if not m:
        return []
    labels, n = ndimage.label(m.bits, structure=_FOUR)
    slices = ndimage.find_objects(labels)
    # find_objects orders by label, and ndimage labels in raster-scan order
    out = []
    for k, sl in enumerate(slices, start=1):
        ys, xs = sl
        out.append(PixelMask(m.width, m.height, labels[sl] == k, m.x0 + xs.start, m.y0 + ys.start))
    return out


def erode(m: PixelMask, radius: int) -> PixelMask:
    if radius <= 0 or not m:
        return m
    x0, y0, x1, y1 = m.bounds
    win = m.window(x0 - 1, y0 - 1, x1 + 1, y1 + 1)
    out = ndimage.binary_erosion(win, structure=_FOUR, iterations=radius)
    x0, y0 = x0 - 1, y0 - 1
    return _from_window(m, out, x0, y0)


def dilate(m: PixelMask, radius: int) -> PixelMask:
    if radius <= 0 or not m:
        return m
    x0, y0, x1, y1 = m.bounds
    x0, y0, x1, y1 = x0 - radius, y0 - radius, x1 + radius, y1 + radius
    out = ndimage.binary_dilation(m.window(x0, y0, x1, y1), structure=_FOUR, iterations=radius)
    return _from_window(m, out, x0, y0)


def _from_window(m: PixelMask, arr: np.ndarray, x0: int, y0: int) -> PixelMask:
    """Build a mask from a window that may hang off the frame edges."""
    h, w = arr.shape
    cx0, cy0 = max(0, -x0), max(0, -y0)
    cx1, cy1 = min(w, m.width - x0), min(h, m.height - y0)
    if cx0 >= cx1 or cy0 >= cy1:
        return PixelMask.empty(m.width, m.height)
    return PixelMask(m.width, m.height, arr[cy0:cy1, cx0:cx1], x0 + cx0, y0 + cy0)
