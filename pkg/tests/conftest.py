"""Shared strategies and naive oracles for the test-suite.

The oracles deliberately avoid the package's own helpers: they walk pixels
one by one over dense boolean arrays.
"""

from __future__ import annotations

import numpy as np
import hypothesis.strategies as st
from hypothesis import settings

from desens.core import BBox, Category, FaceTriMask, ObjectInstance, PixelMask

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


# ---------------------------------------------------------------------------
# strategies

@st.composite
def dense_masks(draw, width=None, height=None, min_side=1, max_side=16):
    w = width or draw(st.integers(min_side, max_side))
    h = height or draw(st.integers(min_side, max_side))
    seed = draw(st.integers(0, 2**32 - 1))
    density = draw(st.sampled_from([0.0, 0.1, 0.3, 0.6, 1.0]))
    return np.random.default_rng(seed).random((h, w)) < density


@st.composite
def mask_pairs(draw, max_side=16):
    w = draw(st.integers(1, max_side))
    h = draw(st.integers(1, max_side))
    return draw(dense_masks(w, h)), draw(dense_masks(w, h))


@st.composite
def boxes(draw, limit=40.0):
    x0 = draw(st.floats(0, limit, allow_nan=False))
    y0 = draw(st.floats(0, limit, allow_nan=False))
    w = draw(st.floats(0.5, limit, allow_nan=False))
    h = draw(st.floats(0.5, limit, allow_nan=False))
    return BBox(x0, y0, x0 + w, y0 + h)


@st.composite
def int_boxes(draw, limit=30):
    x0 = draw(st.integers(0, limit))
    y0 = draw(st.integers(0, limit))
    return BBox(x0, y0, x0 + draw(st.integers(1, limit)), y0 + draw(st.integers(1, limit)))


# ---------------------------------------------------------------------------
# oracles

def naive_count(a: np.ndarray) -> int:
    n = 0
    for row in a:
        for v in row:
            n += bool(v)
    return n


def naive_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = union = 0
    for y in range(a.shape[0]):
        for x in range(a.shape[1]):
            inter += bool(a[y, x] and b[y, x])
            union += bool(a[y, x] or b[y, x])
    return inter / union


def naive_box_overlap(a: BBox, b: BBox) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    return w * h if w > 0 and h > 0 else 0.0


def naive_box_iou(a: BBox, b: BBox) -> float:
    i = naive_box_overlap(a, b)
    return i / ((a.x_max - a.x_min) * (a.y_max - a.y_min) + (b.x_max - b.x_min) * (b.y_max - b.y_min) - i)


def naive_bounds(a: np.ndarray) -> tuple[int, int, int, int]:
    xs = [x for y in range(a.shape[0]) for x in range(a.shape[1]) if a[y, x]]
    ys = [y for y in range(a.shape[0]) for x in range(a.shape[1]) if a[y, x]]
    return min(xs), min(ys), max(xs) + 1, max(ys) + 1


def naive_band_ioff(pred: np.ndarray, regions: list[np.ndarray], face_box: BBox, weights) -> float:
    """Region IoU against horizontal bands of the face box, skipping empty regions."""
    h, w = pred.shape
    xs = [x for x in range(w) if face_box.x_min <= x + 0.5 < face_box.x_max]
    total = wsum = 0.0
    for reg, wt in zip(regions, weights):
        rows = sorted({y for y in range(h) for x in range(w) if reg[y, x]})
        if not rows:
            continue
        band = np.zeros_like(pred)
        for y in range(rows[0], rows[-1] + 1):
            for x in xs:
                band[y, x] = True
        inter = naive_count(pred & reg)
        union = naive_count((pred & band) | reg)
        total += wt * inter / union
        wsum += wt
    return total / wsum


def face_object(width: int, height: int, box: tuple[int, int, int, int], cuts=(1 / 3, 2 / 3),
                confidence=None) -> ObjectInstance:
    """Rectangular GT face split into three stacked bands."""
    x0, y0, x1, y1 = box
    rows = y1 - y0
    c1 = y0 + max(1, round(rows * cuts[0]))
    c2 = max(c1 + 1, y0 + round(rows * cuts[1]))
    parts = []
    for a, b in ((y0, c1), (c1, c2), (c2, y1)):
        d = np.zeros((height, width), dtype=bool)
        d[a:b, x0:x1] = True
        parts.append(PixelMask.from_dense(d))
    return ObjectInstance(Category.FACE, BBox(x0, y0, x1, y1), tri=FaceTriMask(*parts), confidence=confidence)


def plate_object(mask: PixelMask, confidence=None, track_id=None) -> ObjectInstance:
    x0, y0, x1, y1 = mask.bounds
    return ObjectInstance(Category.PLATE, BBox(x0, y0, x1, y1), mask=mask, confidence=confidence,
                          track_id=track_id)


def pr_oracle(hits: list[tuple[float, bool]], n_gt: int) -> float:
    """Area under the interpolated PR curve, enumerated cut by cut.

    For every rank cut k the precision/recall point is computed from scratch;
    interpolated precision at recall r is the max precision of any cut with
    recall >= r; the area sums rectangles over recall steps.
    """
    ranked = sorted(hits, key=lambda t: -t[0])
    points = []
    for k in range(1, len(ranked) + 1):
        tp = sum(1 for _, h in ranked[:k] if h)
        points.append((tp / n_gt, tp / k))
    area, prev_r = 0.0, 0.0
    for r, _ in sorted(set(points)):
        if r > prev_r:
            area += (r - prev_r) * max(p for rr, p in points if rr >= r)
            prev_r = r
    return area


def naive_ap(preds, gts, threshold: float) -> float:
    """Greedy confidence-ordered box matching followed by the PR enumeration oracle.

    preds: [(frame, conf, BBox)], gts: [(frame, BBox)].
    """
    used = [False] * len(gts)
    hits = []
    for f, conf, box in sorted(preds, key=lambda t: -t[1]):
        best, best_j = -1.0, None
        for j, (g_f, g_box) in enumerate(gts):
            if g_f != f or used[j]:
                continue
            s = naive_box_iou(box, g_box)
            if s > best:
                best, best_j = s, j
        hit = best_j is not None and best >= threshold
        if hit:
            used[best_j] = True
        hits.append((conf, hit))
    return pr_oracle(hits, len(gts))


@st.composite
def small_scenes(draw, max_objects=10, frames=3):
    """Random GT/pred box sets: predictions are perturbed GT boxes plus strays."""
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    n_gt = int(rng.integers(1, max_objects + 1))
    gts = []
    for _ in range(n_gt):
        x, y = rng.uniform(0, 60, 2)
        w, h = rng.uniform(4, 20, 2)
        gts.append((int(rng.integers(frames)), BBox(x, y, x + w, y + h)))
    preds = []
    for f, b in gts:
        if rng.random() < 0.8:
            d = rng.normal(0, 2.5, 4)
            cx, cy = b.center
            nb = BBox.from_center(cx + d[0], cy + d[1], max(1.0, b.width + d[2]), max(1.0, b.height + d[3]))
            preds.append((f, round(float(rng.random()), 2), nb))
    for _ in range(int(rng.integers(0, 4))):
        x, y = rng.uniform(0, 60, 2)
        preds.append((int(rng.integers(frames)), round(float(rng.random()), 2), BBox(x, y, x + 8, y + 8)))
    return preds, gts


# ---------------------------------------------------------------------------
# acceptance verdict lines, echoed in the terminal summary

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
