"""Detection AP and the facial-importance-weighted desensitization scores.

IoFF for a face is a weighted sum of three region IoUs. The predicted mask is a
single blob, so each region's IoU compares the prediction restricted to the
horizontal band of that ground-truth region (across the face box) with the
region itself. For plates IoFF is plain mask IoU.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np

from .core import SENSITIVE, Category, ObjectInstance, PixelMask, ValidationError
from .geometry import box_iou, mask_iou


class EmptyEvaluationError(ValidationError):
    """No ground truth to score against."""


@dataclass(frozen=True)
class RegionWeights:
    above: float = 0.25
    mid: float = 0.50
    below: float = 0.25

    def __post_init__(self):
        ws = self.as_tuple()
        if any(w < 0 or not math.isfinite(w) for w in ws):
            raise ValidationError(f"region weights must be finite and non-negative: {ws}")
        if abs(sum(ws) - 1.0) > 1e-9:
            raise ValidationError(f"region weights must sum to 1, got {sum(ws)}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.above, self.mid, self.below)


def region_ious(pred_mask: PixelMask, gt: ObjectInstance) -> list[float | None]:
    """Per-region IoU for a ground-truth face; None for an empty (occluded) region."""
    if gt.tri is None:
        raise ValidationError("face ground truth without tri-regions")
    gt.tri.above._check(pred_mask)
    x0, _, x1, _ = gt.bbox.pixel_span(gt.tri.above.width, gt.tri.above.height)
    # the box encloses the mask, but widen to the mask in case of sub-pixel rounding
    mb = gt.mask.bounds
    if mb is not None:
        x0, x1 = min(x0, mb[0]), max(x1, mb[2])
    out: list[float | None] = []
    for region in gt.tri.regions:
        b = region.bounds
        if b is None:
            out.append(None)
            continue
        _, y0, _, y1 = b
        g = region.window(x0, y0, x1, y1)
        p = pred_mask.window(x0, y0, x1, y1)
        inter = np.count_nonzero(g & p)
        union = np.count_nonzero(g | p)
        out.append(inter / union)
    return out


def ioff(pred_mask: PixelMask, gt: ObjectInstance, w: RegionWeights = RegionWeights()) -> float:
    if gt.category is Category.PLATE:
        if gt.mask is None:
            raise ValidationError("plate ground truth without mask")
        return mask_iou(pred_mask, gt.mask)
    if gt.category is not Category.FACE:
        raise ValidationError(f"IoFF is undefined for {gt.category.value}")
    ious = region_ious(pred_mask, gt)
    pairs = [(wi, v) for wi, v in zip(w.as_tuple(), ious) if v is not None]
    total = sum(wi for wi, _ in pairs)
    if total == 0:
        # every weighted region is occluded; fall back to plain IoU over the visible face
        return mask_iou(pred_mask, gt.mask)
    return sum(wi * v for wi, v in pairs) / total


def coverage_ratio(applied: PixelMask, gt_region: PixelMask) -> float:
    if not gt_region:
        raise EmptyEvaluationError("coverage of an empty region")
    return applied.intersection_area(gt_region) / gt_region.area


# ---------------------------------------------------------------------------
# matching and AP

Key = Hashable


@dataclass
class MatchResult:
    """Greedy one-to-one assignment; indices are whatever keys the caller used."""

    pairs: list[tuple[Key, Key, float]] = field(default_factory=list)
    unmatched_preds: list[Key] = field(default_factory=list)
    unmatched_gts: list[Key] = field(default_factory=list)

    def extend(self, other: MatchResult) -> None:
        self.pairs.extend(other.pairs)
        self.unmatched_preds.extend(other.unmatched_preds)
        self.unmatched_gts.extend(other.unmatched_gts)


Measure = Callable[[object, object], float]


def greedy_match(
    preds: Sequence[tuple[Key, float, object]],
    gts: Sequence[tuple[Key, object]],
    measure: Measure,
    threshold: float = 0.0,
    strict: bool = True,
) -> MatchResult:
    """Match predictions (key, confidence, payload) to ground truths (key, payload).

    Predictions are visited by descending confidence (ties keep input order);
    each takes the free ground truth with the highest measure, accepted when
    the measure exceeds ``threshold`` (``>`` when ``strict`` else ``>=``).
    """
    order = sorted(range(len(preds)), key=lambda i: -preds[i][1])
    used = [False] * len(gts)
    res = MatchResult()
    for i in order:
        key, _, p = preds[i]
        best, best_j = -1.0, -1
        for j, (_, g) in enumerate(gts):
            if used[j]:
                continue
            s = measure(p, g)
            if s > best:
                best, best_j = s, j
        ok = best_j >= 0 and (best > threshold if strict else best >= threshold)
        if ok:
            used[best_j] = True
            res.pairs.append((key, gts[best_j][0], best))
        else:
            res.unmatched_preds.append(key)
    res.unmatched_gts = [gts[j][0] for j in range(len(gts)) if not used[j]]
    return res


def ranked_hits(
    preds: Sequence[tuple[Hashable, float, object]],
    gts: Sequence[tuple[Hashable, object]],
    measure: Measure,
    threshold: float,
) -> list[tuple[float, bool]]:
    """(confidence, is_tp) in ranking order; preds/gts are grouped by their first element (the frame)."""
    by_frame: dict[Hashable, list[object]] = {}
    for f, g in gts:
        by_frame.setdefault(f, []).append(g)
    used = {f: [False] * len(v) for f, v in by_frame.items()}
    order = sorted(range(len(preds)), key=lambda i: -preds[i][1])
    out = []
    for i in order:
        f, conf, p = preds[i]
        cands = by_frame.get(f, [])
        best, best_j = -1.0, -1
        for j, g in enumerate(cands):
            if used[f][j]:
                continue
            s = measure(p, g)
            if s > best:
                best, best_j = s, j
        tp = best_j >= 0 and best >= threshold
        if tp:
            used[f][best_j] = True
        out.append((conf, tp))
    return out


def ap_from_hits(hits: Sequence[tuple[float, bool]], n_gt: int) -> float:
    """All-point interpolated area under the precision/recall curve."""
    if n_gt <= 0:
        raise EmptyEvaluationError("average precision with no ground truth")
    if not hits:
        return 0.0
    tp = np.cumsum([h for _, h in hits], dtype=float)
    fp = np.cumsum([not h for _, h in hits], dtype=float)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    # monotone envelope from the right
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev) * env))


def average_precision(
    preds: Sequence[tuple[Hashable, float, object]],
    gts: Sequence[tuple[Hashable, object]],
    measure: Measure,
    threshold: float,
) -> float:
    """AP of frame-keyed predictions ``(frame, confidence, payload)`` against ``(frame, payload)``.

    A prediction is a true positive when it takes a free ground truth of the
    same frame with ``measure >= threshold``.
    """
    if not gts:
        raise EmptyEvaluationError("average precision with no ground truth")
    return ap_from_hits(ranked_hits(preds, gts, measure, threshold), len(gts))


def box_measure(p: ObjectInstance, g: ObjectInstance) -> float:
    return box_iou(p.bbox, g.bbox)


def ioff_measure(w: RegionWeights = RegionWeights()) -> Measure:
    def measure(p, g: ObjectInstance) -> float:
        m = p if isinstance(p, PixelMask) else p.mask
        # cheap reject: no pixel overlap means every region IoU is zero
        if m.intersection_area(g.mask) == 0:
            return 0.0
        return ioff(m, g, w)
    return measure


def ioff_at(preds, gts, tau: float, w: RegionWeights = RegionWeights()) -> float:
    """Thresholded AP with IoFF as the match measure (tau=0.5 gives IOFF50)."""
    return average_precision(preds, gts, ioff_measure(w), tau)


def mioff(matches: Mapping[Category, MatchResult] | MatchResult) -> float:
    """Mean IoFF over sensitive instances.

    Missed ground truth scores 0; so does every unmatched prediction (a
    redaction with no object under it), so the denominator is
    ``#gt + #unmatched predictions``. Categories with instances are averaged
    unweighted.
    """
    if isinstance(matches, MatchResult):
        matches = {Category.FACE: matches}
    means = []
    for cat in SENSITIVE:
        m = matches.get(cat)
        if m is None:
            continue
        n_gt = len(m.pairs) + len(m.unmatched_gts)
        if n_gt == 0:
            continue
        means.append(sum(s for _, _, s in m.pairs) / (n_gt + len(m.unmatched_preds)))
    if not means:
        raise EmptyEvaluationError("no sensitive ground-truth instances")
    return float(sum(means) / len(means))


# ---------------------------------------------------------------------------
# sequence evaluation

COCO_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2))


@dataclass
class EvalReport:
    ap: dict[str, float] = field(default_factory=dict)
    ap50: dict[str, float] = field(default_factory=dict)
    ap75: dict[str, float] = field(default_factory=dict)
    mioff: float | None = None
    ioff50: float | None = None
    ioff75: float | None = None
    per_frame: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        d: dict = {"ap": self.ap, "ap50": self.ap50, "ap75": self.ap75, "per_frame": self.per_frame}
        for k in ("mioff", "ioff50", "ioff75"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        return d


def pred_mask(o: ObjectInstance, width: int, height: int) -> PixelMask:
    """Mask a prediction redacts: its own mask, else its rasterized box."""
    if o.mask is not None:
        return o.mask
    return PixelMask.from_box(o.bbox, width, height)


def evaluate_sequence(gt, pred, w: RegionWeights = RegionWeights()) -> EvalReport:
    """Score a prediction sequence against ground truth frame by frame.

    Frames are paired by ``frame_index``; objects without a confidence count
    as confidence 1.
    """
    W, H = gt.width, gt.height
    pred_frames = {f.frame_index: f for f in pred.frames}
    rep = EvalReport()

    box_p: dict[Category, list] = {c: [] for c in Category}
    box_g: dict[Category, list] = {c: [] for c in Category}
    sens_p: dict[Category, list] = {c: [] for c in SENSITIVE}
    sens_g: dict[Category, list] = {c: [] for c in SENSITIVE}
    matches = {c: MatchResult() for c in SENSITIVE}
    cache: dict[tuple[int, int], float] = {}
    base_measure = ioff_measure(w)

    def cached(p, g):
        k = (id(p), id(g))
        if k not in cache:
            cache[k] = base_measure(p[0], g)
        return cache[k]

    for f in gt.frames:
        pf = pred_frames.get(f.frame_index)
        pobjs = pf.objects if pf is not None else ()
        for o in f.objects:
            box_g[o.category].append((f.frame_index, o))
        for o in pobjs:
            box_p[o.category].append((f.frame_index, o.score, o))
        row = {"frame_index": f.frame_index, "n_gt": 0, "n_pred": 0, "matched": 0, "ioff_sum": 0.0}
        for cat in SENSITIVE:
            g = [(k, o) for k, o in enumerate(f.objects) if o.category is cat]
            p = [(k, o.score, (pred_mask(o, W, H),)) for k, o in enumerate(pobjs) if o.category is cat]
            sens_g[cat] += [(f.frame_index, o) for _, o in g]
            sens_p[cat] += [(f.frame_index, s, m) for _, s, m in p]
            m = greedy_match(p, g, cached, threshold=0.0, strict=True)
            matches[cat].extend(MatchResult(
                [((f.frame_index, a), (f.frame_index, b), s) for a, b, s in m.pairs],
                [(f.frame_index, a) for a in m.unmatched_preds],
                [(f.frame_index, b) for b in m.unmatched_gts]))
            row["n_gt"] += len(g)
            row["n_pred"] += len(p)
            row["matched"] += len(m.pairs)
            row["ioff_sum"] += sum(s for _, _, s in m.pairs)
        rep.per_frame.append(row)

    for cat in Category:
        if not box_g[cat]:
            continue
        hits = {t: ranked_hits(box_p[cat], box_g[cat], box_measure, t) for t in COCO_THRESHOLDS}
        n = len(box_g[cat])
        aps = {t: ap_from_hits(h, n) for t, h in hits.items()}
        rep.ap[cat.value] = float(np.mean(list(aps.values())))
        rep.ap50[cat.value] = aps[0.5]
        rep.ap75[cat.value] = aps[0.75]

    present = [c for c in SENSITIVE if sens_g[c]]
    if present:
        rep.mioff = mioff({c: matches[c] for c in present})
        for tau, attr in ((0.5, "ioff50"), (0.75, "ioff75")):
            vals = [average_precision(sens_p[c], sens_g[c], cached, tau) for c in present]
            setattr(rep, attr, float(np.mean(vals)))
    return rep
