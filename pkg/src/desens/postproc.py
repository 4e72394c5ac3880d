"""Joint desensitization of one frame: detection pairing (DJ) and detection/segmentation fusion (DSJ)."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .core import SENSITIVE, BBox, Category, FrameAnnotation, ObjectInstance, PixelMask, ValidationError
from .geometry import box_iou, connected_components, containment, min_bbox

NO_CARRIER = "no-carrier"
LOW_IOU = "low-iou"
UNPAIRED_COMPONENT = "unpaired-component"
LOW_CONFIDENCE = "low-confidence"
COAST_CONFLICT = "coast-conflict"


class DSJMethod(str, enum.Enum):
    MIN_BBOX_IOU = "min-bbox-iou"
    DUAL_CONFIDENCE = "dual-confidence"


@dataclass(frozen=True)
class JointConfig:
    dj_containment_threshold: float = 0.5
    dj_high_confidence: float = 0.7
    dj_measure: str = "containment"  # or "iou" for the literal symmetric reading
    dsj_method: DSJMethod = DSJMethod.MIN_BBOX_IOU
    dsj_iou_threshold: float = 0.5
    dual_det_conf: float = 0.7
    dual_seg_iou: float = 0.7

    def __post_init__(self):
        object.__setattr__(self, "dsj_method", DSJMethod(self.dsj_method))
        for name in ("dj_containment_threshold", "dj_high_confidence", "dsj_iou_threshold",
                     "dual_det_conf", "dual_seg_iou"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"{name}={v} outside [0, 1]")
        if self.dj_measure not in ("containment", "iou"):
            raise ValidationError(f"unknown DJ measure {self.dj_measure!r}")


@dataclass(frozen=True)
class DesensRegion:
    """A region to redact. ``from_box`` marks masks that are just the rasterized box."""

    category: Category
    mask: PixelMask
    source_box: BBox
    confidence: float
    from_box: bool = False
    track_id: int | None = None
    coasted: bool = False

    def __post_init__(self):
        if not self.mask:
            raise ValidationError("empty desensitization region")
        if not self.category.sensitive:
            raise ValidationError(f"{self.category.value} is not a sensitive category")

    @classmethod
    def of_detection(cls, det: ObjectInstance, label_map: PixelMask | None,
                     width: int, height: int) -> DesensRegion | None:
        """Segmented pixels inside the detection box, or the whole box where nothing is segmented."""
        span = det.bbox.pixel_span(width, height)
        if label_map is not None:
            inside = label_map.crop(*span)
            if inside:
                return cls(det.category, inside, det.bbox, det.score, track_id=det.track_id)
        m = PixelMask.from_box(det.bbox, width, height)
        if not m:
            return None
        return cls(det.category, m, det.bbox, det.score, from_box=True, track_id=det.track_id)

    def to_object(self) -> ObjectInstance:
        b = min_bbox(self.mask)
        box = BBox(min(b.x_min, self.source_box.x_min), min(b.y_min, self.source_box.y_min),
                   max(b.x_max, self.source_box.x_max), max(b.y_max, self.source_box.y_max))
        return ObjectInstance(self.category, box, self.mask, None, self.track_id,
                              min(1.0, max(0.0, self.confidence)), self.coasted)


@dataclass(frozen=True)
class Rejection:
    reason: str
    category: Category
    box: BBox
    confidence: float | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        d = {"reason": self.reason, "category": self.category.value,
             "bbox": [float(v) for v in self.box.as_list()]}
        if self.confidence is not None:
            d["confidence"] = float(self.confidence)
        if self.detail:
            d["detail"] = self.detail
        return d


def _carrier_score(det: ObjectInstance, carrier: ObjectInstance, cfg: JointConfig) -> float:
    if cfg.dj_measure == "iou":
        return box_iou(det.bbox, carrier.bbox)
    return containment(det.bbox, carrier.bbox)


def dj_filter(
    faces: Sequence[ObjectInstance],
    persons: Sequence[ObjectInstance],
    plates: Sequence[ObjectInstance],
    vehicles: Sequence[ObjectInstance],
    cfg: JointConfig = JointConfig(),
) -> tuple[list[ObjectInstance], list[Rejection]]:
    """Keep sensitive detections that are confident or sit inside a carrier detection."""
    kept, rejected = [], []
    for dets, carriers in ((faces, persons), (plates, vehicles)):
        for d in dets:
            if d.score >= cfg.dj_high_confidence:
                kept.append(d)
                continue
            best = max((_carrier_score(d, c, cfg) for c in carriers), default=0.0)
            if best > cfg.dj_containment_threshold:
                kept.append(d)
            else:
                rejected.append(Rejection(NO_CARRIER, d.category, d.bbox, d.score, f"best={best:.6g}"))
    return kept, rejected


def dsj_fuse(
    dets: Sequence[ObjectInstance],
    label_maps: Mapping[Category, PixelMask],
    cfg: JointConfig = JointConfig(),
    *,
    width: int | None = None,
    height: int | None = None,
) -> tuple[list[DesensRegion], list[Rejection]]:
    """Pair segmentation blobs with detections.

    With the min-box method a (component, detection) pair is accepted when the
    component's minimum bounding box has IoU strictly above the threshold with
    the detection box; pairs are taken greedily by descending IoU, one-to-one.
    """
    accepted: list[DesensRegion] = []
    rejected: list[Rejection] = []
    for cat in SENSITIVE:
        cat_dets = [d for d in dets if d.category is cat]
        lmap = label_maps.get(cat)
        if lmap is None:
            if width is None or height is None:
                if cat_dets:
                    raise ValidationError(f"no {cat.value} label map and no frame size")
                continue
            lmap = PixelMask.empty(width, height)
        if cfg.dsj_method is DSJMethod.MIN_BBOX_IOU:
            a, r = _fuse_min_bbox(cat, cat_dets, lmap, cfg)
        else:
            a, r = _fuse_dual(cat, cat_dets, lmap, cfg)
        accepted += a
        rejected += r
    return accepted, rejected


def _fuse_min_bbox(cat, dets, lmap, cfg):
    comps = connected_components(lmap)
    boxes = [min_bbox(c) for c in comps]
    cand = []
    for ci, cb in enumerate(boxes):
        for di, d in enumerate(dets):
            s = box_iou(cb, d.bbox)
            if s > cfg.dsj_iou_threshold:
                cand.append((-s, ci, di))
    cand.sort()
    used_c, used_d = set(), set()
    accepted = []
    for neg, ci, di in cand:
        if ci in used_c or di in used_d:
            continue
        used_c.add(ci)
        used_d.add(di)
        d = dets[di]
        accepted.append((di, DesensRegion(cat, comps[ci], d.bbox, d.score, track_id=d.track_id)))
    accepted.sort(key=lambda t: t[0])
    rejected = []
    for di, d in enumerate(dets):
        if di not in used_d:
            best = max((box_iou(cb, d.bbox) for cb in boxes), default=0.0)
            rejected.append(Rejection(LOW_IOU, cat, d.bbox, d.score, f"best={best:.6g}"))
    for ci, cb in enumerate(boxes):
        if ci not in used_c:
            rejected.append(Rejection(UNPAIRED_COMPONENT, cat, cb, None, f"area={comps[ci].area}"))
    return [r for _, r in accepted], rejected


def _fuse_dual(cat, dets, lmap, cfg):
    accepted, rejected = [], []
    for d in dets:
        if not d.score > cfg.dual_det_conf:
            rejected.append(Rejection(LOW_CONFIDENCE, cat, d.bbox, d.score))
            continue
        box = PixelMask.from_box(d.bbox, lmap.width, lmap.height)
        inside = lmap & box
        seg = inside.area / box.area if box.area else 0.0
        if seg > cfg.dual_seg_iou and inside:
            accepted.append(DesensRegion(cat, inside, d.bbox, d.score, track_id=d.track_id))
        else:
            rejected.append(Rejection(LOW_IOU, cat, d.bbox, d.score, f"seg={seg:.6g}"))
    return accepted, rejected


@dataclass(frozen=True)
class FrameResult:
    frame_index: int
    accepted: tuple[DesensRegion, ...]
    rejected: tuple[Rejection, ...] = field(default=())


def desensitize_frame(
    frame: FrameAnnotation,
    width: int,
    height: int,
    cfg: JointConfig = JointConfig(),
    *,
    use_dj: bool = True,
    use_dsj: bool = True,
) -> FrameResult:
    """DJ then DSJ on one frame of predictions.

    Without DSJ every surviving detection is redacted as the segmented pixels
    inside its box (the bare box when the segmentation is empty there).
    """
    faces = frame.of(Category.FACE)
    plates = frame.of(Category.PLATE)
    rejected: list[Rejection] = []
    if use_dj:
        dets, rej = dj_filter(faces, frame.of(Category.PEDESTRIAN), plates, frame.of(Category.CAR), cfg)
        rejected += rej
    else:
        dets = faces + plates
    if use_dsj:
        accepted, rej = dsj_fuse(dets, frame.label_maps, cfg, width=width, height=height)
        rejected += rej
    else:
        accepted = []
        for d in dets:
            r = DesensRegion.of_detection(d, frame.label_maps.get(d.category), width, height)
            if r is not None:
                accepted.append(r)
    return FrameResult(frame.frame_index, tuple(accepted), tuple(rejected))

