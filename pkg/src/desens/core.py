"""Domain types and the annotation/prediction document format.

Masks are stored sparsely: a tight boolean crop plus its offset inside the
frame. The document encoding is a full-frame, row-major run-length code that
starts with a 0-run.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when a document or value breaks a schema rule or invariant."""


class Category(str, enum.Enum):
    PEDESTRIAN = "pedestrian"
    CAR = "car"
    FACE = "face"
    PLATE = "plate"

    @property
    def sensitive(self) -> bool:
        return self in (Category.FACE, Category.PLATE)

    @property
    def carrier(self) -> Category | None:
        """Carrier category for a sensitive one (face -> pedestrian, plate -> car)."""
        return _CARRIER.get(self)


_CARRIER = {Category.FACE: Category.PEDESTRIAN, Category.PLATE: Category.CAR}
SENSITIVE = (Category.FACE, Category.PLATE)


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"non-finite box {vals}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValidationError(f"degenerate box {vals}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> BBox:
        return cls(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)

    def clamp(self, width: int, height: int) -> BBox:
        """Clip to the image; raises if nothing is left."""
        return BBox(
            min(max(self.x_min, 0.0), width),
            min(max(self.y_min, 0.0), height),
            min(max(self.x_max, 0.0), width),
            min(max(self.y_max, 0.0), height),
        )

    def pixel_span(self, width: int, height: int) -> tuple[int, int, int, int]:
        """Integer pixel window [x0, x1) x [y0, y1) of pixels whose centers fall inside."""
        x0 = max(0, math.ceil(self.x_min - 0.5))
        y0 = max(0, math.ceil(self.y_min - 0.5))
        x1 = min(width, math.ceil(self.x_max - 0.5))
        y1 = min(height, math.ceil(self.y_max - 0.5))
        return x0, y0, max(x0, x1), max(y0, y1)


class PixelMask:
    """Immutable binary mask over a ``width`` x ``height`` frame.

    Internally a tight crop (``bits``) anchored at ``(x0, y0)``; an empty mask
    has a 0x0 crop.
    """

    __slots__ = ("width", "height", "x0", "y0", "bits", "_area")

    def __init__(self, width: int, height: int, bits: np.ndarray | None = None, x0: int = 0, y0: int = 0):
        if width <= 0 or height <= 0:
            raise ValidationError(f"mask dimensions must be positive, got {width}x{height}")
        if bits is None:
            bits = np.zeros((0, 0), dtype=bool)
        bits = np.asarray(bits, dtype=bool)
        if bits.ndim != 2:
            raise ValidationError("mask bits must be 2-D")
        h, w = bits.shape
        if x0 < 0 or y0 < 0 or x0 + w > width or y0 + h > height:
            raise ValidationError("mask crop exceeds frame")
        rows = np.flatnonzero(bits.any(axis=1))
        if rows.size == 0:
            x0 = y0 = 0
            bits = np.zeros((0, 0), dtype=bool)
        else:
            cols = np.flatnonzero(bits.any(axis=0))
            r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
            bits = bits[r0:r1, c0:c1].copy()
            x0, y0 = x0 + int(c0), y0 + int(r0)
        bits.flags.writeable = False
        object.__setattr__(self, "width", int(width))
        object.__setattr__(self, "height", int(height))
        object.__setattr__(self, "x0", int(x0))
        object.__setattr__(self, "y0", int(y0))
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "_area", int(bits.sum()))

    def __setattr__(self, name, value):
        raise AttributeError("PixelMask is immutable")

    # construction

    @classmethod
    def empty(cls, width: int, height: int) -> PixelMask:
        return cls(width, height)

    @classmethod
    def from_dense(cls, arr: np.ndarray) -> PixelMask:
        arr = np.asarray(arr, dtype=bool)
        return cls(arr.shape[1], arr.shape[0], arr)

    @classmethod
    def from_box(cls, box: BBox, width: int, height: int) -> PixelMask:
        x0, y0, x1, y1 = box.pixel_span(width, height)
        return cls(width, height, np.ones((y1 - y0, x1 - x0), dtype=bool), x0, y0)

    @classmethod
    def from_rle(cls, width: int, height: int, runs: Sequence[int]) -> PixelMask:
        runs = [int(r) for r in runs]
        if any(r < 0 for r in runs):
            raise ValidationError("negative RLE run")
        if sum(runs) != width * height:
            raise ValidationError(f"RLE covers {sum(runs)} pixels, expected {width * height}")
        flat = np.zeros(width * height, dtype=bool)
        pos = 0
        for i, r in enumerate(runs):
            if i % 2:
                flat[pos:pos + r] = True
            pos += r
        return cls.from_dense(flat.reshape(height, width))

    # views

    @property
    def area(self) -> int:
        return self._area

    def __bool__(self) -> bool:
        return self._area > 0

    @property
    def bounds(self) -> tuple[int, int, int, int] | None:
        """Tight integer bounds (x0, y0, x1, y1), exclusive upper; None when empty."""
        if not self._area:
            return None
        h, w = self.bits.shape
        return self.x0, self.y0, self.x0 + w, self.y0 + h

    def window(self, x0: int, y0: int, x1: int, y1: int) -> np.ndarray:
        """Dense boolean view of the frame window [x0, x1) x [y0, y1)."""
        out = np.zeros((max(0, y1 - y0), max(0, x1 - x0)), dtype=bool)
        b = self.bounds
        if b is None:
            return out
        ix0, iy0 = max(x0, b[0]), max(y0, b[1])
        ix1, iy1 = min(x1, b[2]), min(y1, b[3])
        if ix0 < ix1 and iy0 < iy1:
            out[iy0 - y0:iy1 - y0, ix0 - x0:ix1 - x0] = self.bits[
                iy0 - self.y0:iy1 - self.y0, ix0 - self.x0:ix1 - self.x0
            ]
        return out

    def crop(self, x0: int, y0: int, x1: int, y1: int) -> PixelMask:
        """The part of the mask inside the window [x0, x1) x [y0, y1)."""
        x0, y0 = max(0, x0), max(0, y0)
        x1, y1 = min(self.width, x1), min(self.height, y1)
        if x0 >= x1 or y0 >= y1:
            return PixelMask.empty(self.width, self.height)
        return PixelMask(self.width, self.height, self.window(x0, y0, x1, y1), x0, y0)

    def to_dense(self) -> np.ndarray:
        return self.window(0, 0, self.width, self.height)

    @property
    def runs(self) -> list[int]:
        flat = self.to_dense().ravel()
        change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
        edges = np.concatenate(([0], change, [flat.size]))
        runs = np.diff(edges).tolist()
        if flat[0]:
            runs.insert(0, 0)
        return runs

    def pixels(self) -> list[tuple[int, int]]:
        ys, xs = np.nonzero(self.bits)
        return [(int(x) + self.x0, int(y) + self.y0) for y, x in zip(ys, xs)]

    # set algebra

    def _check(self, other: PixelMask):
        if (self.width, self.height) != (other.width, other.height):
            raise ValidationError(
                f"mask dimension mismatch: {self.width}x{self.height} vs {other.width}x{other.height}"
            )

    def _joint(self, other: PixelMask) -> tuple[int, int, int, int]:
        bs = [b for b in (self.bounds, other.bounds) if b is not None]
        if not bs:
            return 0, 0, 0, 0
        return min(b[0] for b in bs), min(b[1] for b in bs), max(b[2] for b in bs), max(b[3] for b in bs)

    def _combine(self, other: PixelMask, op) -> PixelMask:
        self._check(other)
        x0, y0, x1, y1 = self._joint(other)
        bits = op(self.window(x0, y0, x1, y1), other.window(x0, y0, x1, y1))
        return PixelMask(self.width, self.height, bits, x0, y0)

    def __or__(self, other: PixelMask) -> PixelMask:
        return self._combine(other, np.logical_or)

    def __and__(self, other: PixelMask) -> PixelMask:
        return self._combine(other, np.logical_and)

    def __sub__(self, other: PixelMask) -> PixelMask:
        return self._combine(other, lambda a, b: a & ~b)

    def intersection_area(self, other: PixelMask) -> int:
        self._check(other)
        a, b = self.bounds, other.bounds
        if a is None or b is None:
            return 0
        x0, y0, x1, y1 = max(a[0], b[0]), max(a[1], b[1]), min(a[2], b[2]), min(a[3], b[3])
        if x0 >= x1 or y0 >= y1:
            return 0
        return int((self.window(x0, y0, x1, y1) & other.window(x0, y0, x1, y1)).sum())

    def translate(self, dx: int, dy: int) -> PixelMask:
        """Shift by integer pixels; parts leaving the frame are cut."""
        if not self._area:
            return self
        full = np.zeros((self.height, self.width), dtype=bool)
        h, w = self.bits.shape
        nx0, ny0 = self.x0 + dx, self.y0 + dy
        sx0, sy0 = max(0, -nx0), max(0, -ny0)
        ex, ey = min(w, self.width - nx0), min(h, self.height - ny0)
        if sx0 < ex and sy0 < ey:
            full[ny0 + sy0:ny0 + ey, nx0 + sx0:nx0 + ex] = self.bits[sy0:ey, sx0:ex]
        return PixelMask.from_dense(full)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PixelMask):
            return NotImplemented
        return (
            (self.width, self.height, self.x0, self.y0) == (other.width, other.height, other.x0, other.y0)
            and np.array_equal(self.bits, other.bits)
        )

    def __hash__(self) -> int:
        return hash((self.width, self.height, self.x0, self.y0, self.bits.tobytes()))

    def __repr__(self) -> str:
        return f"PixelMask({self.width}x{self.height}, area={self._area}, bounds={self.bounds})"


@dataclass(frozen=True)
class FaceTriMask:
    """Three horizontal face regions: above the eyes, eyes-to-nose, below the nose."""

    above: PixelMask
    mid: PixelMask
    below: PixelMask
    occluded: bool = False

    def __post_init__(self):
        parts = self.regions
        for p in parts[1:]:
            parts[0]._check(p)
        names = ("above", "mid", "below")
        for i in range(3):
            for j in range(i + 1, 3):
                if parts[i].intersection_area(parts[j]):
                    raise ValidationError(f"tri-regions {names[i]} and {names[j]} overlap")
        if not self.occluded and not all(parts):
            raise ValidationError("empty tri-region on a face not flagged occluded")

    @property
    def regions(self) -> tuple[PixelMask, PixelMask, PixelMask]:
        return (self.above, self.mid, self.below)

    @property
    def union(self) -> PixelMask:
        return self.above | self.mid | self.below


@dataclass(frozen=True)
class ObjectInstance:
    category: Category
    bbox: BBox
    mask: PixelMask | None = None
    tri: FaceTriMask | None = None
    track_id: int | None = None
    confidence: float | None = None
    coasted: bool = False

    def __post_init__(self):
        if not isinstance(self.category, Category):
            object.__setattr__(self, "category", Category(self.category))
        if self.tri is not None:
            if self.category is not Category.FACE:
                raise ValidationError(f"tri-regions on a {self.category.value}")
            union = self.tri.union
            if self.mask is None:
                object.__setattr__(self, "mask", union)
            elif self.mask != union:
                raise ValidationError("face mask differs from the union of its tri-regions")
        if self.mask is not None and not self.category.sensitive:
            raise ValidationError(f"mask on carrier category {self.category.value}")
        if self.confidence is not None and not (0.0 <= self.confidence <= 1.0):
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]")
        if self.track_id is not None and self.track_id < 0:
            raise ValidationError("negative track id")
        if self.mask is not None and self.mask.area:
            x0, y0, x1, y1 = self.mask.bounds
            eps = 1e-9
            b = self.bbox
            if b.x_min > x0 + eps or b.y_min > y0 + eps or b.x_max < x1 - eps or b.y_max < y1 - eps:
                raise ValidationError("box does not enclose the mask")
        if self.confidence is None:
            # ground truth
            if self.category is Category.FACE and self.tri is None:
                raise ValidationError("ground-truth face without tri-regions")
            if self.category is Category.PLATE and self.mask is None:
                raise ValidationError("ground-truth plate without mask")

    @property
    def score(self) -> float:
        """Confidence, treating ground-truth objects as certain."""
        return 1.0 if self.confidence is None else self.confidence


@dataclass(frozen=True)
class FrameAnnotation:
    frame_index: int
    objects: tuple[ObjectInstance, ...] = ()
    image_path: str | None = None
    label_maps: Mapping[Category, PixelMask] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "label_maps", dict(sorted(
            ((Category(k), v) for k, v in dict(self.label_maps).items()), key=lambda kv: kv[0].value)))
        if self.frame_index < 0:
            raise ValidationError("negative frame index")
        ids = [o.track_id for o in self.objects if o.track_id is not None]
        if len(ids) != len(set(ids)):
            raise ValidationError(f"frame {self.frame_index}: duplicate track ids")
        for cat in self.label_maps:
            if not cat.sensitive:
                raise ValidationError(f"frame {self.frame_index}: label map for {cat.value}")

    def of(self, *cats: Category) -> list[ObjectInstance]:
        return [o for o in self.objects if o.category in cats]


@dataclass(frozen=True)
class SequenceAnnotation:
    sequence_id: str
    width: int
    height: int
    frames: tuple[FrameAnnotation, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("sequence dimensions must be positive")
        idx = [f.frame_index for f in self.frames]
        if idx != sorted(idx):
            raise ValidationError("frames are not sorted by frame_index")
        if len(idx) != len(set(idx)):
            raise ValidationError("duplicate frame_index")
        for f in self.frames:
            for k, o in enumerate(f.objects):
                where = f"frame {f.frame_index}, object {k} ({o.category.value})"
                for m in _masks_of(o):
                    if (m.width, m.height) != (self.width, self.height):
                        raise ValidationError(f"{where}: mask size does not match the sequence")
                b = o.bbox
                if b.x_min < 0 or b.y_min < 0 or b.x_max > self.width or b.y_max > self.height:
                    raise ValidationError(f"{where}: box outside the image")
            for cat, m in f.label_maps.items():
                if (m.width, m.height) != (self.width, self.height):
                    raise ValidationError(f"frame {f.frame_index}: {cat.value} label map size mismatch")

    def frame(self, index: int) -> FrameAnnotation:
        for f in self.frames:
            if f.frame_index == index:
                return f
        raise KeyError(index)


class PredictionSet(SequenceAnnotation):
    """A sequence whose every object carries a confidence."""

    def __post_init__(self):
        super().__post_init__()
        for f in self.frames:
            for k, o in enumerate(f.objects):
                if o.confidence is None:
                    raise ValidationError(f"frame {f.frame_index}, object {k}: prediction without confidence")

    @classmethod
    def of(cls, seq: SequenceAnnotation) -> PredictionSet:
        return cls(seq.sequence_id, seq.width, seq.height, seq.frames)


def _masks_of(o: ObjectInstance) -> Iterable[PixelMask]:
    if o.mask is not None:
        yield o.mask
    if o.tri is not None:
        yield from o.tri.regions


def density(frame: FrameAnnotation) -> int:
    """Number of sensitive instances in a frame."""
    return sum(1 for o in frame.objects if o.category.sensitive)


# ---------------------------------------------------------------------------
# document format

def _num(v: float) -> float | int:
    v = float(v)
    return int(v) if v.is_integer() else v


def dumps(obj: Any) -> bytes:
    """Canonical JSON: sorted keys, two-space indent, trailing newline."""
    return (json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=True, allow_nan=False) + "\n").encode()


def object_to_dict(o: ObjectInstance) -> dict:
    d: dict[str, Any] = {"category": o.category.value, "bbox": [_num(v) for v in o.bbox.as_list()]}
    if o.confidence is not None:
        d["confidence"] = float(o.confidence)
    if o.track_id is not None:
        d["track_id"] = o.track_id
    if o.coasted:
        d["coasted"] = True
    if o.tri is not None:
        d["tri"] = {"above": o.tri.above.runs, "mid": o.tri.mid.runs, "below": o.tri.below.runs}
        if o.tri.occluded:
            d["tri"]["occluded"] = True
    elif o.mask is not None:
        d["mask_rle"] = o.mask.runs
    return d


def sequence_to_dict(seq: SequenceAnnotation) -> dict:
    frames = []
    for f in seq.frames:
        fd: dict[str, Any] = {"frame_index": f.frame_index, "objects": [object_to_dict(o) for o in f.objects]}
        if f.image_path is not None:
            fd["image_path"] = f.image_path
        if f.label_maps:
            fd["seg"] = {c.value: m.runs for c, m in f.label_maps.items()}
        frames.append(fd)
    return {"sequence_id": seq.sequence_id, "width": seq.width, "height": seq.height, "frames": frames}


def serialize_sequence(seq: SequenceAnnotation) -> bytes:
    return dumps(sequence_to_dict(seq))


def _req(d: Mapping, key: str, typ, where: str):
    if key not in d:
        raise ValidationError(f"{where}: missing field '{key}'")
    v = d[key]
    if typ is float:
        ok = isinstance(v, (int, float)) and not isinstance(v, bool)
    elif typ is int:
        ok = isinstance(v, int) and not isinstance(v, bool)
    else:
        ok = isinstance(v, typ)
    if not ok:
        raise ValidationError(f"{where}: field '{key}' has wrong type {type(v).__name__}")
    return v


def _parse_mask(v: Any, width: int, height: int, where: str) -> PixelMask:
    if isinstance(v, list) and all(isinstance(r, int) and not isinstance(r, bool) for r in v):
        return PixelMask.from_rle(width, height, v)
    if isinstance(v, dict) and "bitmap" in v:
        rows = v["bitmap"]
        if not isinstance(rows, list) or len(rows) != height or any(
                not isinstance(r, str) or len(r) != width or set(r) - {"0", "1"} for r in rows):
            raise ValidationError(f"{where}: malformed bitmap")
        return PixelMask.from_dense(np.array([[c == "1" for c in r] for r in rows], dtype=bool))
    raise ValidationError(f"{where}: mask must be an RLE list or {{'bitmap': [...]}}")


def _parse_object(d: Any, width: int, height: int, where: str) -> ObjectInstance:
    if not isinstance(d, dict):
        raise ValidationError(f"{where}: object must be a mapping")
    cat = _req(d, "category", str, where)
    try:
        category = Category(cat)
    except ValueError:
        raise ValidationError(f"{where}: unknown category '{cat}'") from None
    where = f"{where} ({category.value})"
    box = _req(d, "bbox", list, where)
    if len(box) != 4 or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in box):
        raise ValidationError(f"{where}: bbox must be four numbers")
    try:
        bbox = BBox(*map(float, box)).clamp(width, height)
    except ValidationError as e:
        raise ValidationError(f"{where}: {e}") from None
    conf = float(_req(d, "confidence", float, where)) if "confidence" in d else None
    track_id = _req(d, "track_id", int, where) if "track_id" in d else None
    coasted = bool(_req(d, "coasted", bool, where)) if "coasted" in d else False
    mask = None
    if "mask_rle" in d:
        mask = _parse_mask(d["mask_rle"], width, height, where)
    elif "mask_bitmap" in d:
        mask = _parse_mask({"bitmap": d["mask_bitmap"]}, width, height, where)
    tri = None
    try:
        if "tri" in d:
            t = d["tri"]
            if not isinstance(t, dict):
                raise ValidationError("tri must be a mapping")
            regions = [_parse_mask(_req(t, k, (list, dict), "tri"), width, height, f"tri.{k}")
                       for k in ("above", "mid", "below")]
            tri = FaceTriMask(*regions, occluded=bool(t.get("occluded", False)))
        return ObjectInstance(category, bbox, mask, tri, track_id, conf, coasted)
    except ValidationError as e:
        raise ValidationError(f"{where}: {e}") from None


def sequence_from_dict(doc: Any, cls=SequenceAnnotation) -> SequenceAnnotation:
    if not isinstance(doc, dict):
        raise ValidationError("document root must be a mapping")
    seq_id = _req(doc, "sequence_id", str, "document")
    width = _req(doc, "width", int, "document")
    height = _req(doc, "height", int, "document")
    if width <= 0 or height <= 0:
        raise ValidationError("document: width and height must be positive")
    frames = []
    for i, fd in enumerate(_req(doc, "frames", list, "document")):
        where = f"frames[{i}]"
        if not isinstance(fd, dict):
            raise ValidationError(f"{where}: frame must be a mapping")
        fi = _req(fd, "frame_index", int, where)
        where = f"frame {fi}"
        image_path = _req(fd, "image_path", str, where) if "image_path" in fd else None
        objs = [_parse_object(od, width, height, f"{where}, object {k}")
                for k, od in enumerate(_req(fd, "objects", list, where))]
        maps = {}
        for name, v in (_req(fd, "seg", dict, where) if "seg" in fd else {}).items():
            try:
                c = Category(name)
            except ValueError:
                raise ValidationError(f"{where}: unknown label map '{name}'") from None
            maps[c] = _parse_mask(v, width, height, f"{where}, seg {name}")
        try:
            frames.append(FrameAnnotation(fi, tuple(objs), image_path, maps))
        except ValidationError as e:
            raise ValidationError(f"{where}: {e}") from None
    return cls(seq_id, width, height, tuple(frames))


def parse_sequence(data: bytes | str) -> SequenceAnnotation:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise ValidationError(f"not a valid document: {e}") from None
    return sequence_from_dict(doc)


def parse_predictions(data: bytes | str) -> PredictionSet:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise ValidationError(f"not a valid document: {e}") from None
    return sequence_from_dict(doc, PredictionSet)
