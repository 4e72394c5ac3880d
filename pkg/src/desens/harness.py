"""Synthetic street scenes and a noisy detector/segmenter stand-in.

Each carrier (pedestrian or car) moves inside its own horizontal lane, so
sensitive regions of different carriers never touch. Faces and plates switch
between visible and hidden (turned away, occluded); hidden ones are not
annotated, matching the rule that only visible targets are labelled.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import (SENSITIVE, BBox, Category, FaceTriMask, FrameAnnotation, ObjectInstance, PixelMask,
                   PredictionSet, SequenceAnnotation, ValidationError)
from .geometry import dilate, erode, min_bbox
from .metrics import RegionWeights, evaluate_sequence
from .pipeline import ABLATION, PipelineConfig, ablation_config, run_pipeline
from .renderer import Image

PED_SIZE = (32, 80)
CAR_SIZE = (96, 52)
FACE_SIZE = (20, 24)
PLATE_SIZE = (32, 10)
LANE_SLACK = 12


@dataclass(frozen=True)
class SceneSpec:
    width: int = 640
    height: int = 480
    n_pedestrians: int = 3
    n_vehicles: int = 3
    min_speed: float = 0.5
    max_speed: float = 3.0
    length: int = 40
    seed: int = 0
    hide_prob: float = 0.02   # per frame, visible -> hidden
    show_prob: float = 0.25   # per frame, hidden -> visible

    def __post_init__(self):
        if self.n_pedestrians < 0 or self.n_vehicles < 0 or self.length < 0:
            raise ValidationError("counts and length must be non-negative")
        if not 0 <= self.min_speed <= self.max_speed:
            raise ValidationError("need 0 <= min_speed <= max_speed")
        for p in (self.hide_prob, self.show_prob):
            if not 0 <= p <= 1:
                raise ValidationError("visibility probabilities must lie in [0, 1]")


@dataclass(frozen=True)
class NoiseSpec:
    drop_prob: float = 0.1
    drop_burst: float | None = 2.5     # mean length of a miss run; None -> independent per frame
    center_jitter_sigma: float = 1.0
    size_jitter_sigma: float = 1.0
    false_positive_rate: float = 0.05  # expected false sensitive detections per carrier per frame
    fp_in_carrier: float = 0.5         # share of false positives placed on a carrier body
    tp_confidence: tuple[float, float] = (0.6, 1.0)
    fp_confidence: tuple[float, float] = (0.1, 0.7)
    mask_noise_radius: int = 1
    seg_drop_prob: float = 0.02
    seed: int = 0

    def __post_init__(self):
        for name in ("drop_prob", "fp_in_carrier", "seg_drop_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValidationError(f"{name} must lie in [0, 1]")
        if self.drop_burst is not None and self.drop_burst < 1:
            raise ValidationError("drop_burst must be >= 1")
        if min(self.center_jitter_sigma, self.size_jitter_sigma, self.false_positive_rate) < 0:
            raise ValidationError("noise scales must be non-negative")
        if self.mask_noise_radius < 0:
            raise ValidationError("mask_noise_radius must be >= 0")

    @classmethod
    def perfect(cls, seed: int = 0) -> NoiseSpec:
        return cls(drop_prob=0.0, drop_burst=None, center_jitter_sigma=0.0, size_jitter_sigma=0.0,
                   false_positive_rate=0.0, mask_noise_radius=0, seg_drop_prob=0.0, seed=seed)


# ---------------------------------------------------------------------------
# scene generation

def _ellipse(cx: float, cy: float, w: float, h: float, W: int, H: int) -> PixelMask:
    x0, x1 = max(0, math.floor(cx - w / 2)), min(W, math.ceil(cx + w / 2))
    y0, y1 = max(0, math.floor(cy - h / 2)), min(H, math.ceil(cy + h / 2))
    yy, xx = np.mgrid[y0:y1, x0:x1] + 0.5
    inside = ((xx - cx) / (w / 2)) ** 2 + ((yy - cy) / (h / 2)) ** 2 <= 1.0
    return PixelMask(W, H, inside, x0, y0)


def _plate(cx: float, cy: float, w: float, h: float, W: int, H: int) -> PixelMask:
    x0, y0 = round(cx - w / 2), round(cy - h / 2)
    x0, y0 = max(0, x0), max(0, y0)
    x1, y1 = min(W, x0 + int(w)), min(H, y0 + int(h))
    bits = np.ones((y1 - y0, x1 - x0), dtype=bool)
    if bits.shape[0] > 2 and bits.shape[1] > 2:
        for r, c in ((0, 0), (0, -1), (-1, 0), (-1, -1)):
            bits[r, c] = False  # rounded corners
    return PixelMask(W, H, bits, x0, y0)


def split_face(mask: PixelMask) -> FaceTriMask:
    """Rows split 1:2:1 by face height: above the eyes, eyes to nose, below the nose."""
    x0, y0, x1, y1 = mask.bounds
    h = y1 - y0
    a = y0 + round(0.25 * h)
    b = a + round(0.5 * h)
    return FaceTriMask(mask.crop(x0, y0, x1, a), mask.crop(x0, a, x1, b), mask.crop(x0, b, x1, y1))


@dataclass
class _Carrier:
    category: Category
    track_id: int
    sens_id: int
    w: float
    h: float
    x: float
    y: float
    vx: float
    vy: float
    lane: tuple[float, float]  # y range allowed for the box top
    visible: bool = True
    color: tuple[int, int, int] = (0, 0, 0)

    def box(self) -> BBox:
        return BBox(self.x, self.y, self.x + self.w, self.y + self.h)

    def sensitive_mask(self, W: int, H: int) -> PixelMask:
        if self.category is Category.PEDESTRIAN:
            cx, cy = self.x + self.w / 2, self.y + 4 + FACE_SIZE[1] / 2
            return _ellipse(cx, cy, *FACE_SIZE, W, H)
        cx, cy = self.x + self.w / 2, self.y + self.h - 8 - PLATE_SIZE[1] / 2
        return _plate(cx, cy, *PLATE_SIZE, W, H)


def _layout(spec: SceneSpec, rng: np.random.Generator) -> list[_Carrier]:
    kinds = [Category.PEDESTRIAN] * spec.n_pedestrians + [Category.CAR] * spec.n_vehicles
    rng.shuffle(kinds)
    sizes = [PED_SIZE if k is Category.PEDESTRIAN else CAR_SIZE for k in kinds]
    need = sum(h + LANE_SLACK for _, h in sizes)
    if need > spec.height or any(w + 2 > spec.width for w, _ in sizes):
        raise ValidationError(
            f"infeasible scene: {len(kinds)} carriers need {need}px of lanes, image is {spec.height}px tall")
    spare = (spec.height - need) / (len(kinds) + 1) if kinds else 0.0
    carriers = []
    top = spare
    n = len(kinds)
    for i, (k, (w, h)) in enumerate(zip(kinds, sizes)):
        lane = (top, top + LANE_SLACK)
        speed = rng.uniform(spec.min_speed, spec.max_speed)
        carriers.append(_Carrier(
            category=k, track_id=i, sens_id=n + i, w=w, h=h,
            x=rng.uniform(0, spec.width - w), y=rng.uniform(*lane),
            vx=speed * rng.choice([-1.0, 1.0]), vy=rng.uniform(-0.3, 0.3), lane=lane,
            color=tuple(int(v) for v in rng.integers(40, 200, size=3)),
        ))
        top += h + LANE_SLACK + spare
    return carriers


def _advance(c: _Carrier, spec: SceneSpec, rng: np.random.Generator) -> None:
    c.x += c.vx
    if c.x < 0 or c.x + c.w > spec.width:
        c.vx = -c.vx
        c.x = min(max(c.x, 0.0), spec.width - c.w)
    c.y += c.vy
    if c.y < c.lane[0] or c.y > c.lane[1]:
        c.vy = -c.vy
        c.y = min(max(c.y, c.lane[0]), c.lane[1])
    flip = spec.hide_prob if c.visible else spec.show_prob
    if rng.random() < flip:
        c.visible = not c.visible


def _background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    H, W = spec.height, spec.width
    rows = np.linspace(170, 90, H)[:, None, None]
    base = np.broadcast_to(rows, (H, W, 3)) * np.array([0.8, 0.9, 1.0])
    tex = rng.integers(-8, 9, size=(H, W, 1))
    return np.clip(base + tex, 0, 255).astype(np.uint8)


def _draw(px: np.ndarray, m: PixelMask, color) -> None:
    b = m.bounds
    if b is not None:
        px[b[1]:b[3], b[0]:b[2]][m.bits] = color


def generate(spec: SceneSpec, render: bool = True) -> tuple[SequenceAnnotation, list[Image]]:
    """Deterministic ground truth (and frames) for ``spec``."""
    rng = np.random.default_rng(spec.seed)
    W, H = spec.width, spec.height
    carriers = _layout(spec, rng)
    bg = _background(spec, rng) if render else None
    frames, images = [], []
    for t in range(spec.length):
        if t:
            for c in carriers:
                _advance(c, spec, rng)
        objs = []
        px = bg.copy() if render else None
        for c in carriers:
            box = c.box()
            objs.append(ObjectInstance(c.category, box, track_id=c.track_id))
            m = c.sensitive_mask(W, H)
            if render:
                _draw(px, PixelMask.from_box(box, W, H), c.color)
            if c.category is Category.PEDESTRIAN:
                if c.visible:
                    tri = split_face(m)
                    objs.append(ObjectInstance(Category.FACE, min_bbox(m), tri=tri, track_id=c.sens_id))
                    if render:
                        _draw(px, m, (224, 172, 140))
                        _draw(px, tri.mid - erode(tri.mid, 2), (120, 80, 60))
                        _draw(px, tri.below.crop(0, 0, W, tri.below.bounds[1] + 2), (150, 60, 60))
                elif render:
                    _draw(px, m, (50, 35, 25))
            else:
                if c.visible:
                    objs.append(ObjectInstance(Category.PLATE, min_bbox(m), mask=m, track_id=c.sens_id))
                    if render:
                        _draw(px, m, (235, 235, 215))
                        x0, y0, x1, y1 = m.bounds
                        stripes = np.zeros((H, W), dtype=bool)
                        stripes[y0 + 2:y1 - 2, x0 + 3:x1 - 3:4] = True
                        _draw(px, PixelMask.from_dense(stripes), (20, 20, 30))
                elif render:
                    _draw(px, m, tuple(v // 2 for v in c.color))
        frames.append(FrameAnnotation(t, tuple(objs), f"{t:06d}.ppm"))
        if render:
            images.append(Image(px))
    seq = SequenceAnnotation(f"synthetic-{spec.seed}", W, H, tuple(frames))
    return seq, images


# ---------------------------------------------------------------------------
# detector / segmenter noise

class _Dropper:
    """Two-state miss process with stationary miss rate ``p`` and mean miss-run length ``burst``."""

    def __init__(self, p: float, burst: float | None):
        self.p = p
        if p >= 1:
            self.enter, self.stay = 1.0, 1.0
        elif burst is None:
            self.enter, self.stay = p, p
        else:
            self.stay = 1 - 1 / burst
            self.enter = min(1.0, p * (1 - self.stay) / (1 - p))
        self.state: dict = {}

    def __call__(self, key, rng: np.random.Generator) -> bool:
        prev = self.state.get(key)
        if prev is None:
            dropped = rng.random() < self.p
        else:
            dropped = rng.random() < (self.stay if prev else self.enter)
        self.state[key] = dropped
        return dropped


def _jitter(box: BBox, noise: NoiseSpec, rng: np.random.Generator, W: int, H: int) -> BBox | None:
    cx, cy = box.center
    cx += rng.normal(0, noise.center_jitter_sigma) if noise.center_jitter_sigma else 0.0
    cy += rng.normal(0, noise.center_jitter_sigma) if noise.center_jitter_sigma else 0.0
    w, h = box.width, box.height
    if noise.size_jitter_sigma:
        w = max(2.0, w + rng.normal(0, noise.size_jitter_sigma))
        h = max(2.0, h + rng.normal(0, noise.size_jitter_sigma))
    try:
        return BBox.from_center(cx, cy, w, h).clamp(W, H)
    except ValidationError:
        return None


def _false_box(cat: Category, carrier: ObjectInstance | None, rng, W: int, H: int) -> BBox | None:
    fw, fh = FACE_SIZE if cat is Category.FACE else PLATE_SIZE
    if carrier is not None:
        b = carrier.bbox
        # lower body of a pedestrian, roof of a car: inside the carrier, away from its true face/plate
        if cat is Category.FACE:
            cy = rng.uniform(b.y_min + 0.55 * b.height, b.y_max - fh / 2)
        else:
            cy = rng.uniform(b.y_min + fh / 2, b.y_min + 0.4 * b.height)
        cx = rng.uniform(b.x_min + fw / 2, max(b.x_min + fw / 2, b.x_max - fw / 2))
    else:
        cx, cy = rng.uniform(fw / 2, W - fw / 2), rng.uniform(fh / 2, H - fh / 2)
    try:
        return BBox.from_center(cx, cy, fw, fh).clamp(W, H)
    except ValidationError:
        return None


def corrupt(gt: SequenceAnnotation, noise: NoiseSpec) -> PredictionSet:
    """Detector/segmenter outputs derived from ground truth; deterministic in ``noise.seed``."""
    rng = np.random.default_rng(noise.seed)
    W, H = gt.width, gt.height
    drop = _Dropper(noise.drop_prob, noise.drop_burst)
    frames = []
    for f in gt.frames:
        dets = []
        label = {c: np.zeros((H, W), dtype=bool) for c in SENSITIVE}
        for k, o in enumerate(f.objects):
            key = o.track_id if o.track_id is not None else (f.frame_index, k)
            if o.category.sensitive and o.mask is not None:
                if not rng.random() < noise.seg_drop_prob:
                    m = o.mask
                    r = int(rng.integers(-noise.mask_noise_radius, noise.mask_noise_radius + 1)) \
                        if noise.mask_noise_radius else 0
                    m = dilate(m, r) if r > 0 else erode(m, -r)
                    b = m.bounds
                    if b is not None:
                        label[o.category][b[1]:b[3], b[0]:b[2]] |= m.bits
            if drop(key, rng):
                continue
            box = _jitter(o.bbox, noise, rng, W, H)
            conf = float(rng.uniform(*noise.tp_confidence))
            if box is not None:
                dets.append(ObjectInstance(o.category, box, confidence=conf))
        carriers = [o for o in f.objects if not o.category.sensitive]
        n_fp = rng.poisson(noise.false_positive_rate * len(carriers)) if carriers else 0
        for _ in range(n_fp):
            on_carrier = carriers and rng.random() < noise.fp_in_carrier
            if on_carrier:
                c = carriers[int(rng.integers(len(carriers)))]
                cat = Category.FACE if c.category is Category.PEDESTRIAN else Category.PLATE
                box = _false_box(cat, c, rng, W, H)
            else:
                cat = SENSITIVE[int(rng.integers(2))]
                box = _false_box(cat, None, rng, W, H)
            conf = float(rng.uniform(*noise.fp_confidence))
            if box is not None:
                dets.append(ObjectInstance(cat, box, confidence=conf))
        maps = {c: PixelMask.from_dense(a) for c, a in label.items()}
        frames.append(FrameAnnotation(f.frame_index, tuple(dets), f.image_path, maps))
    return PredictionSet(gt.sequence_id, W, H, tuple(frames))


# ---------------------------------------------------------------------------
# ablation

WINDOWS = (2, 3, 4, 5, 6, 7)
SWEEP_CONFIG = "DSJ+KFJ"


@dataclass(frozen=True)
class AblationPlan:
    configs: tuple[str, ...] = tuple(ABLATION)
    windows: tuple[int, ...] = WINDOWS
    seeds: int = 20
    base: PipelineConfig = field(default_factory=PipelineConfig)
    weights: RegionWeights = field(default_factory=RegionWeights)


def _runs(plan: AblationPlan) -> list[tuple[str, int | None]]:
    runs = []
    for name in plan.configs:
        kfj = ABLATION[name][2]
        runs.append((name, plan.base.tracker.window if kfj else None))
    for w in plan.windows:
        if (SWEEP_CONFIG, w) not in runs:
            runs.append((SWEEP_CONFIG, w))
    return runs


def run_seed(spec: SceneSpec, noise: NoiseSpec, plan: AblationPlan, k: int) -> list[dict]:
    """Every (config, window) of the plan on scene/noise seed offset ``k``."""
    gt, _ = generate(replace(spec, seed=spec.seed + k), render=False)
    preds = corrupt(gt, replace(noise, seed=noise.seed + k))
    rows = []
    for name, window in _runs(plan):
        cfg = ablation_config(name, plan.base)
        if window is not None:
            cfg = replace(cfg, tracker=replace(cfg.tracker, window=window))
        out = run_pipeline(preds, cfg)
        rep = evaluate_sequence(gt, out.as_predictions(gt.sequence_id), plan.weights)
        rows.append({"config": name, "window": window, "seed": k,
                     "mioff": rep.mioff, "ioff50": rep.ioff50, "ioff75": rep.ioff75})
    return rows


def _summary(rows: Sequence[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["config"], r["window"]), []).append(r)
    out = []
    for (name, window), rs in groups.items():
        d = {"config": name, "window": window, "n": len(rs)}
        for m in ("mioff", "ioff50", "ioff75"):
            v = np.array([r[m] for r in rs], dtype=float)
            std = float(v.std(ddof=1)) if len(v) > 1 else 0.0
            d[f"{m}_mean"] = float(v.mean())
            d[f"{m}_std"] = std
            d[f"{m}_sem"] = std / math.sqrt(len(v))
        out.append(d)
    return out


def run_ablation(spec: SceneSpec = SceneSpec(), noise: NoiseSpec = NoiseSpec(),
                 plan: AblationPlan = AblationPlan(), jobs: int = 1) -> dict:
    """Seed-averaged mIOFF/IOFF50/IOFF75 per pipeline config and per KFJ window."""
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            per_seed = list(ex.map(run_seed, *zip(*[(spec, noise, plan, k) for k in range(plan.seeds)])))
    else:
        per_seed = [run_seed(spec, noise, plan, k) for k in range(plan.seeds)]
    rows = [r for rs in per_seed for r in rs]
    rows.sort(key=lambda r: (list(ABLATION).index(r["config"]), r["window"] or 0, r["seed"]))
    return {
        "scene": asdict(spec),
        "noise": asdict(noise),
        "seeds": plan.seeds,
        "rows": rows,
        "summary": _summary(rows),
    }


def summary_lookup(report: dict) -> dict[tuple[str, int | None], dict]:
    return {(s["config"], s["window"]): s for s in report["summary"]}

