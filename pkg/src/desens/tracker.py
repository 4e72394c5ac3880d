"""Kalman smoothing and gap coasting of sensitive detections across frames.

Each track filters the box center with a constant-velocity model; the box size
is smoothed separately with an exponential moving average. A track that misses
detections keeps emitting its prediction ("coasting") for up to ``window - 1``
frames and is dropped on the ``window``-th consecutive miss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import BBox, Category, PixelMask, ValidationError
from .postproc import DesensRegion

F = np.array([[1.0, 0.0, 1.0, 0.0],
              [0.0, 1.0, 0.0, 1.0],
              [0.0, 0.0, 1.0, 0.0],
              [0.0, 0.0, 0.0, 1.0]])
H = np.array([[1.0, 0.0, 0.0, 0.0],
              [0.0, 1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class TrackerConfig:
    window: int = 4
    process_noise: float = 1e-2
    measurement_noise: float = 1e-1
    init_covariance: float = 10.0
    gate_distance: float | None = None  # None: twice the track's box diagonal
    size_alpha: float = 0.5
    min_hits: int = 2

    def __post_init__(self):
        if self.window < 1:
            raise ValidationError("window must be >= 1")
        for name in ("process_noise", "measurement_noise", "init_covariance"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.gate_distance is not None and not self.gate_distance > 0:
            raise ValidationError("gate_distance must be positive")
        if not 0 < self.size_alpha <= 1:
            raise ValidationError("size_alpha must be in (0, 1]")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class KalmanTrack:
    track_id: int
    category: Category
    state: np.ndarray        # cx, cy, vx, vy
    covariance: np.ndarray   # 4x4
    size: tuple[float, float]
    age: int = 1             # number of measurements absorbed
    misses: int = 0
    confidence: float = 1.0
    mask: PixelMask | None = None     # last emitted segment mask (None for box regions)
    mask_center: tuple[float, float] = (0.0, 0.0)

    @property
    def center(self) -> tuple[float, float]:
        return float(self.state[0]), float(self.state[1])

    @property
    def box(self) -> BBox:
        return BBox.from_center(*self.center, *self.size)

    @property
    def trace(self) -> float:
        return float(np.trace(self.covariance))


def spawn(track_id: int, region: DesensRegion, cfg: TrackerConfig = TrackerConfig()) -> KalmanTrack:
    cx, cy = region.source_box.center
    return KalmanTrack(
        track_id=track_id,
        category=region.category,
        state=_frozen([cx, cy, 0.0, 0.0]),
        covariance=_frozen(np.eye(4) * cfg.init_covariance),
        size=(region.source_box.width, region.source_box.height),
        confidence=region.confidence,
        mask=None if region.from_box else region.mask,
        mask_center=(cx, cy),
    )


def predict(t: KalmanTrack, cfg: TrackerConfig = TrackerConfig()) -> KalmanTrack:
    x = F @ t.state
    P = F @ t.covariance @ F.T + np.eye(4) * cfg.process_noise
    return replace(t, state=_frozen(x), covariance=_frozen((P + P.T) / 2))


def update(
    t: KalmanTrack,
    measured_center: tuple[float, float],
    measured_size: tuple[float, float],
    cfg: TrackerConfig = TrackerConfig(),
) -> KalmanTrack:
    z = np.asarray(measured_center, dtype=float)
    if not (np.all(np.isfinite(z)) and all(math.isfinite(v) for v in measured_size)):
        raise ValidationError("non-finite measurement")
    R = np.eye(2) * cfg.measurement_noise
    P = t.covariance
    S = H @ P @ H.T + R
    K = np.linalg.solve(S, H @ P).T
    x = t.state + K @ (z - H @ t.state)
    I_KH = np.eye(4) - K @ H
    P = I_KH @ P @ I_KH.T + K @ R @ K.T  # Joseph form keeps P symmetric PD
    a = cfg.size_alpha
    size = (a * measured_size[0] + (1 - a) * t.size[0], a * measured_size[1] + (1 - a) * t.size[1])
    return replace(t, state=_frozen(x), covariance=_frozen((P + P.T) / 2), size=size,
                   age=t.age + 1, misses=0)


def _gate(t: KalmanTrack, cfg: TrackerConfig) -> float:
    if cfg.gate_distance is not None:
        return cfg.gate_distance
    return 2.0 * math.hypot(*t.size)


def _emit(t: KalmanTrack, width: int, height: int, coasted: bool) -> DesensRegion | None:
    cx, cy = t.center
    try:
        box = BBox.from_center(cx, cy, *t.size).clamp(width, height)
    except ValidationError:
        return None
    if t.mask is None:
        mask = PixelMask.from_box(box, width, height)
    elif coasted:
        dx = round(cx - t.mask_center[0])
        dy = round(cy - t.mask_center[1])
        mask = t.mask.translate(dx, dy)
    else:
        mask = t.mask
    if not mask:
        return None
    return DesensRegion(t.category, mask, box, t.confidence, from_box=t.mask is None,
                        track_id=t.track_id, coasted=coasted)


@dataclass(frozen=True)
class StepResult:
    emitted: tuple[DesensRegion, ...]
    tracks: tuple[KalmanTrack, ...]
    next_id: int


def step_frame(
    tracks: Sequence[KalmanTrack],
    detections: Sequence[DesensRegion],
    width: int,
    height: int,
    cfg: TrackerConfig = TrackerConfig(),
    next_id: int = 0,
) -> StepResult:
    """Advance all tracks by one frame and absorb this frame's detections."""
    predicted = [predict(t, cfg) for t in tracks]

    # greedy nearest-center association inside the gate, same category only
    cand = []
    for ti, t in enumerate(predicted):
        gate = _gate(t, cfg)
        for di, d in enumerate(detections):
            if d.category is not t.category:
                continue
            cx, cy = d.source_box.center
            dist = math.hypot(cx - t.state[0], cy - t.state[1])
            if dist <= gate:
                cand.append((dist, t.track_id, di, ti))
    cand.sort()
    t_used, d_used = {}, {}
    for dist, _, di, ti in cand:
        if ti in t_used or di in d_used:
            continue
        t_used[ti] = di
        d_used[di] = ti

    emitted: list[DesensRegion] = []
    out_tracks: list[KalmanTrack] = []
    for ti, t in enumerate(predicted):
        if ti in t_used:
            d = detections[t_used[ti]]
            b = d.source_box
            t = update(t, b.center, (b.width, b.height), cfg)
            t = replace(t, confidence=d.confidence,
                        mask=None if d.from_box else d.mask,
                        mask_center=b.center)
            r = _emit(t, width, height, coasted=False)
            if r is not None and not d.from_box:
                # keep the measured segment; only the box is smoothed
                r = replace(r, mask=d.mask)
            if r is not None:
                emitted.append(r)
            out_tracks.append(t)
        else:
            t = replace(t, misses=t.misses + 1)
            if t.misses >= cfg.window:
                continue
            if t.age >= cfg.min_hits:
                r = _emit(t, width, height, coasted=True)
                if r is not None:
                    emitted.append(r)
            out_tracks.append(t)

    for di, d in enumerate(detections):
        if di in d_used:
            continue
        t = spawn(next_id, d, cfg)
        next_id += 1
        out_tracks.append(t)
        emitted.append(replace(d, track_id=t.track_id, coasted=False))
    return StepResult(tuple(emitted), tuple(out_tracks), next_id)


class KalmanJoin:
    """Stateful per-sequence wrapper around :func:`step_frame`."""

    def __init__(self, width: int, height: int, cfg: TrackerConfig = TrackerConfig()):
        self.width, self.height, self.cfg = width, height, cfg
        self.tracks: tuple[KalmanTrack, ...] = ()
        self.next_id = 0
        self.last_frame: int | None = None

    def step(self, frame_index: int, detections: Sequence[DesensRegion]) -> list[DesensRegion]:
        if self.last_frame is not None and frame_index <= self.last_frame:
            raise ValidationError(f"frame {frame_index} arrives after frame {self.last_frame}")
        self.last_frame = frame_index
        res = step_frame(self.tracks, detections, self.width, self.height, self.cfg, self.next_id)
        self.tracks, self.next_id = res.tracks, res.next_id
        return list(res.emitted)
