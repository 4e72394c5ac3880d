"""Sequence-level composition: DJ -> DSJ -> KFJ over ordered frames."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .core import FrameAnnotation, PredictionSet, SequenceAnnotation
from .geometry import box_iou
from .postproc import (COAST_CONFLICT, LOW_IOU, DesensRegion, FrameResult, JointConfig, Rejection,
                       desensitize_frame)
from .tracker import KalmanJoin, TrackerConfig


@dataclass(frozen=True)
class PipelineConfig:
    dj: bool = True
    dsj: bool = True
    kfj: bool = True
    joint: JointConfig = field(default_factory=JointConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)

    @property
    def name(self) -> str:
        parts = [n for n, on in (("DJ", self.dj), ("DSJ", self.dsj), ("KFJ", self.kfj)) if on]
        return "+".join(parts) or "baseline"


ABLATION = {
    "baseline": (False, False, False),
    "DJ": (True, False, False),
    "DSJ": (False, True, False),
    "KFJ": (False, False, True),
    "DJ+KFJ": (True, False, True),
    "DSJ+KFJ": (False, True, True),
}


def ablation_config(name: str, base: PipelineConfig = PipelineConfig()) -> PipelineConfig:
    dj, dsj, kfj = ABLATION[name]
    return replace(base, dj=dj, dsj=dsj, kfj=kfj)


@dataclass
class PipelineOutput:
    width: int
    height: int
    frames: list[FrameResult]

    def audit(self) -> list[dict]:
        rows = []
        for f in self.frames:
            for r in f.rejected:
                rows.append({"frame_index": f.frame_index, **r.to_dict()})
        return rows

    def as_predictions(self, sequence_id: str) -> PredictionSet:
        frames = [FrameAnnotation(f.frame_index, tuple(r.to_object() for r in f.accepted)) for f in self.frames]
        return PredictionSet(sequence_id, self.width, self.height, tuple(frames))


def run_pipeline(preds: SequenceAnnotation, cfg: PipelineConfig = PipelineConfig()) -> PipelineOutput:
    w, h = preds.width, preds.height
    kf = KalmanJoin(w, h, cfg.tracker) if cfg.kfj else None
    frames = []
    for frame in preds.frames:
        res = desensitize_frame(frame, w, h, cfg.joint, use_dj=cfg.dj, use_dsj=cfg.dsj)
        accepted = list(res.accepted)
        rejected = list(res.rejected)
        if kf is not None:
            accepted = kf.step(frame.frame_index, accepted)
            rejected += _coast_conflicts(accepted, res.rejected)
        frames.append(FrameResult(frame.frame_index, tuple(accepted), tuple(rejected)))
    return PipelineOutput(w, h, frames)


def _coast_conflicts(emitted: list[DesensRegion], rejected) -> list[Rejection]:
    """A coasted region overlapping a detection DSJ just rejected is kept, but logged."""
    out = []
    for r in emitted:
        if not r.coasted:
            continue
        for rej in rejected:
            if rej.reason == LOW_IOU and rej.category is r.category and box_iou(rej.box, r.source_box) > 0:
                out.append(Rejection(COAST_CONFLICT, r.category, r.source_box, r.confidence,
                                     f"track={r.track_id}"))
                break
    return out

