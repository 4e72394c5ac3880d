"""Multitask desensitization loss on dense head outputs.

Tensors are numpy arrays laid out (channels, rows, cols) at output stride R.
Every loss returns ``(value, gradient)`` with the gradient taken with respect
to the prediction tensor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import SENSITIVE, BBox, FrameAnnotation, ObjectInstance, ValidationError

EPS = 1e-6
HEAD_CLASSES = SENSITIVE  # heatmap channel order of the desensitization head


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 2.0
    beta: float = 4.0
    lambda_off: float = 1.0
    lambda_size: float = 0.1
    lambda_seg: float = 0.5
    stride: int = 4
    heatmap_channels: int = 2
    min_overlap: float = 0.7

    def __post_init__(self):
        if min(self.lambda_off, self.lambda_size, self.lambda_seg) < 0:
            raise ValidationError("loss weights must be non-negative")
        if self.stride < 1:
            raise ValidationError("stride must be >= 1")


@dataclass(frozen=True)
class KeypointTarget:
    channel: int
    ix: int
    iy: int
    offset: tuple[float, float]
    size: tuple[float, float]


class NoKeypointsError(ValidationError):
    pass


def keypoint_target(center: tuple[float, float], size: tuple[float, float], channel: int,
                    stride: int) -> KeypointTarget:
    px, py = center[0] / stride, center[1] / stride
    ix, iy = math.floor(px), math.floor(py)
    return KeypointTarget(channel, ix, iy, (px - ix, py - iy), (float(size[0]), float(size[1])))


def gaussian_radius(height: float, width: float, min_overlap: float = 0.7) -> float:
    """Smallest corner displacement that keeps IoU >= min_overlap with the box (three cases)."""
    a1 = 1
    b1 = height + width
    c1 = width * height * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 + math.sqrt(b1 ** 2 - 4 * a1 * c1)) / 2

    a2 = 4
    b2 = 2 * (height + width)
    c2 = (1 - min_overlap) * width * height
    r2 = (b2 + math.sqrt(b2 ** 2 - 4 * a2 * c2)) / 2

    a3 = 4 * min_overlap
    b3 = -2 * min_overlap * (height + width)
    c3 = (min_overlap - 1) * width * height
    r3 = (b3 + math.sqrt(b3 ** 2 - 4 * a3 * c3)) / 2
    return min(r1, r2, r3)


def splat_gaussian(heat: np.ndarray, ix: int, iy: int, sigma: float) -> None:
    """Element-wise max of a unit-peak Gaussian at (ix, iy) into ``heat`` (rows, cols)."""
    rad = max(1, int(math.ceil(3 * sigma)))
    h, w = heat.shape
    y0, y1 = max(0, iy - rad), min(h, iy + rad + 1)
    x0, x1 = max(0, ix - rad), min(w, ix + rad + 1)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    g = np.exp(-((xx - ix) ** 2 + (yy - iy) ** 2) / (2 * sigma * sigma))
    np.maximum(heat[y0:y1, x0:x1], g, out=heat[y0:y1, x0:x1])


@dataclass
class Targets:
    heatmap: np.ndarray              # (2, h, w)
    keypoints: list[KeypointTarget]
    seg: np.ndarray                  # (3, h, w) one-hot: face, plate, background


def render_targets(frame: FrameAnnotation, width: int, height: int, cfg: LossConfig = LossConfig()) -> Targets:
    R = cfg.stride
    if width % R or height % R:
        raise ValidationError(f"image {width}x{height} not divisible by stride {R}")
    h, w = height // R, width // R
    heat = np.zeros((cfg.heatmap_channels, h, w))
    kps = []
    votes = np.zeros((3, h, w))
    for o in frame.objects:
        if o.category not in HEAD_CLASSES:
            continue
        c = HEAD_CLASSES.index(o.category)
        cx, cy = o.bbox.center
        if not (0 <= cx < width and 0 <= cy < height):
            raise ValidationError(f"object center ({cx}, {cy}) outside the image")
        kp = keypoint_target((cx, cy), (o.bbox.width, o.bbox.height), c, R)
        kps.append(kp)
        r = gaussian_radius(o.bbox.height / R, o.bbox.width / R, cfg.min_overlap)
        splat_gaussian(heat[c], kp.ix, kp.iy, max(1.0, r / 3))
        if o.mask is not None and o.mask:
            dense = o.mask.to_dense()
            votes[c] += dense.reshape(h, R, w, R).sum(axis=(1, 3))
    votes[2] = R * R - votes[0] - votes[1]
    # majority class per cell; ties go to the lower channel
    seg = np.eye(3)[np.argmax(votes, axis=0)].transpose(2, 0, 1)
    return Targets(heat, kps, seg)


def dense_regression(kps: Sequence[KeypointTarget], shape: tuple[int, int], attr: str) -> np.ndarray:
    """Scatter sparse offset/size targets into a (2, h, w) map (later objects win a shared cell)."""
    out = np.zeros((2,) + shape)
    for k in kps:
        out[:, k.iy, k.ix] = getattr(k, attr)
    return out


def _focal(pred: np.ndarray, gt: np.ndarray, cfg: LossConfig) -> tuple[float, np.ndarray]:
    if pred.shape != gt.shape:
        raise ValidationError(f"shape mismatch {pred.shape} vs {gt.shape}")
    pos = gt == 1
    n = int(pos.sum())
    if n == 0:
        raise NoKeypointsError("focal loss needs at least one positive")
    a, b = cfg.alpha, cfg.beta
    inside = (pred >= EPS) & (pred <= 1 - EPS)
    p = np.clip(pred, EPS, 1 - EPS)
    neg_w = (1 - gt) ** b
    pos_term = (1 - p) ** a * np.log(p)
    neg_term = neg_w * p ** a * np.log(1 - p)
    loss = -(pos_term[pos].sum() + neg_term[~pos].sum()) / n
    d_pos = -a * (1 - p) ** (a - 1) * np.log(p) + (1 - p) ** a / p
    d_neg = neg_w * (a * p ** (a - 1) * np.log(1 - p) - p ** a / (1 - p))
    grad = -np.where(pos, d_pos, d_neg) / n
    grad = np.where(inside, grad, 0.0)
    return float(loss), grad


def focal_keypoint_loss(yhat: np.ndarray, y: np.ndarray, cfg: LossConfig = LossConfig()):
    """Penalty-reduced focal loss on the center heatmap, normalized by the keypoint count."""
    return _focal(yhat, y, cfg)


def seg_focal_loss(that: np.ndarray, t: np.ndarray, cfg: LossConfig = LossConfig()):
    """Same focal form on the 3-class segmentation map, normalized by positive pixels."""
    if that.shape[0] != 3:
        raise ValidationError("segmentation map must have 3 channels")
    return _focal(that, t, cfg)


def _l1_at(pred: np.ndarray, kps: Sequence[KeypointTarget], attr: str) -> tuple[float, np.ndarray]:
    if not kps:
        raise NoKeypointsError("regression loss needs at least one target")
    n = len(kps)
    grad = np.zeros_like(pred, dtype=float)
    total = 0.0
    for k in kps:
        diff = pred[:, k.iy, k.ix] - np.asarray(getattr(k, attr))
        total += float(np.abs(diff).sum())
        grad[:, k.iy, k.ix] += np.sign(diff) / n
    return total / n, grad


def offset_loss(ohat: np.ndarray, kps: Sequence[KeypointTarget], cfg: LossConfig = LossConfig()):
    return _l1_at(ohat, kps, "offset")


def size_loss(shat: np.ndarray, kps: Sequence[KeypointTarget], cfg: LossConfig = LossConfig()):
    return _l1_at(shat, kps, "size")


def total_loss(components: Sequence[float], cfg: LossConfig = LossConfig()) -> float:
    lk, loff, lsize, lseg = components
    if not all(math.isfinite(v) for v in components):
        raise ValidationError(f"non-finite loss component in {tuple(components)}")
    return lk + cfg.lambda_off * loff + cfg.lambda_size * lsize + cfg.lambda_seg * lseg


def decode_detections(yhat: np.ndarray, shat: np.ndarray, ohat: np.ndarray, top_k: int = 100,
                      cfg: LossConfig = LossConfig(), min_score: float = 0.0) -> list[ObjectInstance]:
    """Top-k 3x3 local maxima of the heatmap turned back into boxes.

    Ties in score are broken by lowest (row, col), then channel.
    """
    C, h, w = yhat.shape
    if C > len(HEAD_CLASSES):
        raise ValidationError(f"heatmap has {C} channels, the head defines {len(HEAD_CLASSES)}")
    padded = np.pad(yhat, ((0, 0), (1, 1), (1, 1)), constant_values=-np.inf)
    nb = np.max(np.stack([padded[:, dy:dy + h, dx:dx + w] for dy in range(3) for dx in range(3)]), axis=0)
    peaks = np.argwhere(yhat >= nb)
    scores = yhat[peaks[:, 0], peaks[:, 1], peaks[:, 2]]
    keep = scores >= min_score
    peaks, scores = peaks[keep], scores[keep]
    order = np.lexsort((peaks[:, 0], peaks[:, 2], peaks[:, 1], -scores))[:top_k]
    R = cfg.stride
    out = []
    for i in order:
        c, iy, ix = (int(v) for v in peaks[i])
        cx = (ix + ohat[0, iy, ix]) * R
        cy = (iy + ohat[1, iy, ix]) * R
        sw, sh = float(shat[0, iy, ix]), float(shat[1, iy, ix])
        if sw <= 0 or sh <= 0:
            continue
        cat = HEAD_CLASSES[c]
        out.append(ObjectInstance(cat, BBox.from_center(float(cx), float(cy), sw, sh),
                                  confidence=float(min(1.0, max(0.0, scores[i])))))
    return out


# ---------------------------------------------------------------------------
# finite-difference self check

def _fd(f, x: np.ndarray, h: float = 1e-5, idx=None) -> np.ndarray:
    g = np.zeros_like(x)
    it = idx if idx is not None else list(np.ndindex(*x.shape))
    for i in it:
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||), 0 when both vanish."""
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    return float(np.linalg.norm(a - b) / den) if den > 0 else 0.0


def random_case(rng: np.random.Generator, shape=(2, 8, 8), n_peaks: int = 3, cfg: LossConfig = LossConfig()):
    """Random heatmap target with a few unit peaks, predictions away from the clamp edges."""
    C, h, w = shape
    y = np.zeros(shape)
    cells = rng.choice(C * h * w, size=n_peaks, replace=False)
    kps = []
    for cell in cells:
        c, iy, ix = np.unravel_index(cell, shape)
        splat_gaussian(y[c], int(ix), int(iy), 1.0)
        kps.append(KeypointTarget(int(c), int(ix), int(iy),
                                  tuple(rng.uniform(0.05, 0.95, 2)), tuple(rng.uniform(4, 40, 2))))
    yhat = rng.uniform(0.05, 0.95, shape)
    t = np.eye(3)[rng.integers(0, 3, size=(h, w))].transpose(2, 0, 1)
    that = rng.uniform(0.05, 0.95, (3, h, w))
    # L1 regressions: keep every prediction well away from its target (kinks)
    ohat = np.zeros((2, h, w))
    shat = np.zeros((2, h, w))
    for k in kps:
        ohat[:, k.iy, k.ix] = np.asarray(k.offset) + rng.choice([-1, 1], 2) * rng.uniform(0.01, 0.3, 2)
        shat[:, k.iy, k.ix] = np.asarray(k.size) + rng.choice([-1, 1], 2) * rng.uniform(0.5, 3, 2)
    return yhat, y, ohat, shat, kps, that, t


def check_gradients(seed: int, cfg: LossConfig = LossConfig(), h: float = 1e-5) -> dict:
    """Loss values and analytic-vs-central-difference gradient errors on a random case."""
    rng = np.random.default_rng(seed)
    yhat, y, ohat, shat, kps, that, t = random_case(rng, cfg=cfg)
    # keypoints may share a cell; keep one per cell so kinks stay excluded
    seen, uniq = set(), []
    for k in kps:
        if (k.iy, k.ix) not in seen:
            seen.add((k.iy, k.ix))
            uniq.append(k)
    kps = uniq
    lk, gk = focal_keypoint_loss(yhat, y, cfg)
    loff, goff = offset_loss(ohat, kps, cfg)
    lsize, gsize = size_loss(shat, kps, cfg)
    lseg, gseg = seg_focal_loss(that, t, cfg)
    sparse_idx = [(a, k.iy, k.ix) for k in kps for a in range(2)]
    errors = {
        "keypoint": relative_error(gk, _fd(lambda x: focal_keypoint_loss(x, y, cfg)[0], yhat.copy(), h)),
        "offset": relative_error(goff, _fd(lambda x: offset_loss(x, kps, cfg)[0], ohat.copy(), h, sparse_idx)),
        "size": relative_error(gsize, _fd(lambda x: size_loss(x, kps, cfg)[0], shat.copy(), h, sparse_idx)),
        "seg": relative_error(gseg, _fd(lambda x: seg_focal_loss(x, t, cfg)[0], that.copy(), h)),
    }
    return {
        "seed": seed,
        "components": {"keypoint": lk, "offset": loff, "size": lsize, "seg": lseg},
        "total": total_loss((lk, loff, lsize, lseg), cfg),
        "fd_relative_error": errors,
        "max_fd_error": max(errors.values()),
    }
