import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import (dense_masks, face_object, naive_ap, naive_band_ioff, naive_iou, plate_object,
                      pr_oracle, small_scenes)
from desens.core import (BBox, Category, FaceTriMask, FrameAnnotation, ObjectInstance, PixelMask,
                         SequenceAnnotation)
from desens.metrics import (EmptyEvaluationError, MatchResult, RegionWeights, ap_from_hits,
                            average_precision, box_measure, coverage_ratio, evaluate_sequence,
                            greedy_match, ioff, ioff_at, mioff, region_ious)

W, H = 20, 16


def _boxes(items):
    return [(f, c, ObjectInstance(Category.CAR, b, confidence=c)) for f, c, b in items]


def _gt_boxes(items):
    return [(f, ObjectInstance(Category.CAR, b)) for f, b in items]


def _rows_pred(counts, width=10):
    d = np.zeros((H, W), bool)
    for y, n in enumerate(counts):
        d[y, :n] = True
    return PixelMask.from_dense(d)


def test_ioff_weighted_example():
    face = face_object(W, H, (0, 0, 10, 3))
    pred = _rows_pred([8, 6, 4])
    assert region_ious(pred, face) == pytest.approx([0.8, 0.6, 0.4], abs=1e-15)
    assert abs(ioff(pred, face) - 0.6) <= 1e-12


def test_ioff_perfect_is_exactly_one():
    face = face_object(W, H, (3, 2, 12, 14))
    assert ioff(face.mask, face) == 1.0


def test_ioff_weight_degeneracy_selects_mid():
    face = face_object(W, H, (0, 0, 10, 3))
    pred = _rows_pred([8, 6, 4])
    assert ioff(pred, face, RegionWeights(0, 1, 0)) == pytest.approx(0.6, abs=1e-15)
    assert ioff(pred, face, RegionWeights(1, 0, 0)) == pytest.approx(0.8, abs=1e-15)


def test_occluded_region_weight_is_renormalized():
    face = face_object(W, H, (0, 0, 10, 3))
    a, m, _ = face.tri.regions
    occl = ObjectInstance(Category.FACE, face.bbox, tri=FaceTriMask(a, m, PixelMask.empty(W, H), occluded=True))
    pred = _rows_pred([8, 6, 0])
    assert ioff(pred, occl) == pytest.approx((0.25 * 0.8 + 0.5 * 0.6) / 0.75, abs=1e-12)


@given(dense_masks(W, H), st.integers(0, 8), st.integers(0, 6), st.integers(3, 11), st.integers(3, 9))
def test_ioff_matches_band_oracle(pred, x0, y0, w, h):
    face = face_object(W, H, (x0, y0, x0 + w, y0 + h))
    regions = [r.to_dense() for r in face.tri.regions]
    want = naive_band_ioff(pred, regions, face.bbox, (0.25, 0.5, 0.25))
    got = ioff(PixelMask.from_dense(pred), face)
    assert abs(got - want) <= 1e-12
    assert 0.0 <= got <= 1.0


@given(dense_masks(W, H), st.integers(0, 2**32 - 1))
def test_ioff_monotone_in_correct_pixels(pred, seed):
    face = face_object(W, H, (2, 3, 12, 13))
    p = PixelMask.from_dense(pred)
    gt = face.mask.to_dense()
    extra = gt & (np.random.default_rng(seed).random((H, W)) < 0.5)
    assert ioff(p | PixelMask.from_dense(extra), face) >= ioff(p, face) - 1e-15


@given(dense_masks(W, H))
def test_plate_branch_is_plain_iou(pred):
    d = np.zeros((H, W), bool)
    d[4:9, 3:15] = True
    plate = plate_object(PixelMask.from_dense(d))
    assert abs(ioff(PixelMask.from_dense(pred), plate) - naive_iou(pred, d)) <= 1e-12


def test_ap_interleaved_example():
    hits = [(0.9, True), (0.8, False), (0.7, True)]
    assert ap_from_hits(hits, 2) == pytest.approx(pr_oracle(hits, 2), abs=1e-12)
    assert ap_from_hits(hits, 2) == pytest.approx(0.5 + 0.5 * 2 / 3, abs=1e-12)


def test_ap_trivial_cases():
    g = _gt_boxes([(0, BBox(0, 0, 5, 5)), (1, BBox(2, 2, 9, 9))])
    p = _boxes([(0, 0.9, BBox(0, 0, 5, 5)), (1, 0.4, BBox(2, 2, 9, 9))])
    assert average_precision(p, g, box_measure, 0.5) == 1.0
    assert average_precision([], g, box_measure, 0.5) == 0.0
    with pytest.raises(EmptyEvaluationError):
        average_precision(p, [], box_measure, 0.5)


@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), max_size=12), st.integers(0, 4))
def test_ap_from_hits_matches_enumeration(hits, extra):
    hits = sorted(hits, key=lambda t: -t[0])
    n_gt = sum(h for _, h in hits) + extra
    if n_gt == 0:
        return
    assert abs(ap_from_hits(hits, n_gt) - pr_oracle(hits, n_gt)) <= 1e-9


@given(small_scenes(), st.sampled_from([0.3, 0.5, 0.75]))
def test_average_precision_matches_brute_force(scene, thr):
    preds, gts = scene
    got = average_precision(_boxes(preds), _gt_boxes(gts), box_measure, thr)
    assert abs(got - naive_ap(preds, gts, thr)) <= 1e-9


@given(small_scenes())
def test_ap_invariant_to_monotone_confidence_transform(scene):
    preds, gts = scene
    warped = [(f, c ** 3, b) for f, c, b in preds]
    a = average_precision(_boxes(preds), _gt_boxes(gts), box_measure, 0.5)
    b = average_precision(_boxes(warped), _gt_boxes(gts), box_measure, 0.5)
    assert a == pytest.approx(b, abs=1e-12)


def _face_scene(seed):
    rng = np.random.default_rng(seed)
    gts, preds = [], []
    for f in range(4):
        x0 = int(rng.integers(0, 8))
        face = face_object(W, H, (x0, 2, x0 + 9, 11))
        gts.append((f, face))
        d = face.mask.to_dense() & (rng.random((H, W)) < rng.uniform(0.3, 1.0))
        preds.append((f, float(rng.random()), PixelMask.from_dense(d)))
    return preds, gts


@given(st.integers(0, 10_000))
def test_ioff_at_non_increasing_in_tau(seed):
    preds, gts = _face_scene(seed)
    vals = [ioff_at(preds, gts, t) for t in np.linspace(0.05, 1.0, 12)]
    assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))


def test_ioff_at_threshold_example():
    gts, preds = [], []
    for f in range(3):
        face = face_object(W, H, (0, 0, 10, 3))
        gts.append((f, face))
        preds.append((f, 0.5 + 0.1 * f, _rows_pred([6, 6, 6])))
    assert all(ioff(p, g) == pytest.approx(0.6) for (_, _, p), (_, g) in zip(preds, gts))
    assert ioff_at(preds, gts, 0.5) == 1.0
    assert ioff_at(preds, gts, 0.75) == 0.0
    perfect = [(f, 0.9, g.mask) for f, g in gts]
    assert ioff_at(perfect, gts, 0.5) == 1.0


def test_mioff_cases():
    perfect = MatchResult([(0, 0, 1.0), (1, 1, 1.0)])
    assert mioff(perfect) == 1.0
    half = MatchResult([(0, 0, 1.0), (1, 1, 1.0)], unmatched_gts=[2, 3])
    assert mioff({Category.FACE: half}) == 0.5
    assert mioff(MatchResult(unmatched_gts=[0, 1])) == 0.0
    # categories are averaged without weighting by count
    plates = MatchResult([(0, 0, 0.5)])
    assert mioff({Category.FACE: half, Category.PLATE: plates}) == pytest.approx(0.5)
    # an unmatched prediction costs as much as a missed object
    assert mioff(MatchResult([(0, 0, 1.0)], unmatched_preds=[5])) == 0.5
    with pytest.raises(EmptyEvaluationError):
        mioff(MatchResult(unmatched_preds=[1]))


def test_greedy_match_takes_best_free_gt():
    m = greedy_match([("a", 0.9, 1.0), ("b", 0.8, 2.0)], [("x", 1.1), ("y", 2.2)],
                     lambda p, g: 1 / (1 + abs(p - g)))
    assert [(a, b) for a, b, _ in m.pairs] == [("a", "x"), ("b", "y")]
    m = greedy_match([("a", 0.9, 1.0)], [("x", 100.0)], lambda p, g: 0.0)
    assert m.pairs == [] and m.unmatched_preds == ["a"] and m.unmatched_gts == ["x"]


def test_coverage_ratio():
    d = np.zeros((H, W), bool)
    d[2:6, 2:10] = True
    g = PixelMask.from_dense(d)
    half = d.copy()
    half[:, 6:] = False
    assert coverage_ratio(g, g) == 1.0
    assert coverage_ratio(PixelMask.empty(W, H), g) == 0.0
    assert coverage_ratio(PixelMask.from_dense(half), g) == 0.5
    with pytest.raises(EmptyEvaluationError):
        coverage_ratio(g, PixelMask.empty(W, H))


def _gt_sequence():
    d = np.zeros((H, W), bool)
    d[12:14, 4:14] = True
    frames = []
    for t in range(3):
        objs = (face_object(W, H, (1 + t, 1, 9 + t, 10)), plate_object(PixelMask.from_dense(d)),
                ObjectInstance(Category.PEDESTRIAN, BBox(0, 0, 12, 16)))
        frames.append(FrameAnnotation(t, objs))
    return SequenceAnnotation("s", W, H, tuple(frames))


def test_evaluate_sequence_perfect_and_empty():
    gt = _gt_sequence()
    rep = evaluate_sequence(gt, gt)
    assert rep.mioff == rep.ioff50 == rep.ioff75 == 1.0
    assert set(rep.ap.values()) == {1.0} and set(rep.ap50.values()) == {1.0}
    empty = evaluate_sequence(gt, SequenceAnnotation("e", W, H))
    assert empty.mioff == 0.0 and set(empty.ap.values()) == {0.0}
    assert [r["n_gt"] for r in rep.per_frame] == [2, 2, 2]
