import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import dense_masks, face_object, mask_pairs, naive_bounds, naive_count, plate_object
from desens.core import (BBox, Category, FaceTriMask, FrameAnnotation, ObjectInstance, PixelMask,
                         PredictionSet, SequenceAnnotation, ValidationError, density, dumps,
                         parse_predictions, parse_sequence, serialize_sequence)


def naive_rle(a: np.ndarray) -> list[int]:
    runs, cur, n = [], False, 0
    for v in a.reshape(-1):
        if bool(v) != cur:
            runs.append(n)
            cur, n = bool(v), 0
        n += 1
    runs.append(n)
    return runs


@given(dense_masks())
def test_rle_matches_naive_encoder(a):
    m = PixelMask.from_dense(a)
    assert m.runs == naive_rle(a)
    assert PixelMask.from_rle(a.shape[1], a.shape[0], m.runs) == m


@given(dense_masks())
def test_tight_crop_round_trip(a):
    m = PixelMask.from_dense(a)
    assert np.array_equal(m.to_dense(), a)
    assert m.area == naive_count(a)
    if a.any():
        assert m.bounds == naive_bounds(a)
    else:
        assert m.bounds is None and not m


@given(mask_pairs())
def test_set_algebra_matches_dense(pair):
    a, b = pair
    ma, mb = PixelMask.from_dense(a), PixelMask.from_dense(b)
    assert np.array_equal((ma | mb).to_dense(), a | b)
    assert np.array_equal((ma & mb).to_dense(), a & b)
    assert np.array_equal((ma - mb).to_dense(), a & ~b)
    assert ma.intersection_area(mb) == naive_count(a & b)


@given(dense_masks(), st.integers(-5, 5), st.integers(-5, 5))
def test_translate_clips_at_frame(a, dx, dy):
    m = PixelMask.from_dense(a).translate(dx, dy)
    h, w = a.shape
    want = np.zeros_like(a)
    for y in range(h):
        for x in range(w):
            if a[y, x] and 0 <= x + dx < w and 0 <= y + dy < h:
                want[y + dy, x + dx] = True
    assert np.array_equal(m.to_dense(), want)


def test_rle_rejects_wrong_total():
    with pytest.raises(ValidationError):
        PixelMask.from_rle(3, 2, [1, 2])


def test_dimension_mismatch_raises():
    with pytest.raises(ValidationError):
        PixelMask.empty(4, 4) | PixelMask.empty(4, 5)


def test_mask_is_immutable():
    m = PixelMask.from_dense(np.ones((2, 2), bool))
    with pytest.raises(AttributeError):
        m.x0 = 1
    with pytest.raises(ValueError):
        m.bits[0, 0] = False


def test_bbox_pixel_span_uses_pixel_centers():
    assert BBox(0.4, 0.6, 2.5, 3.49).pixel_span(10, 10) == (0, 1, 2, 3)
    assert BBox(-3, -3, 20, 20).pixel_span(10, 8) == (0, 0, 10, 8)


@pytest.mark.parametrize("vals", [(0, 0, 0, 1), (2, 0, 1, 1), (0, float("nan"), 1, 1)])
def test_degenerate_box_rejected(vals):
    with pytest.raises(ValidationError):
        BBox(*vals)


def test_overlapping_tri_regions_rejected():
    d = np.zeros((6, 6), bool)
    d[1:3, 1:4] = True
    a = PixelMask.from_dense(d)
    with pytest.raises(ValidationError, match="overlap"):
        FaceTriMask(a, a, a)


def test_empty_region_needs_occlusion_flag():
    d = np.zeros((6, 6), bool)
    d[1:3, 1:4] = True
    a, e = PixelMask.from_dense(d), PixelMask.empty(6, 6)
    with pytest.raises(ValidationError):
        FaceTriMask(a, e, e)
    assert FaceTriMask(a, e, e, occluded=True).union == a


def test_gt_face_requires_tri_and_box_encloses_mask():
    with pytest.raises(ValidationError):
        ObjectInstance(Category.FACE, BBox(0, 0, 4, 4))
    d = np.zeros((10, 10), bool)
    d[2:8, 2:8] = True
    with pytest.raises(ValidationError, match="enclose"):
        ObjectInstance(Category.PLATE, BBox(3, 3, 8, 8), mask=PixelMask.from_dense(d))


def test_duplicate_track_ids_rejected():
    o = ObjectInstance(Category.PEDESTRIAN, BBox(0, 0, 2, 2), track_id=1)
    with pytest.raises(ValidationError):
        FrameAnnotation(0, (o, o))


def test_unsorted_frames_rejected():
    with pytest.raises(ValidationError):
        SequenceAnnotation("s", 8, 8, (FrameAnnotation(2), FrameAnnotation(1)))


def _sequence():
    W, H = 24, 20
    face = face_object(W, H, (2, 2, 8, 11))
    d = np.zeros((H, W), bool)
    d[14:17, 10:20] = True
    d[14, 10] = False
    plate = plate_object(PixelMask.from_dense(d))
    ped = ObjectInstance(Category.PEDESTRIAN, BBox(1, 1, 9.5, 19), track_id=3)
    frames = (FrameAnnotation(0, (face, plate, ped), image_path="000000.ppm",
                              label_maps={Category.PLATE: plate.mask}), FrameAnnotation(4))
    return SequenceAnnotation("seq", W, H, frames)


def test_serialize_round_trip_is_canonical():
    seq = _sequence()
    text = serialize_sequence(seq)
    back = parse_sequence(text)
    assert back == seq
    assert serialize_sequence(back) == text
    assert text.endswith(b"\n")
    assert json.loads(text) == json.loads(dumps(json.loads(text)))


def test_density_counts_sensitive_objects():
    assert density(_sequence().frames[0]) == 2


def test_parse_error_names_frame_and_object():
    doc = json.loads(serialize_sequence(_sequence()))
    del doc["frames"][0]["objects"][1]["mask_rle"]
    with pytest.raises(ValidationError, match=r"frame 0, object 1 \(plate\)"):
        parse_sequence(json.dumps(doc))


def test_bitmap_masks_accepted_on_input():
    seq = _sequence()
    doc = json.loads(serialize_sequence(seq))
    plate = doc["frames"][0]["objects"][1]
    m = seq.frames[0].objects[1].mask
    plate["mask_rle"] = {"bitmap": ["".join("1" if v else "0" for v in row) for row in m.to_dense()]}
    assert parse_sequence(json.dumps(doc)).frames[0].objects[1].mask == m


def test_boxes_clamped_on_parse():
    doc = {"sequence_id": "s", "width": 10, "height": 10, "frames": [{"frame_index": 0, "objects": [
        {"category": "car", "bbox": [-5, 2, 14, 8]}]}]}
    assert parse_sequence(json.dumps(doc)).frames[0].objects[0].bbox == BBox(0, 2, 10, 8)


def test_predictions_need_confidence():
    with pytest.raises(ValidationError, match="confidence"):
        parse_predictions(serialize_sequence(_sequence()))
    doc = json.loads(serialize_sequence(_sequence()))
    for o in doc["frames"][0]["objects"]:
        o["confidence"] = 0.5
    assert isinstance(parse_predictions(json.dumps(doc)), PredictionSet)
