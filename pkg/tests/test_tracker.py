"""Box geometry, context cropping, tracker wiring, and checkpoint identity."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rtlab.tensor import Tensor
from rtlab.recurrent import ConfigError
from rtlab.checkpoint import CheckpointError
from rtlab.tracker import (BBox, CropGeometry, InvalidBoxError, TrackingFault,
                           Tracker, TrackerModel, crop_with_context,
                           decode_box, encode_box, teacher_select,
                           track_sequence, write_box_file, read_box_file,
                           CONTEXT_FACTOR, MIN_BOX_EXTENT, DEFAULT_RAW)


def gradient_frame(h=24, w=24):
    y, x = np.mgrid[0:h, 0:w]
    f = ((x + y) / (h + w - 2)).astype(np.float64)
    return np.repeat(f[:, :, None], 3, axis=2)


# ---------------------------------------------------------------------------
# BBox


def test_bbox_conversions():
    b = BBox(10.0, 10.0, 4.0, 4.0)
    assert b.corners() == (8.0, 8.0, 12.0, 12.0)
    assert b.tlwh() == (8.0, 8.0, 4.0, 4.0)
    assert BBox.from_corners(8, 8, 12, 12) == b
    assert BBox.from_tlwh(8, 8, 4, 4) == b


def test_bbox_rejects_degenerate():
    with pytest.raises(InvalidBoxError):
        BBox(0, 0, 0.0, 1.0)
    with pytest.raises(InvalidBoxError):
        BBox(0, 0, 1.0, -2.0)
    with pytest.raises(InvalidBoxError):
        BBox(math.nan, 0, 1.0, 1.0)


# ---------------------------------------------------------------------------
# context crop geometry


def test_context_region_is_double_extent():
    frame = gradient_frame()
    _, geom = crop_with_context(frame, BBox(10, 10, 4, 4), out_res=8)
    assert CONTEXT_FACTOR == 2
    assert (geom.x0, geom.y0, geom.w, geom.h) == (6.0, 6.0, 8.0, 8.0)


def test_uniform_frame_gives_uniform_crop():
    frame = np.full((16, 16, 3), 0.37)
    crop, _ = crop_with_context(frame, BBox(2, 2, 6, 6), out_res=8)
    # region extends off-frame, but fill = frame mean = the same value
    assert np.allclose(crop, 0.37, atol=1e-12)
    assert crop.shape == (8, 8, 3)


def test_full_frame_crop_at_native_resolution_is_identity():
    frame = gradient_frame(8, 8)
    # context region [0,8) x [0,8): box centered at 4 with extent 4
    crop, geom = crop_with_context(frame, BBox(4, 4, 4, 4), out_res=8)
    assert (geom.x0, geom.y0, geom.w, geom.h) == (0.0, 0.0, 8.0, 8.0)
    assert np.allclose(crop, frame, atol=1e-12)


def test_out_of_frame_fill_is_frame_mean():
    frame = np.zeros((10, 10, 3))
    frame[:, :5] = 1.0  # mean 0.5
    # region entirely off the right edge
    crop, _ = crop_with_context(frame, BBox(40, 5, 4, 4), out_res=4)
    assert np.allclose(crop, 0.5, atol=1e-12)


def test_bilinear_midpoint_interpolation():
    frame = np.zeros((2, 2, 3))
    frame[0, 0] = 0.0
    frame[0, 1] = 1.0
    frame[1, 0] = 1.0
    frame[1, 1] = 2.0
    # one output sample at region center (1,1) in pixel-center coordinates:
    # sample point (0.5, 0.5) -> average of the four pixels
    crop, _ = crop_with_context(frame, BBox(1, 1, 1, 1), out_res=1)
    assert np.allclose(crop[0, 0], 1.0, atol=1e-12)


def test_geometry_roundtrip():
    geom = CropGeometry(3.0, -2.0, 10.0, 5.0, 7)
    u, v = geom.to_crop(5.5, 1.0)
    x, y = geom.to_frame(u, v)
    assert (x, y) == pytest.approx((5.5, 1.0), abs=1e-12)


# ---------------------------------------------------------------------------
# encode / decode


def test_encode_own_box_is_quarter_margins():
    _, geom = crop_with_context(gradient_frame(), BBox(10, 10, 4, 4), 8)
    assert encode_box(BBox(10, 10, 4, 4), geom).tolist() == [0.25, 0.25, 0.75, 0.75]
    assert np.array_equal(DEFAULT_RAW, [0.25, 0.25, 0.75, 0.75])


def test_decode_identity_example():
    geom = CropGeometry(0.0, 0.0, 64.0, 64.0, 64)
    box = decode_box(np.array([0.25, 0.25, 0.75, 0.75]), geom)
    assert box == BBox(32.0, 32.0, 32.0, 32.0)


def test_decode_clamps_thin_boxes_with_warning():
    geom = CropGeometry(0.0, 0.0, 100.0, 100.0, 8)
    with pytest.warns(RuntimeWarning, match="inverted"):
        box = decode_box(np.array([0.6, 0.2, 0.4, 0.3]), geom)
    assert box.w == MIN_BOX_EXTENT
    assert box.h == pytest.approx(10.0)
    assert box.cx == pytest.approx(50.0)  # midpoint preserved


def test_decode_rejects_non_finite():
    geom = CropGeometry(0.0, 0.0, 10.0, 10.0, 8)
    with pytest.raises(InvalidBoxError):
        decode_box(np.array([0.1, 0.1, math.nan, 0.5]), geom)


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.5, 40),
       st.floats(0.5, 40), st.floats(-30, 30), st.floats(-30, 30),
       st.floats(1, 50), st.floats(1, 50))
def test_encode_decode_roundtrip(cx, cy, w, h, gx, gy, gw, gh):
    geom = CropGeometry(gx, gy, gw, gh, 16)
    box = BBox(cx, cy, w, h)
    raw = encode_box(box, geom)
    out = decode_box(raw, geom)
    assert out.cx == pytest.approx(cx, abs=1e-8)
    assert out.cy == pytest.approx(cy, abs=1e-8)
    assert out.w == pytest.approx(max(w, MIN_BOX_EXTENT), abs=1e-8)
    assert out.h == pytest.approx(max(h, MIN_BOX_EXTENT), abs=1e-8)


# ---------------------------------------------------------------------------
# teacher selection


def test_teacher_select_extremes():
    gt, pred = BBox(0, 0, 1, 1), BBox(5, 5, 1, 1)
    rng = np.random.default_rng(0)
    assert all(teacher_select(gt, pred, 0.0, rng) is gt for _ in range(200))
    assert all(teacher_select(gt, pred, 1.0, rng) is pred for _ in range(200))


def test_teacher_select_is_balanced_at_half():
    gt, pred = BBox(0, 0, 1, 1), BBox(5, 5, 1, 1)
    rng = np.random.default_rng(1)
    picks = sum(teacher_select(gt, pred, 0.5, rng) is pred for _ in range(10_000))
    assert 4700 < picks < 5300


def test_teacher_select_validates_probability():
    with pytest.raises(ValueError):
        teacher_select(BBox(0, 0, 1, 1), BBox(0, 0, 1, 1), 1.5,
                       np.random.default_rng(0))


# ---------------------------------------------------------------------------
# model assembly


def test_model_rejects_mismatched_widths():
    from rtlab.extractor import extractor_config_for_variant
    from rtlab.recurrent import recurrent_config_for_variant
    ec = extractor_config_for_variant("plain", "desk")
    rc = recurrent_config_for_variant("residual", "desk")  # width 96 != 128
    with pytest.raises(ConfigError):
        TrackerModel("plain", scale="desk", extractor_config=ec,
                     recurrent_config=rc)


def test_untrained_model_is_identity_tracker():
    model = TrackerModel("plain", scale="desk", seed=0)
    frame = gradient_frame(32, 32)
    tracker = Tracker(model)
    init = BBox(16, 16, 6, 6)
    tracker.init(frame, init)
    out = tracker.step(frame)
    assert out.cx == pytest.approx(16.0, abs=1e-9)
    assert out.w == pytest.approx(6.0, abs=1e-9)


def test_param_count_composition():
    model = TrackerModel("dense", scale="desk", seed=0)
    total = sum(t.size for t in model.params().values())
    assert total == model.param_count()
    names = list(model.params())
    assert any(n.startswith("extractor.") for n in names)
    assert any(n.startswith("recurrent.") for n in names)
    assert any(n.startswith("head.") for n in names)


def test_track_sequence_returns_one_box_per_following_frame():
    model = TrackerModel("plain", scale="desk", seed=0)
    frames = [gradient_frame(32, 32) for _ in range(5)]
    boxes = track_sequence(model, frames, BBox(16, 16, 8, 8))
    assert len(boxes) == 4
    with pytest.raises(ValueError):
        track_sequence(model, frames[:1], BBox(16, 16, 8, 8))


def test_tracker_fault_reports_frame_index():
    model = TrackerModel("plain", scale="desk", seed=0)
    model.head.w.data[:] = np.nan
    tracker = Tracker(model)
    frame = gradient_frame(32, 32)
    tracker.init(frame, BBox(16, 16, 8, 8))
    with pytest.raises(TrackingFault) as exc:
        tracker.step(frame)
    assert exc.value.frame_index == 1


def test_step_before_init_rejected():
    model = TrackerModel("plain", scale="desk", seed=0)
    with pytest.raises(RuntimeError, match="before init"):
        Tracker(model).step(gradient_frame())


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip_bitwise(tmp_path):
    model = TrackerModel("residual", scale="desk", seed=3)
    # make running stats nontrivial before saving
    rng = np.random.default_rng(0)
    model.forward_step(Tensor(rng.uniform(size=(2, 64, 64, 3))),
                       Tensor(rng.uniform(size=(2, 64, 64, 3))), mode="train")
    path = tmp_path / "m.rtlb"
    model.save(path)
    assert TrackerModel.checkpoint_identity(path) == ("residual", "desk")

    clone = TrackerModel.from_checkpoint(path)
    for name, t in model.params().items():
        assert np.array_equal(clone.params()[name].data, t.data), name
    for name, a in model.state_arrays().items():
        assert np.array_equal(clone.state_arrays()[name], a), name

    # identical inference outputs
    x = rng.uniform(size=(1, 64, 64, 3))
    model.reset_states()
    clone.reset_states()
    a = model.forward_step(Tensor(x), Tensor(x.copy()), mode="infer").data
    b = clone.forward_step(Tensor(x), Tensor(x.copy()), mode="infer").data
    assert np.array_equal(a, b)


def test_checkpoint_extras_preserved(tmp_path):
    model = TrackerModel("plain", scale="desk", seed=0)
    path = tmp_path / "m.rtlb"
    model.save(path, extra={"trainer.state": np.array([5.0, 4.0, 2.0, 0.0, 1.0, 9.0])})
    extras = model.load(path)
    assert extras["trainer.state"].tolist() == [5.0, 4.0, 2.0, 0.0, 1.0, 9.0]


def test_load_rejects_missing_tensor(tmp_path):
    from rtlab.checkpoint import save_checkpoint, load_checkpoint
    model = TrackerModel("plain", scale="desk", seed=0)
    path = tmp_path / "m.rtlb"
    model.save(path)
    blobs = load_checkpoint(path)
    del blobs["head.w"]
    save_checkpoint(path, blobs)
    with pytest.raises(CheckpointError, match="head.w"):
        model.load(path)


def test_load_rejects_shape_mismatch(tmp_path):
    from rtlab.checkpoint import save_checkpoint, load_checkpoint
    model = TrackerModel("plain", scale="desk", seed=0)
    path = tmp_path / "m.rtlb"
    model.save(path)
    blobs = load_checkpoint(path)
    blobs["head.b"] = np.zeros(7)
    save_checkpoint(path, blobs)
    with pytest.raises(CheckpointError, match="head.b"):
        model.load(path)


# ---------------------------------------------------------------------------
# box files


def test_box_file_format(tmp_path):
    path = tmp_path / "boxes.txt"
    write_box_file(path, [BBox(10, 10, 4, 4), BBox(11.6, 9.2, 4.0, 4.0)])
    lines = path.read_text().splitlines()
    assert lines[0] == "8,8,4,4"
    assert lines[1] == "10,7,4,4"  # rounded top-left of (9.6, 7.2)


def test_box_file_roundtrip(tmp_path):
    path = tmp_path / "boxes.txt"
    boxes = [BBox(10, 10, 4, 4), BBox(20, 8, 6, 2)]
    write_box_file(path, boxes)
    back = read_box_file(path)
    assert back == boxes
