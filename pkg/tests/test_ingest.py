import json
import shutil

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from handover_sim.errors import (
    InputError,
    InvariantViolation,
    MalformedCalibration,
    MissingFile,
    SchemaViolation,
    TruncatedFile,
    UnsupportedFormat,
)
from handover_sim.geom import CameraProjection
from handover_sim.ingest import (
    BUNDLE_FILES,
    GroundTruth,
    SilhouetteMask,
    TraceFrame,
    calibration_text,
    mask_to_bytes,
    parse_calibration,
    parse_estimates,
    parse_mask,
    parse_scenario,
    parse_trace,
    trace_header,
    trace_text,
    write_calibration,
    write_scenario,
    write_trace,
)
from handover_sim.params import DensityTable


@pytest.fixture(scope="module")
def bundle(tmp_path_factory, demo_scenes):
    root = tmp_path_factory.mktemp("bundle") / "clean"
    write_scenario(root, demo_scenes["cylinder_clean"])
    return root


def copy_bundle(bundle, tmp_path):
    dst = tmp_path / "b"
    shutil.copytree(bundle, dst)
    return dst


# -- masks --------------------------------------------------------------------

def test_all_white_p5(tmp_path):
    p = tmp_path / "m.pgm"
    p.write_bytes(b"P5\n4 4\n255\n" + bytes([255] * 16))
    assert parse_mask(p).count == 16


def test_all_black_p2(tmp_path):
    p = tmp_path / "m.pgm"
    p.write_text("P2\n# comment line\n3 2\n255\n0 0 0\n0 0 0\n")
    assert parse_mask(p).count == 0


def test_checkerboard_indices(tmp_path):
    p = tmp_path / "m.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([255, 0, 0, 255]))
    m = parse_mask(p)
    assert m.count == 2
    assert m.bits[0, 0] and m.bits[1, 1] and not m.bits[0, 1] and not m.bits[1, 0]


def test_threshold_at_127(tmp_path):
    p = tmp_path / "m.pgm"
    p.write_bytes(b"P5\n3 1\n255\n" + bytes([127, 128, 200]))
    assert parse_mask(p).bits.tolist() == [[False, True, True]]


def test_sixteen_bit_mask(tmp_path):
    p = tmp_path / "m.pgm"
    p.write_bytes(b"P5\n2 1\n65535\n" + np.array([0, 65535], dtype=">u2").tobytes())
    assert parse_mask(p).bits.tolist() == [[False, True]]


def test_mask_errors(tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(UnsupportedFormat):
        parse_mask(bad)
    short = tmp_path / "short.pgm"
    short.write_bytes(b"P5\n4 4\n255\n" + bytes(10))
    with pytest.raises(TruncatedFile):
        parse_mask(short)


@given(st.integers(1, 12), st.integers(1, 12), st.data())
def test_p5_round_trip_is_byte_identical(w, h, data):
    bits = np.array(data.draw(st.lists(st.booleans(), min_size=w * h, max_size=w * h))).reshape(h, w)
    raw = mask_to_bytes(SilhouetteMask(w, h, bits))
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "m.pgm"
        p.write_bytes(raw)
        back = parse_mask(p)
    assert np.array_equal(back.bits, bits)
    assert mask_to_bytes(back) == raw


# -- calibration --------------------------------------------------------------

def test_identity_calibration_exact(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("1 0 0 0\n0 1 0 0\n0 0 1 0\n640 480\n")
    cam = parse_calibration(p)
    assert np.array_equal(cam.matrix, np.hstack([np.eye(3), np.zeros((3, 1))]))
    assert (cam.image_width, cam.image_height) == (640, 480)


def test_calibration_too_few_numbers(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text(" ".join(["1"] * 11))
    with pytest.raises(MalformedCalibration):
        parse_calibration(p)


def test_calibration_round_trip_random(tmp_path):
    rng = np.random.default_rng(5)
    for i in range(50):
        m = rng.normal(0, 1000, (3, 4))
        cam = CameraProjection(m, 320, 240)
        p = tmp_path / f"c{i}.txt"
        write_calibration(p, cam)
        back = parse_calibration(p)
        assert np.array_equal(back.matrix, m)
        assert calibration_text(back) == p.read_text()


# -- trace ---------------------------------------------------------------------

def test_trace_header_layout():
    h = trace_header()
    assert h[:2] == ["frame", "t"] and h[-4:] == ["v0_u", "v0_v", "v1_u", "v1_v"]
    assert len(h) == 2 + 2 * 63 + 4


def test_trace_round_trip_with_absent_hands(tmp_path):
    rng = np.random.default_rng(1)
    frames = [
        TraceFrame(0, 0.0, None, rng.normal(size=(21, 3)), ((1.5, 2.5), None)),
        TraceFrame(1, 1 / 30, rng.normal(size=(21, 3)), None, (None, (3.0, 4.0))),
        TraceFrame(2, 2 / 30, None, None, (None, None)),
    ]
    p = tmp_path / "trace.csv"
    write_trace(p, frames)
    back = parse_trace(p)
    assert len(back) == 3
    assert back[0].left_hand is None and np.array_equal(back[0].right_hand, frames[0].right_hand)
    assert back[1].centroid_px == (None, (3.0, 4.0))
    assert back[2].hands() == []
    assert trace_text(back) == p.read_text()


def test_trace_rejects_non_increasing_time(tmp_path):
    frames = [TraceFrame(0, 0.1), TraceFrame(1, 0.1)]
    p = tmp_path / "trace.csv"
    p.write_text(trace_text(frames))
    with pytest.raises(InvariantViolation) as err:
        parse_trace(p)
    assert err.value.line == 3


def test_trace_rejects_partial_hand(tmp_path):
    frames = [TraceFrame(0, 0.0, None, np.zeros((21, 3)))]
    text = trace_text(frames).splitlines()
    cells = text[1].split(",")
    cells[70] = ""  # blank one right-hand coordinate
    p = tmp_path / "trace.csv"
    p.write_text("\n".join([text[0], ",".join(cells)]) + "\n")
    with pytest.raises(SchemaViolation):
        parse_trace(p)


# -- estimates ----------------------------------------------------------------

def _estimates_file(tmp_path, rows):
    p = tmp_path / "estimates.csv"
    header = "frame,view,empty,P5,P9,R5,R9,W5,W9,unknown"
    p.write_text("\n".join([header, *rows]) + "\n")
    return p


def test_estimates_bad_sum_names_row(tmp_path):
    p = _estimates_file(tmp_path, ["0,0,1,0,0,0,0,0,0,0", "0,1,0.9,0,0,0,0,0,0,0"])
    with pytest.raises(InvariantViolation) as err:
        parse_estimates(p, [0])
    assert err.value.line == 3
    assert "row 3" in str(err.value)


def test_estimates_missing_frames_are_uniform(tmp_path):
    p = _estimates_file(tmp_path, ["1,0,1,0,0,0,0,0,0,0", "1,1,1,0,0,0,0,0,0,0"])
    s = parse_estimates(p, [0, 1])
    assert s.present.tolist() == [False, True]
    np.testing.assert_allclose(s.probs[0], 1.0 / 8)


def test_estimates_single_view_frame(tmp_path):
    p = _estimates_file(tmp_path, ["0,0,1,0,0,0,0,0,0,0"])
    with pytest.raises(SchemaViolation):
        parse_estimates(p, [0])


def test_estimates_unknown_frame(tmp_path):
    p = _estimates_file(tmp_path, ["7,0,1,0,0,0,0,0,0,0"])
    with pytest.raises(SchemaViolation):
        parse_estimates(p, [0])


# -- ground truth ---------------------------------------------------------------

def test_ground_truth_level_iff_content():
    with pytest.raises(ValueError):
        GroundTruth(10.0, "water", 0.0, 100.0)
    with pytest.raises(ValueError):
        GroundTruth(10.0, "none", 0.5, 100.0)
    gt = GroundTruth(20.0, "water", 0.5, 400.0)
    assert gt.object_mass(DensityTable()) == 220.0


# -- bundle ---------------------------------------------------------------------

def test_bundle_frame_count(bundle, demo_scenes):
    sc = parse_scenario(bundle)
    assert len(sc.frames) == len(demo_scenes["cylinder_clean"].frames)
    assert sc.scenario_id == "cylinder_clean"


def test_bundle_round_trip_is_identical(bundle, tmp_path):
    sc = parse_scenario(bundle)
    out = write_scenario(tmp_path / "again", sc)
    for name in BUNDLE_FILES:
        assert (out / name).read_bytes() == (bundle / name).read_bytes(), name


@pytest.mark.parametrize("name", BUNDLE_FILES)
def test_each_missing_file_is_reported(bundle, tmp_path, name):
    b = copy_bundle(bundle, tmp_path)
    (b / name).unlink()
    with pytest.raises(MissingFile) as err:
        parse_scenario(b)
    assert err.value.name == name


def test_missing_mask_message(bundle, tmp_path):
    b = copy_bundle(bundle, tmp_path)
    (b / "mask_1.pgm").unlink()
    with pytest.raises(MissingFile) as err:
        parse_scenario(b)
    assert str(err.value) == "MissingFile('mask_1.pgm')"


def test_mask_camera_size_mismatch(bundle, tmp_path):
    b = copy_bundle(bundle, tmp_path)
    (b / "mask_0.pgm").write_bytes(b"P5\n2 2\n255\n" + bytes(4))
    with pytest.raises(InvariantViolation):
        parse_scenario(b)


def test_bad_json_reports_line(bundle, tmp_path):
    b = copy_bundle(bundle, tmp_path)
    (b / "scenario.json").write_text('{\n  "id": "x",\n  oops\n}')
    with pytest.raises(SchemaViolation) as err:
        parse_scenario(b)
    assert err.value.line == 3


def test_out_of_bounds_parameter_is_input_error(bundle, tmp_path):
    b = copy_bundle(bundle, tmp_path)
    meta = json.loads((b / "scenario.json").read_text())
    meta["params"] = {"c": 1.5}
    (b / "scenario.json").write_text(json.dumps(meta))
    with pytest.raises(InputError):
        parse_scenario(b)


def test_cli_overrides_win_over_bundle(bundle, tmp_path):
    b = copy_bundle(bundle, tmp_path)
    meta = json.loads((b / "scenario.json").read_text())
    meta["params"] = {"standoff": 80.0}
    (b / "scenario.json").write_text(json.dumps(meta))
    assert parse_scenario(b).params.standoff == 80.0
    assert parse_scenario(b, {"standoff": 120.0}).params.standoff == 120.0
    assert parse_scenario(b, {"eta": 300.0}).delivery_radius == 300.0


def test_non_stochastic_transition_rejected(bundle, tmp_path):
    b = copy_bundle(bundle, tmp_path)
    meta = json.loads((b / "scenario.json").read_text())
    meta["transition_matrix"] = (np.eye(8) * 0.5).tolist()
    (b / "scenario.json").write_text(json.dumps(meta))
    with pytest.raises(InvariantViolation):
        parse_scenario(b)
