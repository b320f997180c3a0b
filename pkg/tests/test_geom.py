import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from handover_sim.errors import BehindCamera, DegenerateProjection, NonFiniteMeasurement, ParallelRays
from handover_sim.geom import (
    CameraProjection,
    initial_state,
    kalman_step,
    look_at_camera,
    point_segment_distance,
    points_segment_distance,
    project,
    project_many,
    triangulate,
)
from handover_sim.synth import orthogonal_cameras, scene_cameras

coord = st.floats(-5.0, 5.0, allow_nan=False)
point = st.tuples(coord, coord, coord).map(np.array)


def identity_camera():
    return CameraProjection(np.hstack([np.eye(3), np.zeros((3, 1))]), 640, 480)


def random_camera_pair(rng):
    target = rng.uniform(-100, 100, 3)
    cams = []
    for _ in range(2):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        eye = target + direction * rng.uniform(500, 3000)
        cams.append(look_at_camera(eye, target, rng.uniform(300, 2000), 640, 480, up=(0.0, 0.0, 1.0) if abs(direction[2]) < 0.9 else (0.0, 1.0, 0.0)))
    return target, cams


# -- projection ---------------------------------------------------------------

def test_project_optical_axis_point():
    assert project(identity_camera(), (0.0, 0.0, 1000.0)) == pytest.approx((0.0, 0.0), abs=0)


def test_project_similar_triangles():
    u, v = project(identity_camera(), (100.0, 50.0, 1000.0))
    assert u == pytest.approx(0.1, abs=1e-15)
    assert v == pytest.approx(0.05, abs=1e-15)


def test_project_zero_depth_is_degenerate():
    with pytest.raises(DegenerateProjection):
        project(identity_camera(), (1.0, 2.0, 0.0))


def test_camera_rejects_singular_block():
    m = np.zeros((3, 4))
    with pytest.raises(ValueError):
        CameraProjection(m, 10, 10)


def test_project_many_matches_scalar(rng):
    cam = scene_cameras()[0]
    pts = rng.uniform(-200, 200, (20, 3)) + np.array([0.0, 550.0, 200.0])
    u, v, _ = project_many(cam, pts)
    for i, p in enumerate(pts):
        assert (u[i], v[i]) == pytest.approx(project(cam, p), abs=1e-9)


# -- triangulation ------------------------------------------------------------

def test_triangulate_orthogonal_round_trip():
    cam_a, cam_b = orthogonal_cameras(target=(0.0, 0.0, 300.0))
    p = np.array([10.0, 20.0, 300.0])
    out = triangulate(cam_a, project(cam_a, p), cam_b, project(cam_b, p))
    np.testing.assert_allclose(out, p, atol=1e-6)


def test_triangulate_random_pairs_round_trip():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(300):
        target, (ca, cb) = random_camera_pair(rng)
        p = target + rng.uniform(-50, 50, 3)
        if ca.depth(p) <= 0 or cb.depth(p) <= 0:
            continue
        out = triangulate(ca, project(ca, p), cb, project(cb, p))
        worst = max(worst, float(np.linalg.norm(out - p)))
    assert worst < 1e-6


def test_triangulate_parallel_rays():
    cam = orthogonal_cameras()[0]
    px = project(cam, (0.0, 0.0, 50.0))
    with pytest.raises(ParallelRays):
        triangulate(cam, px, cam, px)


def test_triangulate_behind_camera():
    cam_a, cam_b = orthogonal_cameras(target=(0.0, 0.0, 0.0), distance=1000.0)
    # Rays that meet behind camera b: aim both views at a point beyond camera b.
    p = np.array([2000.0, 0.0, 0.0])
    ua = project(cam_a, p)
    # Pixel of the mirrored point in front of b is the same ray extended backwards.
    ub = project(cam_b, np.array([0.0, 0.0, 0.0]))
    with pytest.raises(BehindCamera):
        triangulate(cam_a, ua, cam_b, ub)


def _reprojection_error(cams, pixels, pts):
    total = np.zeros(len(pts))
    for cam, (pu, pv) in zip(cams, pixels):
        u, v, _ = project_many(cam, pts)
        total += (u - pu) ** 2 + (v - pv) ** 2
    return total


def grid_search_triangulate(cams, pixels, guess, half=4.0, levels=6, n=21):
    """Dense coarse-to-fine grid minimising the summed squared reprojection error."""
    centre = np.asarray(guess, dtype=np.float64)
    for _ in range(levels):
        axis = np.linspace(-half, half, n)
        gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
        pts = centre + np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
        centre = pts[int(np.argmin(_reprojection_error(cams, pixels, pts)))]
        half = 2.0 * half / (n - 1)
    return centre


@pytest.mark.parametrize("seed", range(5))
def test_triangulate_noisy_pixels_agree_with_grid_search(seed):
    rng = np.random.default_rng(seed)
    cams = scene_cameras()
    p = np.array([0.0, 550.0, 200.0]) + rng.uniform(-80, 80, 3)
    pixels = [tuple(np.array(project(c, p)) + 1.0) for c in cams]
    mid = triangulate(cams[0], pixels[0], cams[1], pixels[1])
    best = grid_search_triangulate(cams, pixels, mid)
    assert np.linalg.norm(mid - best) < 0.5


# -- Kalman filter -------------------------------------------------------------

def test_zero_measurement_noise_pins_position():
    state = initial_state((5.0, -3.0, 2.0))
    state = kalman_step(state, (1.0, 2.0, 3.0), 1 / 30, 100.0, 25.0)
    m = np.array([123.456, -7.25, 1e3 / 3.0])
    out = kalman_step(state, m, 1 / 30, 100.0, 0.0)
    assert np.array_equal(out.position, m)


def test_constant_stream_settles():
    m = np.array([10.0, 20.0, 30.0])
    state = initial_state(m)
    for _ in range(100):
        state = kalman_step(state, m, 1 / 30, 100.0, 25.0)
    np.testing.assert_allclose(state.position, m, atol=1e-9)
    assert np.linalg.norm(state.velocity) < 1e-6


def test_constant_stream_from_offset_start_converges():
    m = np.array([10.0, 20.0, 30.0])
    state = initial_state(np.zeros(3))
    for _ in range(300):
        state = kalman_step(state, m, 1 / 30, 100.0, 25.0)
    np.testing.assert_allclose(state.position, m, atol=1e-6)
    assert np.linalg.norm(state.velocity) < 1e-6


def test_constant_velocity_line():
    v = np.array([100.0, -50.0, 20.0])
    state = initial_state(np.zeros(3))
    for k in range(1, 201):
        state = kalman_step(state, v * k / 30.0, 1 / 30, 100.0, 25.0)
    assert np.linalg.norm(state.velocity - v) < 0.01 * np.linalg.norm(v)


def test_kalman_deterministic():
    a = initial_state((1.0, 2.0, 3.0))
    b = initial_state((1.0, 2.0, 3.0))
    rng = np.random.default_rng(9)
    for _ in range(50):
        m = rng.normal(0, 10, 3)
        a = kalman_step(a, m, 0.03, 100.0, 25.0)
        b = kalman_step(b, m, 0.03, 100.0, 25.0)
    assert a.vector.tobytes() == b.vector.tobytes()
    assert a.covariance.tobytes() == b.covariance.tobytes()


def test_covariance_stays_psd_over_many_random_steps():
    rng = np.random.default_rng(2024)
    n = 100_000
    meas = rng.normal(0.0, 100.0, (n, 3))
    dts = rng.uniform(1e-3, 0.2, n)
    qs = rng.uniform(0.0, 1000.0, n)
    rs = rng.uniform(0.0, 100.0, n)
    rs[rng.random(n) < 0.01] = 0.0
    state = initial_state(np.zeros(3))
    worst = math.inf
    for k in range(n):
        state = kalman_step(state, meas[k], dts[k], qs[k], rs[k])
        if k % 97 == 0:
            p = state.covariance
            assert np.allclose(p, p.T, rtol=1e-9, atol=1e-12)
            worst = min(worst, float(np.linalg.eigvalsh(p).min()))
    assert worst >= -1e-9


def test_non_finite_measurement():
    with pytest.raises(NonFiniteMeasurement):
        kalman_step(initial_state(np.zeros(3)), (np.nan, 0.0, 0.0), 0.03, 100.0, 25.0)


# -- segment distance ----------------------------------------------------------

def test_segment_distance_examples():
    seg = (np.array([-1.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]))
    assert point_segment_distance((0.5, 0.0, 0.0), seg) == 0.0
    assert point_segment_distance((0.0, 0.0, 1.0), seg) == pytest.approx(1.0, abs=1e-15)
    assert point_segment_distance((2.0, 0.0, 1.0), seg) == pytest.approx(math.sqrt(2.0), abs=1e-15)


def test_degenerate_segment_is_point_distance():
    a = np.array([1.0, 2.0, 3.0])
    assert point_segment_distance((4.0, 6.0, 3.0), (a, a)) == pytest.approx(5.0)


@given(point, point, point)
def test_segment_distance_matches_brute_force(p, a, b):
    s = np.linspace(0.0, 1.0, 10_000)[:, None]
    samples = a + s * (b - a)
    brute = float(np.min(np.linalg.norm(samples - p, axis=1)))
    exact = point_segment_distance(p, (a, b))
    assert exact <= brute + 1e-12
    assert brute - exact <= 1e-3


@given(st.lists(point, min_size=1, max_size=20), point, point)
def test_vectorised_distance_matches_scalar(pts, a, b):
    arr = np.array(pts)
    out = points_segment_distance(arr, a, b)
    for i, p in enumerate(arr):
        assert out[i] == pytest.approx(point_segment_distance(p, (a, b)), abs=1e-12)
