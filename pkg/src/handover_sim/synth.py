"""Synthetic scenes: ideal silhouettes, hand poses and full scenario bundles.

Masks are rendered analytically (exact ray / frustum intersection per
pixel centre), independently of the circle-sampling reconstruction that
consumes them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geom import CameraProjection, as_point, look_at_camera, project
from .ingest import EstimateStream, GroundTruth, HandoverScenario, SilhouetteMask, TraceFrame
from .params import CLASSES, DensityTable, from_mapping


def render_solid_mask(
    cam: CameraProjection,
    center_xy,
    profile: Sequence[tuple[float, float]],
) -> SilhouetteMask:
    """Silhouette of a solid of revolution with a piecewise-linear profile.

    ``profile`` lists ``(z, radius)`` pairs with increasing ``z``; the solid
    is the union of the frusta between consecutive pairs, caps included.  A
    pixel is occupied when the ray through its centre meets the solid in
    front of the camera.
    """
    w, h = cam.image_width, cam.image_height
    cols, rows = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    pix = np.stack([cols.ravel(), rows.ravel(), np.ones(cols.size)], axis=0)
    d = np.linalg.solve(cam.matrix[:, :3], pix)  # (3, n), unit homogeneous depth
    c = cam.center
    x0, y0 = c[0] - center_xy[0], c[1] - center_xy[1]
    dx, dy, dz = d
    a_rho = dx * dx + dy * dy
    b_rho = 2.0 * (x0 * dx + y0 * dy)
    c_rho = x0 * x0 + y0 * y0

    hit = np.zeros(cols.size, dtype=bool)
    big = 1e9
    for (z0, r0), (z1, r1) in zip(profile[:-1], profile[1:]):
        if z1 <= z0:
            raise ValueError("profile heights must increase")
        slope = (r1 - r0) / (z1 - z0)
        alpha = r0 + slope * (c[2] - z0)
        beta = slope * dz
        qa = a_rho - beta * beta
        qb = b_rho - 2.0 * alpha * beta
        qc = c_rho - alpha * alpha

        with np.errstate(divide="ignore", invalid="ignore"):
            s0 = np.where(dz != 0, (z0 - c[2]) / dz, np.where((c[2] >= z0) & (c[2] <= z1), 0.0, np.nan))
            s1 = np.where(dz != 0, (z1 - c[2]) / dz, np.where((c[2] >= z0) & (c[2] <= z1), big, np.nan))
        lo = np.fmax(np.minimum(s0, s1), 0.0)
        hi = np.maximum(s0, s1)
        ok = np.isfinite(lo) & np.isfinite(hi) & (hi >= lo)

        def f(s):
            return (qa * s + qb) * s + qc

        fmin = np.minimum(f(lo), f(hi))
        with np.errstate(divide="ignore", invalid="ignore"):
            sv = -qb / (2.0 * qa)
        inner = (qa > 0) & (sv > lo) & (sv < hi)
        fmin = np.where(inner, np.minimum(fmin, f(np.where(inner, sv, 0.0))), fmin)
        hit |= ok & (fmin <= 0.0)
    return SilhouetteMask(w, h, hit.reshape(h, w))


def orthogonal_cameras(
    target=(0.0, 0.0, 50.0),
    distance: float = 3000.0,
    focal: float = 3600.0,
    width: int = 320,
    height: int = 320,
) -> tuple[CameraProjection, CameraProjection]:
    """Two level cameras looking at ``target`` along +y and -x."""
    t = as_point(target)
    cam_a = look_at_camera(t + np.array([0.0, -distance, 0.0]), t, focal, width, height)
    cam_b = look_at_camera(t + np.array([distance, 0.0, 0.0]), t, focal, width, height)
    return cam_a, cam_b


def scene_cameras() -> tuple[CameraProjection, CameraProjection]:
    """A stereo pair beside the robot, viewing the handover area."""
    target = np.array([0.0, 550.0, 200.0])
    cam_a = look_at_camera((-700.0, 250.0, 450.0), target, 900.0, 640, 480)
    cam_b = look_at_camera((700.0, 250.0, 450.0), target, 900.0, 640, 480)
    return cam_a, cam_b


# ---------------------------------------------------------------------------
# Hands
# ---------------------------------------------------------------------------

def canonical_hand() -> np.ndarray:
    """Flat right hand in its own frame: wrist at the origin, fingers along +y,
    palm normal +z, thumb toward +x."""
    kp = np.zeros((21, 3))
    bases = {1: (25.0, 25.0), 5: (30.0, 80.0), 9: (0.0, 85.0), 13: (-18.0, 80.0), 17: (-30.0, 72.0)}
    lengths = {1: 25.0, 5: 30.0, 9: 32.0, 13: 30.0, 17: 24.0}
    for base, (x, y) in bases.items():
        seg = lengths[base]
        dirn = np.array([0.35, 1.0, 0.0]) if base == 1 else np.array([0.0, 1.0, 0.0])
        dirn /= np.linalg.norm(dirn)
        for j in range(4):
            kp[base + j] = np.array([x, y, 0.0]) + dirn * seg * j
    return kp


def rotation_from_axes(direction, up) -> np.ndarray:
    d = as_point(direction)
    d = d / np.linalg.norm(d)
    u = as_point(up)
    u = u - (u @ d) * d
    u /= np.linalg.norm(u)
    right = np.cross(d, u)
    return np.column_stack([right, d, u])


def place_hand(position, rotation) -> np.ndarray:
    """Canonical hand rotated by ``rotation`` with the wrist at ``position``."""
    return canonical_hand() @ np.asarray(rotation).T + as_point(position)


def base_grip_hand(container_xy, bottom_z: float, radius: float) -> np.ndarray:
    """Hand cupping the container from below, palm up, fingers toward the robot."""
    cx, cy = container_xy
    rot = rotation_from_axes((0.0, -1.0, 0.0), (0.0, 0.0, 1.0))
    kp = place_hand((0.0, 0.0, 0.0), rot)
    centre = kp[[0, 5, 9, 13, 17]].mean(axis=0)
    return kp - centre + np.array([cx, cy, bottom_z - 15.0])


def side_grip_hand(container_xy, z_center: float, radius: float, spread: float = 0.0) -> np.ndarray:
    """Hand wrapping the container side at height ``z_center``.

    Fingers run horizontally around the front; a positive ``spread`` fans the
    fingers vertically so the occupied band widens to about ``2 * spread``.
    """
    cx, cy = container_xy
    kp = np.zeros((21, 3))
    kp[0] = (cx + radius + 45.0, cy + 25.0, z_center)
    fingers = [(1, -0.6), (5, -0.3), (9, 0.0), (13, 0.3), (17, 0.6)]
    for base, frac in fingers:
        z = z_center + frac * 2.0 * spread if spread else z_center + frac * 30.0
        angles = np.linspace(0.25, 1.15, 4) if base != 1 else np.linspace(-0.2, -0.9, 4)
        for j, ang in enumerate(angles):
            kp[base + j] = (cx + (radius + 6.0) * math.cos(ang), cy - (radius + 6.0) * math.sin(ang) + 10.0, z)
    kp[1:5, 1] = cy + 20.0 + np.arange(4) * 2.0
    return kp


# ---------------------------------------------------------------------------
# Scenario assembly
# ---------------------------------------------------------------------------

def one_hot_stream(label_per_frame: Sequence[str], confidence: float = 0.9) -> EstimateStream:
    n = len(label_per_frame)
    probs = np.full((n, 2, len(CLASSES)), (1.0 - confidence) / (len(CLASSES) - 1))
    for k, label in enumerate(label_per_frame):
        probs[k, :, CLASSES.index(label)] = confidence
    return EstimateStream(probs, np.ones(n, dtype=bool))


@dataclass
class SceneSpec:
    """Knobs for a scripted handover scene."""

    scenario_id: str = "scene"
    container: str = "C1"
    profile: tuple = ((0.0, 30.0), (100.0, 30.0))  # (z, r) relative to the base
    container_mass: float = 20.0
    content: str = "none"
    level: float = 0.0
    capacity: Optional[float] = None  # defaults to the profile volume
    estimate: str = "empty"
    hand: str = "base"  # base | side | cover | none
    hand_height: float = 0.5  # fraction of the height, for side grips
    n_frames: int = 60
    approach_frames: int = 0  # frames of motion toward the robot at the start
    start_offset: tuple = (0.0, 150.0, 0.0)
    rest_base: tuple = (0.0, 550.0, 150.0)
    delivery_target: tuple = (-350.0, 300.0, 0.0)
    pixel_noise: float = 0.0
    seed: int = 0
    params: Optional[dict] = None
    drop_view_frames: tuple = ()  # frames missing the view-1 centroid


def profile_volume(profile) -> float:
    """Exact frustum-sum volume of a piecewise-linear profile (mL)."""
    vol = 0.0
    for (z0, r0), (z1, r1) in zip(profile[:-1], profile[1:]):
        vol += math.pi * (z1 - z0) * (r0 * r0 + r0 * r1 + r1 * r1) / 3.0
    return vol / 1000.0


def build_scene(spec: SceneSpec, cameras=None) -> HandoverScenario:
    cams = cameras or scene_cameras()
    rng = np.random.default_rng(spec.seed)
    height = spec.profile[-1][0] - spec.profile[0][0]
    radius = max(r for _, r in spec.profile)
    rest = as_point(spec.rest_base)
    start = rest + as_point(spec.start_offset)
    dt = 1.0 / 30.0

    frames = []
    base_positions = []
    for k in range(spec.n_frames):
        if spec.approach_frames and k < spec.approach_frames:
            s = k / spec.approach_frames
            s = 0.5 - 0.5 * math.cos(math.pi * s)
            base = start + (rest - start) * s
        elif spec.approach_frames:
            base = rest
        else:
            base = rest
        base_positions.append(base)
        centroid = base + np.array([0.0, 0.0, height / 2.0])
        px = []
        for view, cam in enumerate(cams):
            if view == 1 and k in spec.drop_view_frames:
                px.append(None)
                continue
            u, v = project(cam, centroid)
            if spec.pixel_noise:
                u += rng.normal(0.0, spec.pixel_noise)
                v += rng.normal(0.0, spec.pixel_noise)
            px.append((u, v))
        xy = (base[0], base[1])
        right = left = None
        if spec.hand == "base":
            right = base_grip_hand(xy, base[2], radius)
        elif spec.hand == "side":
            right = side_grip_hand(xy, base[2] + spec.hand_height * height, radius)
        elif spec.hand == "cover":
            right = side_grip_hand(xy, base[2] + height / 2.0, radius, spread=height / 2.0 + 5.0)
            left = side_grip_hand(xy, base[2] + height / 2.0, radius, spread=height / 2.0 + 5.0)
            left = left * np.array([-1.0, 1.0, 1.0]) + np.array([2.0 * base[0], 0.0, 0.0])
        frames.append(TraceFrame(k, k * dt, left, right, (px[0], px[1])))

    shape_base = base_positions[-1]
    profile = [(shape_base[2] + z, r) for z, r in spec.profile]
    masks = tuple(render_solid_mask(cam, shape_base[:2], profile) for cam in cams)

    capacity = spec.capacity if spec.capacity is not None else round(profile_volume(spec.profile), 3)
    truth = GroundTruth(spec.container_mass, spec.content, spec.level, capacity, False)
    overrides = dict(spec.params or {})
    params = from_mapping(overrides)
    return HandoverScenario(
        frames=frames,
        cameras=cams,
        shape_masks=masks,
        estimates=one_hot_stream([spec.estimate] * spec.n_frames),
        truth=truth,
        params=params,
        delivery_target=as_point(spec.delivery_target),
        delivery_radius=params.eta,
        densities=DensityTable(),
        scenario_id=spec.scenario_id,
        container=spec.container,
        shape_frame=spec.n_frames - 1,
        overrides=overrides,
    )


def fixture_specs() -> list[SceneSpec]:
    """The shipped fixture set: two filling configurations x two containers."""
    cup = ((0.0, 30.0), (100.0, 30.0))
    glass = ((0.0, 25.0), (60.0, 30.0), (120.0, 38.0))
    return [
        SceneSpec("c1_empty", "C1", cup, 20.0, "none", 0.0, estimate="empty", hand="base", approach_frames=30),
        SceneSpec("c2_empty", "C2", glass, 60.0, "none", 0.0, estimate="empty", hand="side", hand_height=0.45, approach_frames=30),
        SceneSpec("c1_w5", "C1", cup, 20.0, "water", 0.5, estimate="W5", hand="base", approach_frames=30),
        SceneSpec("c2_w5", "C2", glass, 60.0, "water", 0.5, estimate="empty", hand="side", hand_height=0.45, approach_frames=30),
    ]


def demo_specs() -> list[SceneSpec]:
    """Single-run scenes: clean, mid-height grip, fully covered, underestimated mass."""
    cup = ((0.0, 30.0), (100.0, 30.0))
    tall = ((0.0, 30.0), (160.0, 30.0))
    return [
        SceneSpec("cylinder_clean", "C1", cup, 20.0, "none", 0.0, estimate="empty", hand="base", approach_frames=30),
        SceneSpec("mid_occlusion", "C3", tall, 50.0, "none", 0.0, estimate="empty", hand="side", hand_height=0.4,
                  approach_frames=30),
        SceneSpec("full_occlusion", "C1", cup, 20.0, "none", 0.0, estimate="empty", hand="cover", approach_frames=30),
        # 100 g container + half of 200 mL water, estimated as empty: half the true mass.
        SceneSpec("underestimated", "C1", cup, 100.0, "water", 0.5, capacity=200.0, estimate="empty", hand="base",
                  approach_frames=30),
    ]


def random_scene(rng: np.random.Generator) -> tuple[object, np.ndarray, np.ndarray, float]:
    """Random (shape, keypoints, centroid, width) for the safe-region fuzzer."""
    from .perception import ContainerShape

    n = int(rng.integers(2, 12))
    bottom = float(rng.uniform(-50.0, 200.0))
    z = bottom + np.cumsum(np.concatenate([[0.0], rng.uniform(5.0, 30.0, n - 1)]))
    radius = rng.uniform(5.0, 50.0, n)
    shape = ContainerShape(z, radius)
    t = np.array([rng.uniform(-100, 100), rng.uniform(300, 700), float(z.mean())])
    width = 2.0 * float(radius.max())
    m = int(rng.integers(0, 43))
    kp = np.column_stack([
        t[0] + rng.uniform(-1.5, 1.5, m) * width,
        t[1] + rng.uniform(-1.5, 1.5, m) * width,
        rng.uniform(z[0] - 30.0, z[-1] + 30.0, m),
    ])
    # Snap some values onto integers so grid points hit interval ends exactly.
    if m and rng.random() < 0.3:
        kp[:, 2] = np.round(kp[:, 2])
    return shape, kp, t, width


__all__ = [
    "SceneSpec",
    "base_grip_hand",
    "build_scene",
    "canonical_hand",
    "demo_specs",
    "fixture_specs",
    "one_hot_stream",
    "orthogonal_cameras",
    "place_hand",
    "profile_volume",
    "random_scene",
    "render_solid_mask",
    "rotation_from_axes",
    "scene_cameras",
    "side_grip_hand",
]

