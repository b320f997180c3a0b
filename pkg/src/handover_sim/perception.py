"""Physical estimates from a replayed trace.

Hand rigid frames, the filtered container trajectory, the container shape
recovered from two silhouettes (stacked circumferences), shape-derived
dimensions and volume, content-class fusion and the resulting object mass.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import BehindCamera, DegenerateShape, EmptyIntersection, NoValidFrames, ParallelRays, ZeroPosterior
from .geom import (
    CameraProjection,
    KalmanState,
    as_point,
    initial_state,
    kalman_predict,
    kalman_update,
    project_many,
    triangulate,
)
from .ingest import EstimateStream, HandoverScenario, SilhouetteMask, TraceFrame
from .params import CLASSES, DensityTable, ParameterSet, class_filling

logger = logging.getLogger(__name__)

WRIST, INDEX_MCP, MIDDLE_MCP, PINKY_MCP = 0, 5, 9, 17
MIN_AXIS_NORM = 1.0  # mm


# ---------------------------------------------------------------------------
# Hand frames
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HandFrame:
    keypoints: np.ndarray
    direction: np.ndarray
    up: np.ndarray
    right: np.ndarray
    valid: bool

    @property
    def rotation(self) -> np.ndarray:
        """Columns (right, direction, up); identity for the canonical hand."""
        return np.column_stack([self.right, self.direction, self.up])

    @property
    def wrist(self) -> np.ndarray:
        return self.keypoints[WRIST]


def hand_frame(keypoints) -> HandFrame:
    """Rigid frame of a 21-keypoint hand.

    ``direction`` runs wrist -> middle-finger MCP, ``up`` is the normalised
    (index MCP - pinky MCP) x direction, and ``right = direction x up``.
    Either defining vector shorter than 1 mm gives ``valid=False``.
    """
    kp = np.asarray(keypoints, dtype=np.float64).reshape(21, 3)
    zeros = np.zeros(3)
    if not np.all(np.isfinite(kp)):
        return HandFrame(kp, zeros, zeros, zeros, False)
    direction = kp[MIDDLE_MCP] - kp[WRIST]
    lateral = kp[INDEX_MCP] - kp[PINKY_MCP]
    dn = np.linalg.norm(direction)
    if dn < MIN_AXIS_NORM or np.linalg.norm(lateral) < MIN_AXIS_NORM:
        return HandFrame(kp, zeros, zeros, zeros, False)
    direction = direction / dn
    up = np.cross(lateral, direction)
    un = np.linalg.norm(up)
    if un < 1e-9 * np.linalg.norm(lateral):
        # lateral vector parallel to the pointing direction
        return HandFrame(kp, zeros, zeros, zeros, False)
    up = up / un
    right = np.cross(direction, up)
    return HandFrame(kp, direction, up, right, True)


def frame_hands(frame: TraceFrame) -> tuple[Optional[HandFrame], Optional[HandFrame]]:
    left = hand_frame(frame.left_hand) if frame.left_hand is not None else None
    right = hand_frame(frame.right_hand) if frame.right_hand is not None else None
    return left, right


def holding_hand(left: Optional[HandFrame], right: Optional[HandFrame], centroid) -> Optional[HandFrame]:
    """Hand whose wrist is closest to the container; ties go to the right hand."""
    c = as_point(centroid)
    best: Optional[HandFrame] = None
    best_d = math.inf
    for hand in (right, left):
        if hand is None:
            continue
        d = float(np.linalg.norm(hand.wrist - c))
        if d < best_d:
            best, best_d = hand, d
    return best


# ---------------------------------------------------------------------------
# Container trajectory
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContainerTrack:
    times: np.ndarray  # (n,)
    positions: np.ndarray  # (n, 3) filtered centroid
    rotations: np.ndarray  # (n, 3, 3)
    valid: np.ndarray  # (n,) bool
    n_trace: int  # steps that come from trace frames; the rest is the hold
    measured: np.ndarray = field(default=None)  # (n_trace,) bool, frame had a centroid
    std: np.ndarray = field(default=None)  # (n, 3) per-axis position std

    def __len__(self) -> int:
        return int(self.times.shape[0])


def centroid_measurement(frame: TraceFrame, cameras: Sequence[CameraProjection]) -> Optional[np.ndarray]:
    px0, px1 = frame.centroid_px
    if px0 is None or px1 is None:
        return None
    try:
        return triangulate(cameras[0], px0, cameras[1], px1)
    except (ParallelRays, BehindCamera) as exc:
        logger.debug("frame %d: centroid not triangulated (%s)", frame.frame_index, exc)
        return None


def track_container(
    frames: Sequence[TraceFrame],
    cameras: Sequence[CameraProjection],
    q: float = 100.0,
    r: float = 25.0,
    hold_time: float = 2.0,
    dt: float = 1.0 / 30.0,
) -> ContainerTrack:
    """Filter the triangulated container centroid over the trace.

    Frames lacking either view's centroid run the predict step only.  The
    orientation follows the holding hand and is left unchanged when that hand
    is absent or degenerate.  ``round(hold_time / dt)`` copies of the last
    pose are appended.

    Raises:
        NoValidFrames: no frame ever yields a centroid.
    """
    n = len(frames)
    positions = np.full((n, 3), np.nan)
    stds = np.full((n, 3), np.nan)
    rotations = np.repeat(np.eye(3)[None], n, axis=0)
    valid = np.zeros(n, dtype=bool)
    measured = np.zeros(n, dtype=bool)
    state: Optional[KalmanState] = None
    rot = np.eye(3)
    prev_t = None
    for k, frame in enumerate(frames):
        z = centroid_measurement(frame, cameras)
        measured[k] = z is not None
        if state is None:
            if z is not None:
                state = initial_state(z, position_var=max(r, 1e-6))
        else:
            state = kalman_predict(state, frame.timestamp - prev_t, q)
            if z is not None:
                state = kalman_update(state, z, r)
        prev_t = frame.timestamp
        if state is None:
            continue
        positions[k] = state.position
        stds[k] = np.sqrt(np.clip(np.diag(state.covariance)[:3], 0.0, None))
        valid[k] = True
        left, right = frame_hands(frame)
        hand = holding_hand(left, right, state.position)
        if hand is not None and hand.valid:
            rot = hand.rotation
        rotations[k] = rot

    if not valid.any():
        raise NoValidFrames("no frame has a centroid in both views")
    first = int(np.argmax(valid))
    positions[:first] = positions[first]
    stds[:first] = stds[first]

    hold = int(round(hold_time / dt))
    times = np.array([f.timestamp for f in frames], dtype=np.float64)
    if hold:
        times = np.concatenate([times, times[-1] + dt * np.arange(1, hold + 1)])
        positions = np.vstack([positions, np.repeat(positions[-1:], hold, axis=0)])
        stds = np.vstack([stds, np.repeat(stds[-1:], hold, axis=0)])
        rotations = np.concatenate([rotations, np.repeat(rotations[-1:], hold, axis=0)])
        valid = np.concatenate([valid, np.repeat(valid[-1:], hold)])
    return ContainerTrack(times, positions, rotations, valid, n, measured, stds)


# ---------------------------------------------------------------------------
# Shape
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContainerShape:
    """Rotationally symmetric container as stacked circumferences."""

    z: np.ndarray
    radius: np.ndarray
    center_xy: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        z = np.asarray(self.z, dtype=np.float64).reshape(-1)
        rad = np.asarray(self.radius, dtype=np.float64).reshape(-1)
        if z.shape != rad.shape:
            raise ValueError("z and radius must have the same length")
        if z.size < 2:
            raise ValueError("a shape needs at least two slices")
        if np.any(np.diff(z) <= 0):
            raise ValueError("slice heights must be strictly increasing")
        if np.any(rad < 0) or not np.all(np.isfinite(rad)):
            raise ValueError("radii must be finite and non-negative")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "radius", rad)

    @property
    def bottom(self) -> float:
        return float(self.z[0])

    @property
    def top(self) -> float:
        return float(self.z[-1])

    @property
    def height(self) -> float:
        return self.top - self.bottom

    @property
    def max_radius(self) -> float:
        return float(self.radius.max())

    def radius_at(self, z: float) -> float:
        """Linear interpolation between adjacent slices; zero outside."""
        if z < self.bottom or z > self.top:
            return 0.0
        return float(np.interp(z, self.z, self.radius))

    def translated(self, dz: float, center_xy=None) -> "ContainerShape":
        xy = self.center_xy if center_xy is None else (float(center_xy[0]), float(center_xy[1]))
        return ContainerShape(self.z + dz, self.radius.copy(), xy)

    def slices(self) -> list[tuple[float, float]]:
        return [(float(a), float(b)) for a, b in zip(self.z, self.radius)]


def _pixels_per_mm(cam: CameraProjection, point: np.ndarray) -> float:
    """Image-plane scale at ``point`` for a horizontal displacement across the view."""
    view = point - cam.center
    across = np.cross(view, np.array([0.0, 0.0, 1.0]))
    norm = np.linalg.norm(across)
    if norm == 0.0:
        across = np.array([1.0, 0.0, 0.0])
    else:
        across /= norm
    u0, v0, _ = project_many(cam, point[None])
    u1, v1, _ = project_many(cam, (point + across)[None])
    return float(math.hypot(u1[0] - u0[0], v1[0] - v0[0]))


def _inside_both(masks, cameras, pts: np.ndarray) -> np.ndarray:
    ok = np.ones(pts.shape[0], dtype=bool)
    for mask, cam in zip(masks, cameras):
        u, v, w = project_many(cam, pts)
        ok &= (w > 0) & mask.contains(u, v)
    return ok


def _axis_limit(masks, cameras, cx, cy, z0, direction, span, step) -> float:
    """Last height along the vertical axis (from z0) still inside both masks."""
    def inside(z):
        return bool(_inside_both(masks, cameras, np.array([[cx, cy, z]]))[0])

    z_in = z0
    z = z0
    while abs(z - z0) < span:
        z_next = z + direction * step
        if not inside(z_next):
            lo, hi = z, z_next
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                if inside(mid):
                    lo = mid
                else:
                    hi = mid
            return lo
        z = z_next
        z_in = z
    return z_in


def lode_reconstruct(
    masks: Sequence[SilhouetteMask],
    cameras: Sequence[CameraProjection],
    centroid,
    n_samples: int = 36,
    dz: float = 2.0,
    dr: float = 1.0,
    r_min: float = 1.0,
    refine_steps: int = 10,
) -> ContainerShape:
    """Recover the container as stacked circles consistent with both silhouettes.

    Heights form a uniform ladder of spacing ``dz`` over the stretch of the
    vertical axis through ``centroid`` that projects inside both masks.  At
    each height the radius starts at half the widest mask extent (back-
    projected at the centroid) and shrinks by ``dr`` until all ``n_samples``
    circle points project inside both masks; the last step is then bisected
    ``refine_steps`` times (0 keeps the plain ladder).  Radii below ``r_min`` are
    trimmed at the ends and zeroed in the interior.

    Raises:
        EmptyIntersection: no two slices survive (including empty masks).
    """
    if any(m.count == 0 for m in masks):
        raise EmptyIntersection("a silhouette mask is empty")
    c = as_point(centroid)
    cx, cy, cz = c

    if not _inside_both(masks, cameras, c[None])[0]:
        raise EmptyIntersection("the centroid axis does not project inside both masks")

    widths, heights = [], []
    for mask, cam in zip(masks, cameras):
        scale = _pixels_per_mm(cam, c)
        rows, cols = np.nonzero(mask.bits)
        widths.append((cols.max() - cols.min() + 1) / scale)
        heights.append((rows.max() - rows.min() + 1) / scale)
    r_init = max(widths) / 2.0
    span = 2.0 * max(heights) + dz

    step = min(dz, 0.5) / 2.0
    z_hi = _axis_limit(masks, cameras, cx, cy, cz, +1.0, span, step)
    z_lo = _axis_limit(masks, cameras, cx, cy, cz, -1.0, span, step)
    n_cells = int(math.floor((z_hi - z_lo) / dz + 1e-9))
    if n_cells < 2:
        raise EmptyIntersection("the silhouettes span less than two slices")
    pad = (z_hi - z_lo - n_cells * dz) / 2.0
    zs = z_lo + pad + dz / 2.0 + dz * np.arange(n_cells)

    theta = 2.0 * math.pi * np.arange(n_samples) / n_samples
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    candidates = r_init - dr * np.arange(int(math.floor(r_init / dr)) + 1)
    candidates = candidates[candidates > 0]

    radii = np.zeros(n_cells)
    for i, z in enumerate(zs):
        # Every candidate circle at once: (n_candidates * n_samples, 3).
        px = cx + np.outer(candidates, cos_t)
        py = cy + np.outer(candidates, sin_t)
        pts = np.stack([px.ravel(), py.ravel(), np.full(px.size, z)], axis=1)
        ok = _inside_both(masks, cameras, pts).reshape(candidates.size, n_samples).all(axis=1)
        hits = np.nonzero(ok)[0]
        if not hits.size:
            continue
        r_ok = candidates[hits[0]]
        if hits[0] > 0:
            # The coarse ladder undershoots by up to dr; bisect the last step.
            r_bad = candidates[hits[0] - 1]
            for _ in range(refine_steps):
                mid = 0.5 * (r_ok + r_bad)
                circle = np.stack([cx + mid * cos_t, cy + mid * sin_t, np.full(n_samples, z)], axis=1)
                if _inside_both(masks, cameras, circle).all():
                    r_ok = mid
                else:
                    r_bad = mid
        radii[i] = r_ok

    radii[radii < r_min] = 0.0
    keep = np.nonzero(radii > 0)[0]
    if keep.size < 2:
        raise EmptyIntersection("fewer than two slices survive the silhouette constraint")
    lo, hi = keep[0], keep[-1] + 1
    return ContainerShape(zs[lo:hi], radii[lo:hi], (float(cx), float(cy)))


@dataclass(frozen=True)
class ShapeMetrics:
    width: float  # mm
    height: float  # mm
    depth: float  # mm
    volume: float  # mL


def slice_weights(z: np.ndarray) -> np.ndarray:
    """Thickness attributed to each slice: half the gap to each neighbour."""
    gaps = np.diff(z)
    w = np.zeros_like(z)
    w[:-1] += gaps / 2.0
    w[1:] += gaps / 2.0
    return w


def shape_metrics(shape: ContainerShape) -> ShapeMetrics:
    """Width, height, depth (mm) and volume (mL) of a sliced shape.

    The volume is the sum of disc volumes pi r^2 times each slice's
    thickness, with end slices contributing half a gap.
    """
    width = 2.0 * shape.max_radius
    volume_mm3 = float(np.sum(math.pi * shape.radius**2 * slice_weights(shape.z)))
    return ShapeMetrics(width, shape.height, width, volume_mm3 / 1000.0)


# ---------------------------------------------------------------------------
# Mesh
# ---------------------------------------------------------------------------

def mesh_arrays(shape: ContainerShape, n: int = 36) -> tuple[np.ndarray, np.ndarray]:
    """Closed triangle mesh of the stacked rings (vertices, 0-based faces).

    Faces are wound counter-clockwise seen from outside.

    Raises:
        DegenerateShape: fewer than two slices with a positive radius.
    """
    if int(np.count_nonzero(shape.radius > 0)) < 2:
        raise DegenerateShape("need at least two slices with a positive radius")
    if n < 3:
        raise ValueError("need at least three points per ring")
    cx, cy = shape.center_xy
    theta = 2.0 * math.pi * np.arange(n) / n
    rings = []
    for z, r in zip(shape.z, shape.radius):
        rings.append(np.stack([cx + r * np.cos(theta), cy + r * np.sin(theta), np.full(n, z)], axis=1))
    verts = np.vstack(rings)
    faces = []
    m = len(rings)
    for i in range(m - 1):
        lo, hi = i * n, (i + 1) * n
        for j in range(n):
            a, b = lo + j, lo + (j + 1) % n
            c, d = hi + (j + 1) % n, hi + j
            faces.append((a, b, c))
            faces.append((a, c, d))
    top = (m - 1) * n
    for j in range(1, n - 1):
        faces.append((0, j + 1, j))
        faces.append((top, top + j, top + j + 1))
    return verts, np.asarray(faces, dtype=np.int64)


def mesh_signed_volume(verts: np.ndarray, faces: np.ndarray) -> float:
    tri = verts[faces]
    return float(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)


def mesh_export(shape: ContainerShape, path=None, n: int = 36) -> str:
    """Wavefront OBJ text for the container; also written to ``path`` if given."""
    verts, faces = mesh_arrays(shape, n)
    lines = ["o container"]
    lines += [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in verts]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces]
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def parse_obj(text: str) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(p) for p in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return np.asarray(verts), np.asarray(faces, dtype=np.int64)


# ---------------------------------------------------------------------------
# Content fusion and mass
# ---------------------------------------------------------------------------

IDX = {name: i for i, name in enumerate(CLASSES)}


@dataclass(frozen=True)
class ContentBelief:
    posterior: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.posterior, dtype=np.float64).reshape(len(CLASSES))
        object.__setattr__(self, "posterior", p)

    @property
    def map_class(self) -> str:
        return CLASSES[int(np.argmax(self.posterior))]

    def as_dict(self) -> dict[str, float]:
        return {name: float(p) for name, p in zip(CLASSES, self.posterior)}


def initial_belief() -> ContentBelief:
    """Equal mass on ``empty`` and ``unknown`` before the first frame."""
    p = np.zeros(len(CLASSES))
    p[IDX["empty"]] = 0.5
    p[IDX["unknown"]] = 0.5
    return ContentBelief(p)


def default_transition() -> np.ndarray:
    """Row-stochastic transition matrix between content statuses.

    Rows are the previous status.  Fillings only move between related
    statuses: empty to a half level, half to full of the same content, and
    anything filled toward unknown.
    """
    t = np.zeros((len(CLASSES), len(CLASSES)))
    e, u = IDX["empty"], IDX["unknown"]
    t[e, e] = 0.8
    for half in ("P5", "R5", "W5"):
        t[e, IDX[half]] = 0.2 / 3.0
    for kind in "PRW":
        half, full = IDX[f"{kind}5"], IDX[f"{kind}9"]
        t[half, half] = 0.8
        t[half, full] = 0.15
        t[half, u] = 0.05
        t[full, full] = 0.8
        t[full, half] = 0.15
        t[full, u] = 0.05
    t[u, u] = 0.9
    t[u, e] = 0.1
    return t


def fuse_content_step(
    prior: ContentBelief,
    view_a,
    view_b,
    transition: np.ndarray,
    strict: bool = False,
) -> ContentBelief:
    """One fusion step: both views times the status predicted from ``prior``.

    When the product vanishes, ``strict`` raises :class:`ZeroPosterior`;
    otherwise the belief falls back to uniform over the classes the
    transition can still reach.
    """
    predicted = np.asarray(transition, dtype=np.float64).T @ prior.posterior
    post = np.asarray(view_a, dtype=np.float64) * np.asarray(view_b, dtype=np.float64) * predicted
    total = float(post.sum())
    if not (total > 0.0 and math.isfinite(total)):
        if strict:
            raise ZeroPosterior("views and predicted status have no class in common")
        reach = predicted > 0
        if not reach.any():
            reach[:] = True
        post = reach / reach.sum()
        logger.warning("content fusion posterior vanished; falling back to uniform over %d classes", int(reach.sum()))
        return ContentBelief(post.astype(np.float64))
    return ContentBelief(post / total)


def fuse_stream(
    estimates: EstimateStream,
    transition: np.ndarray,
    prior: Optional[ContentBelief] = None,
) -> np.ndarray:
    """Posterior after each frame, ``(n_frames, 8)``, as a left fold."""
    belief = prior or initial_belief()
    out = np.zeros((len(estimates), len(CLASSES)))
    for k in range(len(estimates)):
        belief = fuse_content_step(belief, estimates.probs[k, 0], estimates.probs[k, 1], transition)
        out[k] = belief.posterior
    return out


def estimate_mass(belief: ContentBelief, volume: float, densities: DensityTable, container_mass: float) -> float:
    """Container mass plus level x volume x density of the MAP class (g)."""
    content, level = class_filling(belief.map_class)
    if level == 0.0:
        return float(container_mass)
    return float(container_mass + level * volume * densities.density(content))


# ---------------------------------------------------------------------------
# Whole-scenario perception
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Perception:
    track: ContainerTrack
    shape: ContainerShape  # heights relative to the filtered centroid
    shape_world: ContainerShape  # as reconstructed at the selected frame
    metrics: ShapeMetrics
    beliefs: np.ndarray  # (n_frames, 8)
    hand_valid: np.ndarray  # (n_frames,) bool, any valid hand frame

    def belief_at(self, step: int) -> ContentBelief:
        k = min(step, self.beliefs.shape[0] - 1)
        return ContentBelief(self.beliefs[k])

    def shape_at(self, step: int) -> ContainerShape:
        pos = self.track.positions[min(step, len(self.track) - 1)]
        return self.shape.translated(float(pos[2]), (pos[0], pos[1]))


def perceive(scenario: HandoverScenario, transition: Optional[np.ndarray] = None) -> Perception:
    p: ParameterSet = scenario.params
    track = track_container(scenario.frames, scenario.cameras, p.kalman_q, p.kalman_r, p.hold_time, p.dt)

    k = [f.frame_index for f in scenario.frames].index(scenario.shape_frame)
    raw = centroid_measurement(scenario.frames[k], scenario.cameras)
    if raw is None:
        pix = [m.centroid() for m in scenario.shape_masks]
        raw = triangulate(scenario.cameras[0], pix[0], scenario.cameras[1], pix[1])
    shape_world = lode_reconstruct(
        scenario.shape_masks, scenario.cameras, raw,
        n_samples=p.lode_samples, dz=p.lode_dz, dr=p.lode_dr, r_min=p.lode_r_min,
    )
    shape = shape_world.translated(-float(raw[2]), (0.0, 0.0))
    metrics = shape_metrics(shape_world)

    t = transition if transition is not None else scenario.transition
    if t is None:
        t = default_transition()
    beliefs = fuse_stream(scenario.estimates, t)

    hand_valid = np.zeros(len(scenario.frames), dtype=bool)
    for i, frame in enumerate(scenario.frames):
        hand_valid[i] = any(h is not None and h.valid for h in frame_hands(frame))
    return Perception(track, shape, shape_world, metrics, beliefs, hand_valid)
