"""Hand-occlusion-aware safe grasp region, grasp target and grip force.

Heights are world z in millimetres.  Intervals are closed ``(lo, hi)``
tuples with ``lo <= hi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import TooShort
from .params import ParameterSet

Interval = tuple[float, float]


@dataclass(frozen=True)
class SafeRegion:
    graspable: Interval
    unsafe: np.ndarray  # occluded heights, sorted
    safe: list[Interval]  # disjoint, ascending
    chosen: Optional[Interval]

    @property
    def feasible(self) -> bool:
        return self.chosen is not None


@dataclass(frozen=True)
class GraspPlan:
    target: Optional[np.ndarray]
    gripper_width: float
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))
    feasible: bool = False
    interval: Optional[Interval] = None


@dataclass(frozen=True)
class GripModel:
    a: float = 25.35  # N per effort unit
    b: float = 0.045  # N
    mu: float = 1.0
    a_max: float = 27.9  # m/s^2
    g: float = 9.81  # m/s^2
    effort_min: float = 0.01
    effort_max: float = 1.25

    def __post_init__(self) -> None:
        if not self.a > 0:
            raise ValueError("effort slope must be positive")
        if not self.mu > 0:
            raise ValueError("friction coefficient must be positive")

    @classmethod
    def from_params(cls, p: ParameterSet) -> "GripModel":
        return cls(p.effort_a, p.effort_b, p.mu, p.a_max, p.gravity, p.effort_min, p.effort_max)


# ---------------------------------------------------------------------------
# Safe region
# ---------------------------------------------------------------------------

def graspable_range(shape, w_g: float) -> Interval:
    """Heights where the whole gripper finger fits on the container.

    Raises:
        TooShort: the container is not taller than the finger.
    """
    lo, hi = float(shape.z[0]), float(shape.z[-1])
    if hi - lo <= w_g:
        raise TooShort(f"container height {hi - lo:.3f} mm does not exceed finger width {w_g} mm")
    return lo + w_g / 2.0, hi - w_g / 2.0


def unsafe_heights(hands, t, w: float) -> np.ndarray:
    """Heights of keypoints inside the container's frontal occupancy band.

    A keypoint counts when ``h_y > t_y - w/2`` and ``|h_x - t_x| < w``.
    ``hands`` is any iterable of ``(k, 3)`` keypoint arrays (``None`` skipped).
    """
    pts = [np.asarray(h, dtype=np.float64).reshape(-1, 3) for h in hands if h is not None]
    if not pts:
        return np.zeros(0)
    kp = np.vstack(pts)
    tx, ty = float(t[0]), float(t[1])
    sel = (kp[:, 1] > ty - w / 2.0) & (np.abs(kp[:, 0] - tx) < w)
    return np.sort(kp[sel, 2])


def safe_region(graspable: Interval, unsafe: Sequence[float], r: float, prefer: Optional[str] = None) -> SafeRegion:
    """Graspable heights at least ``r`` below the lowest or above the highest
    occluded height.

    The longest interval is chosen; equal lengths go to the higher one.
    ``prefer`` ("lower"/"upper") restricts the choice to that side when it
    exists, which is how a locked region survives a larger alternative.
    """
    if r < 0:
        raise ValueError("margin r must be non-negative")
    lo, hi = graspable
    unsafe = np.sort(np.asarray(unsafe, dtype=np.float64).reshape(-1))
    if unsafe.size == 0:
        safe = [(lo, hi)]
    else:
        below = (lo, min(hi, float(unsafe[0]) - r))
        above = (max(lo, float(unsafe[-1]) + r), hi)
        parts = [iv for iv in (below, above) if iv[0] <= iv[1]]
        if len(parts) == 2 and parts[0][1] >= parts[1][0]:
            parts = [(parts[0][0], parts[1][1])]
        safe = parts
    chosen = choose_interval(safe, unsafe, r, prefer)
    return SafeRegion((lo, hi), unsafe, safe, chosen)


def interval_side(iv: Interval, unsafe: np.ndarray, r: float) -> str:
    if unsafe.size == 0:
        return "whole"
    if iv[1] <= float(unsafe[0]) - r + 1e-9:
        return "lower"
    if iv[0] >= float(unsafe[-1]) + r - 1e-9:
        return "upper"
    return "whole"


def choose_interval(safe: list[Interval], unsafe: np.ndarray, r: float, prefer: Optional[str] = None) -> Optional[Interval]:
    if not safe:
        return None
    if prefer in ("lower", "upper"):
        same = [iv for iv in safe if interval_side(iv, unsafe, r) == prefer]
        if same:
            return same[0]
    best = None
    for iv in safe:  # ascending, so ">=" lets the higher one win ties
        if best is None or (iv[1] - iv[0]) >= (best[1] - best[0]):
            best = iv
    return best


# ---------------------------------------------------------------------------
# Brute-force oracle over the raw predicates
# ---------------------------------------------------------------------------

def grid_safe_heights(shape_z, keypoints, t, w: float, w_g: float, r: float, step: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the graspable/unsafe/safe predicates on a height grid.

    Returns the grid and a boolean safe mask.  Deliberately shares no code
    with :func:`graspable_range`, :func:`unsafe_heights` or
    :func:`safe_region`.
    """
    z_lo, z_hi = float(np.min(shape_z)), float(np.max(shape_z))
    grid = np.arange(math.floor(z_lo) - 1.0, math.ceil(z_hi) + 1.0 + step, step)
    in_z = (grid >= z_lo + w_g / 2.0) & (grid <= z_hi - w_g / 2.0)
    occluded = []
    for h in np.asarray(keypoints, dtype=np.float64).reshape(-1, 3):
        if h[1] > t[1] - w / 2.0 and abs(h[0] - t[0]) < w:
            occluded.append(h[2])
    if not occluded:
        return grid, in_z
    low, high = min(occluded), max(occluded)
    ok = np.array([(z <= low - r) or (z >= high + r) for z in grid])
    return grid, in_z & ok


def grid_runs(grid: np.ndarray, mask: np.ndarray) -> list[Interval]:
    runs: list[Interval] = []
    start = None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        if start is not None and (not flag or i == len(mask) - 1):
            end = i if flag else i - 1
            runs.append((float(grid[start]), float(grid[end])))
            start = None
    return runs


def compare_with_grid(region: SafeRegion, grid: np.ndarray, mask: np.ndarray, step: float = 1.0) -> list[str]:
    """Differences between analytic intervals and grid membership.

    Grid points within 1e-9 of an analytic boundary are skipped; analytic
    intervals shorter than the grid step are only required not to contradict
    the grid.
    """
    problems: list[str] = []
    eps = 1e-9
    for z, flag in zip(grid, mask):
        inside = any(lo - eps <= z <= hi + eps for lo, hi in region.safe)
        near = any(abs(z - lo) <= eps or abs(z - hi) <= eps for lo, hi in region.safe)
        if inside != bool(flag) and not near:
            problems.append(f"z={z:g}: analytic {'safe' if inside else 'unsafe'}, grid {'safe' if flag else 'unsafe'}")
    runs = grid_runs(grid, mask)
    resolvable = [iv for iv in region.safe if iv[1] - iv[0] >= step]
    for lo, hi in resolvable:
        match = [run for run in runs if run[0] <= hi + eps and run[1] >= lo - eps]
        if len(match) != 1:
            problems.append(f"interval [{lo:g}, {hi:g}] matches {len(match)} grid runs")
            continue
        glo, ghi = match[0]
        if abs(glo - lo) > step + eps or abs(ghi - hi) > step + eps:
            problems.append(f"interval [{lo:g}, {hi:g}] vs grid [{glo:g}, {ghi:g}]")
    return problems


# ---------------------------------------------------------------------------
# Plan and force
# ---------------------------------------------------------------------------

def front_orientation() -> np.ndarray:
    """Tool frame for a level approach from the robot side.

    Columns: closing axis (world x), approach axis (world +y, toward the
    human), vertical (world z).
    """
    return np.eye(3)


def plan_grasp(region: SafeRegion, shape, t) -> GraspPlan:
    """Grasp point at the container axis, mid-height of the chosen interval."""
    if region.chosen is None:
        return GraspPlan(None, 0.0, front_orientation(), False, None)
    lo, hi = region.chosen
    gz = (hi + lo) / 2.0
    width = 2.0 * shape.radius_at(gz)
    target = np.array([float(t[0]), float(t[1]), gz])
    return GraspPlan(target, width, front_orientation(), True, region.chosen)


def required_force(mass_g: float, model: GripModel = GripModel()) -> float:
    """Normal force (N) holding ``mass_g`` against gravity plus peak acceleration."""
    if mass_g < 0:
        raise ValueError("mass must be non-negative")
    return (mass_g / 1000.0) * (model.g + model.a_max) / model.mu


def force_for_effort(effort: float, model: GripModel = GripModel()) -> float:
    return model.a * effort + model.b


@dataclass(frozen=True)
class EffortCommand:
    effort: float
    raw: float
    clamped: bool


def effort_for_force(force: float, model: GripModel = GripModel(), clamp: bool = True) -> EffortCommand:
    """Inverse of the effort model, clamped to the calibrated effort range."""
    raw = (force - model.b) / model.a
    if not clamp:
        return EffortCommand(raw, raw, False)
    eff = min(max(raw, model.effort_min), model.effort_max)
    return EffortCommand(eff, raw, eff != raw)
