"""Kinematic handover replay.

The robot is a tool point carrying two parallel finger segments.  Each step
(one trace frame, ``dt`` seconds) refreshes the container and hand poses,
recomputes the safe region, and advances the tool toward its target under
speed and acceleration bounds.  A grasp closes the gripper, the container
is carried to the delivery target and released there, or slips on the way.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NotInContact, TooShort
from .geom import as_point, points_segment_distance
from .grasp import (
    GraspPlan,
    GripModel,
    effort_for_force,
    force_for_effort,
    graspable_range,
    interval_side,
    plan_grasp,
    required_force,
    safe_region,
    unsafe_heights,
)
from .ingest import HandoverScenario
from .params import ParameterSet
from .perception import Perception, estimate_mass, perceive

logger = logging.getLogger(__name__)

APPROACH = "APPROACH"
STANDOFF = "STANDOFF"
GRASP = "GRASP"
TRANSPORT = "TRANSPORT"
PLACE = "PLACE"
DONE = "DONE"
ABORTED = "ABORTED"

EVENTS = ("GRASP_EXECUTED", "NO_SAFE_REGION", "HAND_CONTACT", "SLIP", "PLACED", "TIMEOUT")


@dataclass
class RobotState:
    tool: np.ndarray
    velocity: np.ndarray
    aperture: float
    effort: float = 0.0
    phase: str = APPROACH
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def finger_segments(self, finger_length: float) -> list[tuple[np.ndarray, np.ndarray]]:
        closing = self.orientation[:, 0]
        approach = self.orientation[:, 1]
        segs = []
        for side in (-1.0, 1.0):
            mid = self.tool + side * (self.aperture / 2.0) * closing
            half = (finger_length / 2.0) * approach
            segs.append((mid - half, mid + half))
        return segs


@dataclass
class Event:
    name: str
    time: float
    step: int

    def to_dict(self) -> dict:
        return {"event": self.name, "time": round(self.time, 9), "step": self.step}


@dataclass
class StepRecord:
    step: int
    time: float
    phase: str
    tool: np.ndarray
    velocity: np.ndarray
    aperture: float
    effort: float
    container: np.ndarray
    l: float
    force: float
    feasible: bool
    region: Optional[tuple[float, float]]
    safe: tuple = ()  # every safe interval this step, ascending


@dataclass
class SimulationLog:
    scenario_id: str
    steps: list[StepRecord] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)
    grasp_step: Optional[int] = None
    closure_step: Optional[int] = None
    grasp_frame: Optional[int] = None
    predicted_mass: float = float("nan")
    predicted_force: float = float("nan")
    true_mass: float = float("nan")
    effort: Optional[float] = None
    effort_raw: Optional[float] = None
    effort_clamped: bool = False
    applied_force: Optional[float] = None
    final_base: Optional[np.ndarray] = None
    final_tilt: float = 0.0
    slip_position: Optional[np.ndarray] = None
    hand_failure: bool = False
    belief: dict = field(default_factory=dict)
    shape_metrics: dict = field(default_factory=dict)

    def has(self, name: str) -> bool:
        return any(e.name == name for e in self.events)

    def event_names(self) -> list[str]:
        return [e.name for e in self.events]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([
            "step", "time", "phase", "tool_x", "tool_y", "tool_z", "vel_x", "vel_y", "vel_z",
            "aperture", "effort", "container_x", "container_y", "container_z", "l", "force",
            "feasible", "region_lo", "region_hi",
        ])
        for s in self.steps:
            lo, hi = s.region if s.region is not None else ("", "")
            w.writerow([
                s.step, _f(s.time), s.phase, *(_f(v) for v in s.tool), *(_f(v) for v in s.velocity),
                _f(s.aperture), _f(s.effort), *(_f(v) for v in s.container),
                "inf" if math.isinf(s.l) else _f(s.l), _f(s.force), int(s.feasible),
                "" if lo == "" else _f(lo), "" if hi == "" else _f(hi),
            ])
        return buf.getvalue()

    def events_json(self) -> str:
        return json.dumps({"scenario": self.scenario_id, "events": [e.to_dict() for e in self.events]}, indent=2) + "\n"


def _f(x: float) -> str:
    return f"{float(x):.6f}"


# ---------------------------------------------------------------------------
# Physics-lite pieces
# ---------------------------------------------------------------------------

def grip_stability(force: float, mass_g: float, accel: float, mu: float, g: float = 9.81) -> bool:
    """Friction holds the container: ``mu * F >= m (g + |a|)``.

    ``accel`` is in m/s^2.  The boundary counts as holding, with a relative
    slack of 1e-12 so a force computed for exactly this load is not lost to
    round-off.
    """
    if force < 0:
        raise ValueError("applied force must be non-negative")
    load = (mass_g / 1000.0) * (g + abs(accel))
    return mu * force >= load * (1.0 - 1e-12)


def min_hand_distance(robot: RobotState, hands, finger_length: float = 40.0, w_h: float = 20.0) -> float:
    """Clearance (mm) between the finger segments and the hand keypoints.

    Keypoints are spheres of diameter ``w_h``; the result is clamped at zero
    and infinite when no hand is present.
    """
    pts = [np.asarray(h, dtype=np.float64).reshape(-1, 3) for h in hands if h is not None]
    if not pts:
        return math.inf
    kp = np.vstack(pts)
    if kp.shape[0] == 0:
        return math.inf
    best = math.inf
    for a, b in robot.finger_segments(finger_length):
        best = min(best, float(points_segment_distance(kp, a, b).min()))
    return max(best - w_h / 2.0, 0.0)


def applied_force(effort: float, aperture: float, contact_width: float, model: GripModel = GripModel(), noise: float = 0.0) -> float:
    """Normal force from the effort model plus an optional perturbation.

    Raises:
        NotInContact: the gripper is wider than the container.
    """
    if aperture > contact_width + 1e-9:
        raise NotInContact(f"aperture {aperture:.3f} mm exceeds container width {contact_width:.3f} mm")
    return max(force_for_effort(effort, model) + noise, 0.0)


def _step_toward(tool: np.ndarray, vel: np.ndarray, target: np.ndarray, p: ParameterSet) -> tuple[np.ndarray, np.ndarray]:
    """Advance the tool one step with |v| <= v_max and |dv| <= a_max dt.

    The commanded speed also never exceeds what can stop at the target or
    overshoot it within the step.
    """
    dt = p.dt
    a_max = p.a_max_mm
    err = target - tool
    dist = float(np.linalg.norm(err))
    if dist < 1e-12:
        v_des = np.zeros(3)
    else:
        speed = min(p.v_max, math.sqrt(2.0 * a_max * dist), dist / dt)
        v_des = err / dist * speed
    dv = v_des - vel
    dvn = float(np.linalg.norm(dv))
    limit = a_max * dt
    if dvn > limit:
        dv *= limit / dvn
    vel_new = vel + dv
    return tool + vel_new * dt, vel_new


def _surface_distance(point: np.ndarray, centre: np.ndarray, radius: float, z_lo: float, z_hi: float) -> float:
    """Distance from ``point`` to the container's bounding cylinder."""
    rho = math.hypot(point[0] - centre[0], point[1] - centre[1])
    dr = max(rho - radius, 0.0)
    dz = max(z_lo - point[2], point[2] - z_hi, 0.0)
    return math.hypot(dr, dz)


def standoff_point(centre: np.ndarray, radius: float, standoff: float) -> np.ndarray:
    """Hold point on the robot side, ``standoff`` from the container surface."""
    return np.array([centre[0], centre[1] - radius - standoff, centre[2]])


# ---------------------------------------------------------------------------
# Main loop
# ---------------------------------------------------------------------------

def run_handover(
    scenario: HandoverScenario,
    perception: Optional[Perception] = None,
    transition: Optional[np.ndarray] = None,
) -> SimulationLog:
    """Simulate one handover and return its log; outcomes are events, never errors."""
    p = scenario.params
    perc = perception or perceive(scenario, transition)
    model = GripModel.from_params(p)
    rng = np.random.default_rng(p.seed)
    track = perc.track
    frames = scenario.frames
    n_trace = len(frames)
    n_track = len(track)
    metrics = perc.metrics
    radius_max = perc.shape.max_radius
    true_mass = scenario.truth.object_mass(scenario.densities)

    log = SimulationLog(scenario.scenario_id, true_mass=true_mass)
    log.hand_failure = not bool(perc.hand_valid.any())
    log.shape_metrics = {
        "width": metrics.width, "height": metrics.height, "depth": metrics.depth, "volume": metrics.volume,
    }

    robot = RobotState(as_point(p.robot_home).copy(), np.zeros(3), p.gripper_max_aperture)
    locked_side: Optional[str] = None
    no_region_active = False
    contact_active = False
    plan: Optional[GraspPlan] = None
    grasp_offset = None  # grasp point minus container centroid, frozen at trigger
    carry_offset = None  # container centroid minus tool, frozen at closure
    width_at_grasp = 0.0
    force_now = 0.0
    transport_start = None
    max_steps = n_track + int(math.ceil(p.max_transport_time / p.dt)) + 2

    def event(name: str, k: int, t: float) -> None:
        log.events.append(Event(name, t, k))

    for k in range(max_steps):
        t = float(track.times[k]) if k < n_track else float(track.times[-1] + (k - n_track + 1) * p.dt)
        frame = frames[min(k, n_trace - 1)]
        hands = [frame.left_hand, frame.right_hand]
        pose_k = min(k, n_track - 1)

        if carry_offset is None:
            centre = track.positions[pose_k].copy()
        else:
            centre = robot.tool + carry_offset
        region_iv = None
        safe_ivs: tuple = ()
        feasible = False

        if robot.phase in (APPROACH, STANDOFF):
            if not track.valid[pose_k]:
                target = robot.tool.copy()
            else:
                shape_k = perc.shape.translated(float(centre[2]), (centre[0], centre[1]))
                try:
                    z_range = graspable_range(shape_k, p.w_g)
                except TooShort:
                    z_range = None
                plan = None
                if z_range is not None:
                    unsafe = unsafe_heights(hands, centre, metrics.width)
                    prefer = locked_side if p.lock_region else None
                    region = safe_region(z_range, unsafe, p.r, prefer)
                    safe_ivs = tuple(region.safe)
                    if region.chosen is not None:
                        side = interval_side(region.chosen, region.unsafe, p.r)
                        if p.lock_region and side != "whole":
                            locked_side = side
                    plan = plan_grasp(region, shape_k, centre)
                if plan is not None and plan.feasible:
                    feasible = True
                    region_iv = plan.interval
                    no_region_active = False
                    robot.phase = APPROACH
                    target = plan.target
                    robot.aperture = min(p.gripper_max_aperture, plan.gripper_width + 2.0 * p.approach_clearance)
                else:
                    if not no_region_active:
                        event("NO_SAFE_REGION", k, t)
                        no_region_active = True
                    robot.phase = STANDOFF
                    target = standoff_point(centre, radius_max, p.standoff)
            robot.tool, robot.velocity = _step_toward(robot.tool, robot.velocity, target, p)

            if feasible and float(np.linalg.norm(robot.tool - plan.target)) < p.grasp_trigger:
                robot.phase = GRASP
                log.grasp_step = k
                log.grasp_frame = min(k, n_trace - 1)
                event("GRASP_EXECUTED", k, t)
                belief = perc.belief_at(log.grasp_frame)
                log.belief = belief.as_dict()
                log.predicted_mass = estimate_mass(belief, metrics.volume, scenario.densities, scenario.truth.container_mass)
                log.predicted_force = required_force(log.predicted_mass, model)
                cmd = effort_for_force(log.predicted_force, model)
                log.effort, log.effort_raw, log.effort_clamped = cmd.effort, cmd.raw, cmd.clamped
                robot.effort = cmd.effort
                grasp_offset = plan.target - centre
                width_at_grasp = plan.gripper_width

        elif robot.phase == GRASP:
            target = centre + grasp_offset
            feasible = True
            region_iv = plan.interval
            robot.tool, robot.velocity = _step_toward(robot.tool, robot.velocity, target, p)
            robot.aperture = max(robot.aperture - p.closing_speed * p.dt, width_at_grasp)
            if robot.aperture <= width_at_grasp:
                noise = float(rng.normal(0.0, p.contact_noise)) if p.contact_noise > 0 else 0.0
                force_now = applied_force(robot.effort, robot.aperture, width_at_grasp, model, noise)
                log.applied_force = force_now
                log.closure_step = k
                carry_offset = centre - robot.tool
                robot.phase = TRANSPORT
                transport_start = t

        elif robot.phase == TRANSPORT:
            base_offset = np.array([0.0, 0.0, perc.shape.bottom])
            tool_target = scenario.delivery_target - carry_offset - base_offset
            robot.tool, robot.velocity = _step_toward(robot.tool, robot.velocity, tool_target, p)
            centre = robot.tool + carry_offset
            if not grip_stability(force_now, true_mass, p.a_max, p.mu, p.gravity):
                event("SLIP", k, t)
                log.slip_position = centre + base_offset
                log.final_base = log.slip_position.copy()
                log.final_tilt = p.phi
                robot.phase = ABORTED
            elif (
                float(np.linalg.norm(robot.tool - tool_target)) < 1e-6
                and float(np.linalg.norm(robot.velocity)) < 1e-9
            ):
                robot.phase = PLACE
                robot.aperture = p.gripper_max_aperture
                force_now = 0.0
                log.final_base = centre + base_offset
                tilt = float(rng.normal(0.0, p.orientation_noise)) if p.orientation_noise > 0 else 0.0
                log.final_tilt = abs(tilt)
                event("PLACED", k, t)

        l = min_hand_distance(robot, hands, p.finger_length, p.w_h)
        if l <= 0.0:
            if not contact_active:
                event("HAND_CONTACT", k, t)
                contact_active = True
        else:
            contact_active = False

        log.steps.append(StepRecord(
            k, t, robot.phase, robot.tool.copy(), robot.velocity.copy(), robot.aperture, robot.effort,
            centre.copy(), l, force_now, feasible, region_iv, safe_ivs,
        ))

        if robot.phase == PLACE:
            robot.phase = DONE
            log.steps[-1].phase = PLACE
            break
        if robot.phase == ABORTED:
            break
        if robot.phase in (APPROACH, STANDOFF) and k >= n_track - 1:
            event("TIMEOUT", k, t)
            break
        if robot.phase == TRANSPORT and transport_start is not None and t - transport_start > p.max_transport_time:
            event("TIMEOUT", k, t)
            break
    else:
        event("TIMEOUT", len(log.steps) - 1, log.steps[-1].time)

    if log.grasp_step is None:
        belief = perc.belief_at(n_trace - 1)
        log.belief = belief.as_dict()
        log.predicted_mass = estimate_mass(belief, metrics.volume, scenario.densities, scenario.truth.container_mass)
        log.predicted_force = required_force(log.predicted_mass, model)
    return log
