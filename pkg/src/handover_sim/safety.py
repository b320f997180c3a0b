"""Human safety, object safety, delivery accuracy and mass bias."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import UndefinedReference
from .grasp import GripModel, force_for_effort, required_force
from .ingest import HandoverScenario
from .params import ParameterSet

logger = logging.getLogger(__name__)

NE = "NE"  # no grasp executed on the real mass


@dataclass(frozen=True)
class SafetyParams:
    L: float = 21.0  # mm
    c: float = 0.995
    eta: float = 500.0  # mm
    phi: float = math.pi / 4.0  # rad

    def __post_init__(self) -> None:
        if not 0.0 < self.c < 1.0:
            raise ValueError("c must lie in (0, 1)")
        if not (self.L > 0 and self.eta > 0):
            raise ValueError("L and eta must be positive")
        if not 0.0 < self.phi < math.pi / 2.0:
            raise ValueError("phi must lie in (0, pi/2)")

    @classmethod
    def from_params(cls, p: ParameterSet) -> "SafetyParams":
        return cls(p.L, p.c, p.eta, p.phi)


def human_safety(l: float, params: SafetyParams = SafetyParams()) -> float:
    """Probability-like score of not touching the hand at clearance ``l`` (mm).

    A sigmoid in ``l`` equal to 1/2 at ``L/2``, ``c`` at ``L`` and ``1 - c``
    at contact.
    """
    if l < 0:
        raise ValueError("distance must be non-negative")
    if math.isinf(l):
        return 1.0
    x = (2.0 * l / params.L - 1.0) * math.log((1.0 - params.c) / params.c)
    if x > 700.0:
        return 0.0
    return 1.0 / (1.0 + math.exp(x))


def _force_score(relative_error: float, c: float) -> float:
    return math.exp(relative_error * math.log(1.0 - c))


def object_safety(predicted: float, reference: float, params: SafetyParams = SafetyParams()) -> float:
    """Score of a grip force against the force needed for the true mass.

    Decays exponentially with the relative force error, reaching ``1 - c``
    at a 100% error.

    Raises:
        UndefinedReference: zero reference force with a nonzero prediction.
    """
    if reference < 0 or predicted < 0:
        raise ValueError("forces must be non-negative")
    if reference == 0.0:
        if predicted == 0.0:
            return 1.0
        raise UndefinedReference("reference force is zero but the predicted force is not")
    return _force_score(abs(predicted - reference) / reference, params.c)


def post_grasp_safety(applied: Optional[float], reference: float, params: SafetyParams = SafetyParams()) -> Union[float, str]:
    """Object safety of the force actually applied; ``NE`` without a grasp."""
    if applied is None:
        return NE
    return object_safety(applied, reference, params)


def delivery_accuracy(base, target, tilt: float, params: SafetyParams = SafetyParams()) -> float:
    """``1 - alpha/eta`` for an upright placement inside radius ``eta``, else 0.

    ``alpha`` is the horizontal distance of the container base centre from
    the target; ``tilt`` is the angle of the container axis from vertical.
    """
    if base is None:
        return 0.0
    alpha = math.hypot(float(base[0]) - float(target[0]), float(base[1]) - float(target[1]))
    if alpha < params.eta and abs(tilt) < params.phi:
        return 1.0 - alpha / params.eta
    return 0.0


def mass_bias(predicted: float, true: float) -> float:
    """Signed mass error (g): positive when the mass is overestimated."""
    return float(predicted) - float(true)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass
class SafetyReport:
    scenario: str
    psi_h: float
    psi_f: float
    psi_f_bar: Union[float, str]
    delta: float
    delta_m: float
    events: list[str]
    configuration: str = ""
    container: str = ""
    hand_failure: bool = False
    reference_undefined: bool = False
    predicted_mass: float = float("nan")
    true_mass: float = float("nan")
    predicted_force: float = float("nan")
    reference_force: float = float("nan")
    applied_force: Optional[float] = None
    min_l: float = math.inf
    params: dict = field(default_factory=dict)
    detail: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("psi_h", "psi_f", "delta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.psi_f_bar != NE and not 0.0 <= float(self.psi_f_bar) <= 1.0:
            raise ValueError("psi_f_bar outside [0, 1]")
        if not math.isfinite(self.delta_m):
            raise ValueError("mass bias must be finite")

    def row(self) -> list[str]:
        bar = self.psi_f_bar
        return [
            self.scenario,
            fmt(self.psi_h), fmt(self.psi_f), bar if bar == NE else fmt(bar), fmt(self.delta),
            f"{self.delta_m:.2f}", ";".join(self.events),
            pct(self.psi_h), pct(self.psi_f), bar if bar == NE else pct(bar), pct(self.delta),
        ]

    def to_json(self) -> str:
        d = {
            "scenario": self.scenario,
            "configuration": self.configuration,
            "container": self.container,
            "psi_h": self.psi_h,
            "psi_f": self.psi_f,
            "psi_f_bar": self.psi_f_bar,
            "delta": self.delta,
            "delta_m_g": self.delta_m,
            "events": self.events,
            "hand_failure": self.hand_failure,
            "reference_undefined": self.reference_undefined,
            "predicted_mass_g": self.predicted_mass,
            "true_mass_g": self.true_mass,
            "predicted_force_N": self.predicted_force,
            "reference_force_N": self.reference_force,
            "applied_force_N": self.applied_force,
            "min_hand_distance_mm": None if math.isinf(self.min_l) else self.min_l,
            "params": self.params,
            "detail": self.detail,
        }
        return json.dumps(_rounded(d), indent=2, sort_keys=True) + "\n"


REPORT_COLUMNS = [
    "scenario", "psi_h", "psi_f", "psi_f_bar", "delta", "delta_m_g", "events",
    "psi_h_pct", "psi_f_pct", "psi_f_bar_pct", "delta_pct",
]


def fmt(x: float) -> str:
    return f"{float(x):.6f}"


def pct(x: float) -> str:
    return f"{100.0 * float(x):.2f}"


def _rounded(obj):
    if isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            return None
        return round(obj, 9)
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _rounded(obj.tolist())
    if isinstance(obj, np.generic):
        return _rounded(obj.item())
    return obj


def reports_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def contact_window(log) -> tuple[int, int]:
    """Step range (inclusive) over which human safety is aggregated.

    From the grasp trigger to gripper closure when a grasp happened, the
    whole run otherwise.
    """
    if log.grasp_step is None:
        return 0, len(log.steps) - 1
    end = log.closure_step if log.closure_step is not None else len(log.steps) - 1
    return log.grasp_step, end


def build_report(log, scenario: HandoverScenario) -> SafetyReport:
    p = scenario.params
    sp = SafetyParams.from_params(p)
    model = GripModel.from_params(p)

    lo, hi = contact_window(log)
    window = [s.l for s in log.steps[lo:hi + 1]]
    min_l = min(window) if window else math.inf
    psi_h = human_safety(min_l, sp)

    reference = required_force(log.true_mass, model)
    undefined = False
    try:
        psi_f = object_safety(log.predicted_force, reference, sp)
    except UndefinedReference:
        logger.warning("%s: reference force is zero; object safety reported as 0", scenario.scenario_id)
        psi_f, undefined = 0.0, True

    if log.grasp_step is None or log.applied_force is None:
        psi_f_bar: Union[float, str] = NE
    else:
        try:
            psi_f_bar = post_grasp_safety(log.applied_force, reference, sp)
        except UndefinedReference:
            psi_f_bar, undefined = 0.0, True

    placed = log.has("PLACED")
    delta = delivery_accuracy(log.final_base if placed else None, scenario.delivery_target, log.final_tilt, sp)

    detail = {
        "grasp_step": log.grasp_step,
        "closure_step": log.closure_step,
        "effort": log.effort,
        "effort_raw": log.effort_raw,
        "effort_clamped": log.effort_clamped,
        "final_base": None if log.final_base is None else list(map(float, log.final_base)),
        "final_tilt_rad": log.final_tilt,
        "slip_position": None if log.slip_position is None else list(map(float, log.slip_position)),
        "belief": log.belief,
        "shape": log.shape_metrics,
        "events": [e.to_dict() for e in log.events],
        "model_force_at_effort": None if log.effort is None else force_for_effort(log.effort, model),
    }
    return SafetyReport(
        scenario=scenario.scenario_id,
        psi_h=psi_h,
        psi_f=psi_f,
        psi_f_bar=psi_f_bar,
        delta=delta,
        delta_m=mass_bias(log.predicted_mass, log.true_mass),
        events=log.event_names(),
        configuration=scenario.configuration,
        container=scenario.container,
        hand_failure=log.hand_failure,
        reference_undefined=undefined,
        predicted_mass=log.predicted_mass,
        true_mass=log.true_mass,
        predicted_force=log.predicted_force,
        reference_force=reference,
        applied_force=log.applied_force,
        min_l=min_l,
        params=p.to_dict(),
        detail=detail,
    )
