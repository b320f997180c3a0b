"""Simulation, perception and scoring parameters with their defaults.

Lengths are millimetres, masses grams, times seconds.  Accelerations that
enter the force model (``a_max``, ``gravity``) stay in m/s^2 because the
force model works in newtons.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Any, Mapping

logger = logging.getLogger(__name__)

# Content classes in the order used by every probability vector.
CLASSES: tuple[str, ...] = ("empty", "P5", "P9", "R5", "R9", "W5", "W9", "unknown")

# Row order of the configuration x container matrices.
CONFIGURATIONS: tuple[str, ...] = ("0", "P5", "P9", "R5", "R9", "W5", "W9")

DEFAULT_DENSITIES: dict[str, float] = {"pasta": 0.41, "rice": 0.85, "water": 1.0}


@dataclass(frozen=True)
class ParameterSet:
    # gripper / hand geometry
    w_h: float = 20.0
    w_g: float = 22.0
    finger_length: float = 40.0
    gripper_max_aperture: float = 140.0
    approach_clearance: float = 20.0  # per side, while the gripper is open
    closing_speed: float = 100.0  # mm/s

    # force model
    mu: float = 1.0
    a_max: float = 27.9  # m/s^2
    gravity: float = 9.81  # m/s^2
    effort_a: float = 25.35  # N per effort unit
    effort_b: float = 0.045  # N
    effort_min: float = 0.01
    effort_max: float = 1.25

    # scoring
    L: float = 21.0
    c: float = 0.995
    eta: float = 500.0
    phi: float = math.pi / 4

    # robot
    dt: float = 1.0 / 30.0
    v_max: float = 500.0  # mm/s
    standoff: float = 100.0
    grasp_trigger: float = 10.0
    hold_time: float = 2.0
    max_transport_time: float = 10.0
    robot_home: tuple[float, float, float] = (0.0, 150.0, 300.0)
    lock_region: bool = True
    contact_noise: float = 0.0  # N, std of the applied-force perturbation
    orientation_noise: float = 0.0  # rad, std of the placement tilt

    # perception
    kalman_q: float = 100.0  # mm^2/s^3
    kalman_r: float = 25.0  # mm^2
    lode_samples: int = 36
    lode_dz: float = 2.0
    lode_dr: float = 1.0
    lode_r_min: float = 1.0

    seed: int = 0

    @property
    def r(self) -> float:
        """Grasp margin: half the summed gripper and finger widths."""
        return (self.w_g + self.w_h) / 2.0

    @property
    def a_max_mm(self) -> float:
        return self.a_max * 1000.0

    def replace(self, **changes: Any) -> "ParameterSet":
        return with_overrides(self, changes)

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["robot_home"] = list(self.robot_home)
        return out


# (lower, upper, lower_inclusive, upper_inclusive); None means unbounded.
_BOUNDS: dict[str, tuple[float | None, float | None, bool, bool]] = {
    "w_h": (0.0, None, True, True),
    "w_g": (0.0, None, True, True),
    "finger_length": (0.0, None, False, True),
    "gripper_max_aperture": (0.0, None, False, True),
    "approach_clearance": (0.0, None, True, True),
    "closing_speed": (0.0, None, False, True),
    "mu": (0.0, None, False, True),
    "a_max": (0.0, None, True, True),
    "gravity": (0.0, None, True, True),
    "effort_a": (0.0, None, False, True),
    "effort_min": (None, None, True, True),
    "effort_max": (None, None, True, True),
    "L": (0.0, None, False, True),
    "c": (0.0, 1.0, False, False),
    "eta": (0.0, None, False, True),
    "phi": (0.0, math.pi / 2, False, False),
    "dt": (0.0, None, False, True),
    "v_max": (0.0, None, False, True),
    "standoff": (0.0, None, True, True),
    "grasp_trigger": (0.0, None, False, True),
    "hold_time": (0.0, None, True, True),
    "max_transport_time": (0.0, None, False, True),
    "contact_noise": (0.0, None, True, True),
    "orientation_noise": (0.0, None, True, True),
    "kalman_q": (0.0, None, True, True),
    "kalman_r": (0.0, None, True, True),
    "lode_samples": (3, None, True, True),
    "lode_dz": (0.0, None, False, True),
    "lode_dr": (0.0, None, False, True),
    "lode_r_min": (0.0, None, True, True),
}


def _check_bound(name: str, value: Any) -> None:
    if name not in _BOUNDS:
        return
    lo, hi, lo_inc, hi_inc = _BOUNDS[name]
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
        raise ValueError(f"parameter {name} must be a finite number, got {value!r}")
    if lo is not None and (value < lo or (value == lo and not lo_inc)):
        raise ValueError(f"parameter {name}={value} below its lower bound {lo}")
    if hi is not None and (value > hi or (value == hi and not hi_inc)):
        raise ValueError(f"parameter {name}={value} above its upper bound {hi}")


def with_overrides(base: ParameterSet, overrides: Mapping[str, Any]) -> ParameterSet:
    """Return ``base`` with ``overrides`` applied after bound checks.

    Raises:
        ValueError: unknown key or out-of-bounds value.
    """
    names = {f.name: f for f in dataclasses.fields(ParameterSet)}
    clean: dict[str, Any] = {}
    for key, value in overrides.items():
        if key not in names:
            raise ValueError(f"unknown parameter {key!r}")
        if key == "robot_home":
            value = tuple(float(v) for v in value)
            if len(value) != 3 or not all(math.isfinite(v) for v in value):
                raise ValueError("robot_home must be three finite numbers")
        elif key == "lock_region":
            if not isinstance(value, bool):
                raise ValueError("lock_region must be a boolean")
        elif key in ("seed", "lode_samples"):
            if isinstance(value, bool) or int(value) != value:
                raise ValueError(f"{key} must be an integer")
            value = int(value)
        else:
            _check_bound(key, value)
            value = float(value)
        clean[key] = value
    params = dataclasses.replace(base, **clean)
    if params.effort_min > params.effort_max:
        raise ValueError("effort_min must not exceed effort_max")
    return params


def from_mapping(overrides: Mapping[str, Any] | None) -> ParameterSet:
    """Build a parameter set from partial overrides, logging every default used."""
    overrides = dict(overrides or {})
    params = with_overrides(ParameterSet(), overrides)
    for f in dataclasses.fields(ParameterSet):
        if f.name not in overrides:
            logger.debug("parameter %s defaulted to %r", f.name, getattr(params, f.name))
    return params


@dataclass(frozen=True)
class DensityTable:
    pasta: float = 0.41
    rice: float = 0.85
    water: float = 1.0

    def __post_init__(self) -> None:
        for name in ("pasta", "rice", "water"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"density of {name} must be positive, got {value}")

    def density(self, content: str) -> float:
        return float(getattr(self, content))

    def to_dict(self) -> dict[str, float]:
        return dataclasses.asdict(self)


def class_filling(label: str) -> tuple[str, float]:
    """Map a content class label to (content type, fill level).

    ``empty`` and ``unknown`` both map to ``("none", 0.0)``; an unknown
    filling is treated as an empty container for mass purposes.
    """
    if label in ("empty", "unknown"):
        return "none", 0.0
    kinds = {"P": "pasta", "R": "rice", "W": "water"}
    levels = {"5": 0.5, "9": 0.9}
    if len(label) != 2 or label[0] not in kinds or label[1] not in levels:
        raise ValueError(f"unknown content class {label!r}")
    return kinds[label[0]], levels[label[1]]


def configuration_label(content: str, level: float) -> str:
    """Matrix row label for a ground-truth filling."""
    if content == "none" or level == 0:
        return "0"
    return f"{content[0].upper()}{'5' if level == 0.5 else '9'}"


__all__ = [
    "CLASSES",
    "CONFIGURATIONS",
    "DEFAULT_DENSITIES",
    "DensityTable",
    "ParameterSet",
    "class_filling",
    "configuration_label",
    "from_mapping",
    "with_overrides",
]

