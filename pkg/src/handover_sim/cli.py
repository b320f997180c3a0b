"""Command-line entry points: run, batch, oracle, export-curves and synth.

Exit codes: 0 success, 1 internal error or oracle mismatch, 2 input
validation error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import glob as globlib
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import plotting
from .errors import HandoverError, InputError, TooShort
from .grasp import (
    compare_with_grid,
    graspable_range,
    grid_safe_heights,
    required_force,
    safe_region,
    unsafe_heights,
)
from .ingest import HandoverScenario, parse_scenario, parse_transition, write_scenario
from .params import CONFIGURATIONS, ParameterSet
from .perception import mesh_export, perceive
from .safety import NE, SafetyParams, SafetyReport, build_report, human_safety, object_safety, reports_csv
from .sim import run_handover

logger = logging.getLogger("handover_sim")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2

MATRIX_METRICS = ("psi_h", "psi_f", "psi_f_bar", "delta")
CURVE_C = (0.5, 0.7, 0.9, 0.995)


@dataclass
class RunConfig:
    scenarios: list[str]
    out: Path
    seed: int = 0
    overrides: dict = field(default_factory=dict)
    transition: Optional[np.ndarray] = None
    figures: bool = True


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _read_json(path: str, what: str):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise InputError(f"{what} file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} file {path}: line {exc.lineno}: {exc.msg}") from exc


def build_config(args: argparse.Namespace, scenarios: list[str]) -> RunConfig:
    overrides: dict = {}
    if getattr(args, "params", None):
        data = _read_json(args.params, "params")
        if not isinstance(data, dict):
            raise InputError(f"params file {args.params}: top level must be an object")
        overrides.update(data)
    overrides["seed"] = args.seed
    if getattr(args, "lock_region", None) is not None:
        overrides["lock_region"] = args.lock_region
    if getattr(args, "contact_noise", None) is not None:
        overrides["contact_noise"] = args.contact_noise
    transition = None
    if getattr(args, "transition_matrix", None):
        transition = parse_transition(_read_json(args.transition_matrix, "transition matrix"), args.transition_matrix)
    return RunConfig(scenarios, Path(args.out), args.seed, overrides, transition, not args.no_figures)


def simulate(path: str, cfg: RunConfig):
    scenario = parse_scenario(path, cfg.overrides)
    log = run_handover(scenario, transition=cfg.transition)
    return scenario, log, build_report(log, scenario)


def _overview(log, path: Path) -> None:
    plotting.run_overview(
        np.array([s.time for s in log.steps]),
        np.array([s.tool for s in log.steps]),
        np.array([s.container for s in log.steps]),
        np.array([s.l for s in log.steps]),
        log.events,
        path,
    )


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def cmd_run(cfg: RunConfig) -> int:
    scenario, log, report = simulate(cfg.scenarios[0], cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "report.csv").write_text(reports_csv([report]))
    (cfg.out / "report.json").write_text(report.to_json())
    (cfg.out / "log.csv").write_text(log.to_csv())
    (cfg.out / "events.json").write_text(log.events_json())
    try:
        mesh_export(perceive(scenario, cfg.transition).shape_world, cfg.out / "container.obj")
    except HandoverError as exc:
        logger.warning("mesh not written: %s", exc)
    if cfg.figures:
        _overview(log, cfg.out / "overview.png")
    print(f"{report.scenario}: events={';'.join(report.events)} psi_h={report.psi_h:.4f} "
          f"psi_f={report.psi_f:.4f} psi_f_bar={report.psi_f_bar if report.psi_f_bar == NE else format(report.psi_f_bar, '.4f')} "
          f"delta={report.delta:.4f} delta_m={report.delta_m:.2f} g")
    return EXIT_OK


# ---------------------------------------------------------------------------
# batch
# ---------------------------------------------------------------------------

def _threads() -> int:
    raw = os.environ.get("HANDOVER_SIM_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            logger.warning("ignoring HANDOVER_SIM_THREADS=%r", raw)
    return max(1, min(4, os.cpu_count() or 1))


def aggregate(reports: Sequence[SafetyReport], metric: str) -> tuple[list[str], list[str], list[list]]:
    """Configuration x container matrix of mean scores in percent.

    Cells with no runs are None; cells where every run lost the hand are
    "X"; post-grasp cells where no run grasped are "NE".
    """
    cols = sorted({r.container for r in reports})
    rows = list(CONFIGURATIONS)
    cells: list[list] = [[None for _ in cols] for _ in rows]
    for i, row in enumerate(rows):
        for j, col in enumerate(cols):
            runs = [r for r in reports if r.configuration == row and r.container == col]
            if not runs:
                continue
            if all(r.hand_failure for r in runs):
                cells[i][j] = "X"
                continue
            values = [getattr(r, metric) for r in runs]
            numeric = [float(v) for v in values if v != NE]
            cells[i][j] = NE if not numeric else 100.0 * sum(numeric) / len(numeric)
    return rows, cols, cells


def matrix_csv(rows: list[str], cols: list[str], cells: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["configuration", *cols])
    for row, values in zip(rows, cells):
        w.writerow([row, *("" if v is None else v if isinstance(v, str) else f"{v:.2f}" for v in values)])
    return buf.getvalue()


def cmd_batch(cfg: RunConfig) -> int:
    paths = sorted(cfg.scenarios)
    if not paths:
        raise InputError("no scenario matches the pattern")
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(lambda p: simulate(p, cfg), paths))
    results.sort(key=lambda item: (item[0].scenario_id, str(item[0].container)))

    cfg.out.mkdir(parents=True, exist_ok=True)
    reports = [rep for _, _, rep in results]
    (cfg.out / "runs.csv").write_text(reports_csv(reports))
    detail_dir = cfg.out / "runs"
    detail_dir.mkdir(exist_ok=True)
    for scenario, log, rep in results:
        (detail_dir / f"{scenario.scenario_id}.json").write_text(rep.to_json())
        (detail_dir / f"{scenario.scenario_id}_log.csv").write_text(log.to_csv())
    for metric in MATRIX_METRICS:
        rows, cols, cells = aggregate(reports, metric)
        (cfg.out / f"matrix_{metric}.csv").write_text(matrix_csv(rows, cols, cells))
        if cfg.figures:
            plotting.score_matrix(cells, rows, cols, metric, cfg.out / f"matrix_{metric}.png")
    print(f"{len(reports)} runs written to {cfg.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------

def check_region(shape, keypoints, t, width: float, w_g: float, r: float, r_error: float = 0.0) -> list[str]:
    """Analytic safe region against the 1 mm grid for one configuration.

    ``r_error`` perturbs only the analytic side (negative control).
    """
    grid, mask = grid_safe_heights(shape.z, keypoints, t, width, w_g, r)
    try:
        z_range = graspable_range(shape, w_g)
    except TooShort:
        return ["grid has safe heights but the container is too short"] if mask.any() else []
    region = safe_region(z_range, unsafe_heights([keypoints], t, width), r + r_error)
    return compare_with_grid(region, grid, mask)


def oracle_scenario(scenario: HandoverScenario, r_error: float = 0.0) -> tuple[int, list[str]]:
    p = scenario.params
    perc = perceive(scenario)
    problems: list[str] = []
    checked = 0
    for k, frame in enumerate(scenario.frames):
        if not perc.track.valid[k]:
            continue
        t = perc.track.positions[k]
        shape = perc.shape.translated(float(t[2]), (t[0], t[1]))
        kp = frame.keypoints()
        for msg in check_region(shape, kp, t, perc.metrics.width, p.w_g, p.r, r_error):
            problems.append(f"frame {frame.frame_index}: {msg}")
        checked += 1
    return checked, problems


def oracle_fuzz(n: int, seed: int, params: ParameterSet, r_error: float = 0.0) -> tuple[int, list[str]]:
    from .synth import random_scene

    rng = np.random.default_rng(seed)
    problems: list[str] = []
    for i in range(n):
        shape, kp, t, width = random_scene(rng)
        for msg in check_region(shape, kp, t, width, params.w_g, params.r, r_error):
            problems.append(f"scene {i}: {msg}")
    return n, problems


def cmd_oracle(args: argparse.Namespace) -> int:
    r_error = float(args.inject_r_error or 0.0)
    if args.fuzz:
        checked, problems = oracle_fuzz(args.fuzz, args.seed, ParameterSet(), r_error)
        label = f"{checked} random scenes (seed {args.seed})"
    else:
        if not args.scenario:
            raise InputError("oracle needs a scenario directory or --fuzz N")
        cfg = build_config(args, [args.scenario])
        scenario = parse_scenario(args.scenario, cfg.overrides)
        checked, problems = oracle_scenario(scenario, r_error)
        label = f"{checked} frames of {scenario.scenario_id}"
    for line in problems[:50]:
        print(line)
    if len(problems) > 50:
        print(f"... {len(problems) - 50} more")
    status = "PASS" if not problems else "FAIL"
    print(f"oracle {status}: {label}, {len(problems)} mismatches")
    return EXIT_OK if not problems else EXIT_INTERNAL


# ---------------------------------------------------------------------------
# export-curves
# ---------------------------------------------------------------------------

def curve_tables(p: ParameterSet = ParameterSet()) -> tuple[str, str]:
    """Tidy CSV text for the human- and object-safety curve families."""
    l = np.round(np.arange(0.0, 3.0 * p.L + 0.25, 0.25), 6)
    reference = required_force(100.0)
    force = np.round(np.linspace(0.0, 2.0 * reference, 161), 9)
    h = io.StringIO()
    hw = csv.writer(h, lineterminator="\n")
    hw.writerow(["c", "l_mm", "psi_h"])
    f = io.StringIO()
    fw = csv.writer(f, lineterminator="\n")
    fw.writerow(["c", "force_N", "reference_N", "psi_f"])
    for c in CURVE_C:
        sp = SafetyParams(p.L, c, p.eta, p.phi)
        for x in l:
            hw.writerow([f"{c:g}", f"{x:.2f}", f"{human_safety(float(x), sp):.9f}"])
        for x in force:
            fw.writerow([f"{c:g}", f"{x:.6f}", f"{reference:.6f}", f"{object_safety(float(x), reference, sp):.9f}"])
    return h.getvalue(), f.getvalue()


def cmd_export_curves(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    p = ParameterSet()
    h_text, f_text = curve_tables(p)
    (out / "psi_h_curves.csv").write_text(h_text)
    (out / "psi_f_curves.csv").write_text(f_text)
    if not args.no_figures:
        l = np.linspace(0.0, 3.0 * p.L, 241)
        reference = required_force(100.0)
        force = np.linspace(0.0, 2.0 * reference, 241)
        h_curves, f_curves = {}, {}
        for c in CURVE_C:
            sp = SafetyParams(p.L, c, p.eta, p.phi)
            h_curves[c] = np.array([human_safety(float(x), sp) for x in l])
            f_curves[c] = np.array([object_safety(float(x), reference, sp) for x in force])
        plotting.human_safety_curves(l, h_curves, p.L, out / "psi_h_curves.png")
        plotting.object_safety_curves(force, f_curves, reference, out / "psi_f_curves.png")
    print(f"curves written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    from .synth import build_scene, demo_specs, fixture_specs

    out = Path(args.out)
    batch = out / "batch"
    for spec in fixture_specs():
        write_scenario(batch / spec.scenario_id, build_scene(spec))
    for spec in demo_specs():
        write_scenario(out / spec.scenario_id, build_scene(spec))
    # A bundle with one silhouette missing, for the input-validation path.
    broken = out / "missing_mask"
    write_scenario(broken, dataclasses.replace(build_scene(demo_specs()[0]), scenario_id="missing_mask"))
    (broken / "mask_1.pgm").unlink()
    print(f"scenes written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, out_default: Optional[str] = "out") -> None:
    p.add_argument("--out", default=out_default, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="seed for noise injection (default 0)")
    p.add_argument("--params", help="JSON file of parameter overrides")
    p.add_argument("--lock-region", type=_bool, default=None, metavar="BOOL",
                   help="keep the first chosen side of the safe region")
    p.add_argument("--contact-noise", type=float, default=None, metavar="N",
                   help="std of the applied-force perturbation (N)")
    p.add_argument("--transition-matrix", help="JSON file with an 8x8 row-stochastic matrix")
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")


def _describe(exc: Exception) -> str:
    text = str(exc)
    name = type(exc).__name__
    return text if text.startswith(name) else f"{name}: {text}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="handover-sim", description="Replay and score human-to-robot container handovers.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario directory")
    p.add_argument("scenario")
    _common(p)

    p = sub.add_parser("batch", help="simulate every scenario matching a glob")
    p.add_argument("pattern")
    _common(p)

    p = sub.add_parser("oracle", help="check the safe region against a brute-force grid")
    p.add_argument("scenario", nargs="?")
    p.add_argument("--fuzz", type=int, default=0, metavar="N", help="check N random scenes instead")
    p.add_argument("--inject-r-error", type=float, default=0.0, help=argparse.SUPPRESS)
    _common(p)

    p = sub.add_parser("export-curves", help="write safety-score curve tables")
    p.add_argument("--out", default="out")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("synth", help="write the synthetic fixture scenes")
    p.add_argument("--out", default="scenes")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "run":
            return cmd_run(build_config(args, [args.scenario]))
        if args.command == "batch":
            matches = [m for m in globlib.glob(args.pattern) if Path(m).is_dir()]
            return cmd_batch(build_config(args, matches))
        if args.command == "oracle":
            return cmd_oracle(args)
        if args.command == "export-curves":
            return cmd_export_curves(args)
        if args.command == "synth":
            return cmd_synth(args)
    except InputError as exc:
        print(f"error: {_describe(exc)}", file=sys.stderr)
        return EXIT_INPUT
    except HandoverError as exc:
        print(f"error: {_describe(exc)}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to exit 1
        logger.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    parser.error(f"unknown command {args.command}")
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
