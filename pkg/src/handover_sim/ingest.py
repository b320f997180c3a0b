"""Scenario bundle parsing and writing.

A bundle is a directory holding::

    scenario.json     ground truth, parameter overrides, delivery target
    trace.csv         per-frame hand keypoints and per-view container centroids
    calib_0.txt       3x4 projection matrix + image size, view 0
    calib_1.txt       same for view 1
    mask_0.pgm        occlusion-free container silhouette, view 0
    mask_1.pgm        same for view 1
    estimates.csv     per-frame, per-view content-class probabilities

Every writer here is the exact inverse of its parser so fixtures can be
generated programmatically and re-read without drift.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .errors import (
    InvariantViolation,
    MalformedCalibration,
    MissingFile,
    SchemaViolation,
    TruncatedFile,
    UnsupportedFormat,
)
from .geom import CameraProjection
from .params import (
    CLASSES,
    DensityTable,
    ParameterSet,
    configuration_label,
    from_mapping,
    with_overrides,
)

logger = logging.getLogger(__name__)

N_KEYPOINTS = 21
BUNDLE_FILES = (
    "scenario.json",
    "trace.csv",
    "calib_0.txt",
    "calib_1.txt",
    "mask_0.pgm",
    "mask_1.pgm",
    "estimates.csv",
)
PROB_TOL = 1e-6


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SilhouetteMask:
    width: int
    height: int
    bits: np.ndarray  # (height, width) bool, row-major

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != (self.height, self.width):
            raise ValueError(f"mask bits shape {bits.shape} != ({self.height}, {self.width})")
        object.__setattr__(self, "bits", bits)

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def contains(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Occupancy at pixel coordinates; pixel centres sit on integers."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        ok = np.isfinite(u) & np.isfinite(v)
        col = np.full(u.shape, -1, dtype=np.int64)
        row = np.full(v.shape, -1, dtype=np.int64)
        col[ok] = np.floor(u[ok] + 0.5).astype(np.int64)
        row[ok] = np.floor(v[ok] + 0.5).astype(np.int64)
        inside = ok & (col >= 0) & (col < self.width) & (row >= 0) & (row < self.height)
        out = np.zeros(u.shape, dtype=bool)
        out[inside] = self.bits[row[inside], col[inside]]
        return out

    def centroid(self) -> tuple[float, float]:
        rows, cols = np.nonzero(self.bits)
        if rows.size == 0:
            raise ValueError("empty mask has no centroid")
        return float(cols.mean()), float(rows.mean())


@dataclass(frozen=True)
class TraceFrame:
    frame_index: int
    timestamp: float
    left_hand: Optional[np.ndarray] = None  # (21, 3)
    right_hand: Optional[np.ndarray] = None
    centroid_px: tuple[Optional[tuple[float, float]], Optional[tuple[float, float]]] = (None, None)

    def hands(self) -> list[np.ndarray]:
        return [h for h in (self.left_hand, self.right_hand) if h is not None]

    def keypoints(self) -> np.ndarray:
        """All present keypoints stacked, ``(0, 3)`` when no hand is present."""
        hands = self.hands()
        if not hands:
            return np.zeros((0, 3))
        return np.vstack(hands)


@dataclass(frozen=True)
class EstimateStream:
    """Content-class probabilities, ``probs[frame, view, class]``.

    Frames without a row are marked absent and carry uniform vectors.
    """

    probs: np.ndarray  # (n_frames, 2, 8)
    present: np.ndarray  # (n_frames,) bool

    def __len__(self) -> int:
        return int(self.probs.shape[0])


@dataclass(frozen=True)
class GroundTruth:
    container_mass: float  # g
    content: str  # pasta | rice | water | none
    level: float  # 0, 0.5 or 0.9
    capacity: float  # mL
    opaque: bool = False

    def __post_init__(self) -> None:
        if self.content not in ("pasta", "rice", "water", "none"):
            raise ValueError(f"unknown content type {self.content!r}")
        if self.level not in (0.0, 0.5, 0.9):
            raise ValueError(f"fill level must be 0, 0.5 or 0.9, got {self.level}")
        if (self.level == 0.0) != (self.content == "none"):
            raise ValueError("fill level is zero exactly when the content is none")
        if not (self.container_mass >= 0 and math.isfinite(self.container_mass)):
            raise ValueError("container mass must be finite and non-negative")
        if not (self.capacity >= 0 and math.isfinite(self.capacity)):
            raise ValueError("capacity must be finite and non-negative")

    def filling_mass(self, densities: DensityTable) -> float:
        if self.content == "none":
            return 0.0
        return self.level * self.capacity * densities.density(self.content)

    def object_mass(self, densities: DensityTable) -> float:
        return self.container_mass + self.filling_mass(densities)

    def to_dict(self) -> dict[str, Any]:
        return {
            "container_mass": self.container_mass,
            "type": self.content,
            "level": self.level,
            "capacity": self.capacity,
            "opaque": self.opaque,
        }


@dataclass(frozen=True)
class HandoverScenario:
    frames: list[TraceFrame]
    cameras: tuple[CameraProjection, CameraProjection]
    shape_masks: tuple[SilhouetteMask, SilhouetteMask]
    estimates: EstimateStream
    truth: GroundTruth
    params: ParameterSet
    delivery_target: np.ndarray
    delivery_radius: float
    densities: DensityTable = field(default_factory=DensityTable)
    scenario_id: str = "scenario"
    container: str = "C?"
    shape_frame: int = 0
    transition: Optional[np.ndarray] = None
    overrides: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.frames:
            raise ValueError("a scenario needs at least one frame")
        if len(self.cameras) != 2 or len(self.shape_masks) != 2:
            raise ValueError("a scenario needs exactly two views")

    @property
    def configuration(self) -> str:
        return configuration_label(self.truth.content, self.truth.level)

    def with_params(self, params: ParameterSet) -> "HandoverScenario":
        return replace(self, params=params, delivery_radius=params.eta)


# ---------------------------------------------------------------------------
# PGM masks
# ---------------------------------------------------------------------------

def _pgm_tokens(data: bytes, count: int, name: str) -> tuple[list[bytes], int]:
    """Read ``count`` header tokens, skipping comments; return tokens and offset."""
    tokens: list[bytes] = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i >= n:
            raise TruncatedFile(f"{name}: header ends early")
        if data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace() and data[i : i + 1] != b"#":
            i += 1
        tokens.append(data[start:i])
    return tokens, i


def parse_mask(path) -> SilhouetteMask:
    """Read a PGM (P2 or P5) silhouette; a pixel is occupied when it exceeds
    127 on an 8-bit scale.

    Raises:
        UnsupportedFormat: not a P2/P5 file.
        TruncatedFile: header or raster shorter than declared.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile(path.name)
    data = path.read_bytes()
    if data[:2] not in (b"P2", b"P5"):
        raise UnsupportedFormat(f"{path.name}: expected P2 or P5 magic, got {data[:2]!r}")
    magic = data[:2]
    tokens, offset = _pgm_tokens(data[2:], 3, path.name)
    offset += 2
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise UnsupportedFormat(f"{path.name}: bad header {tokens!r}") from exc
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise UnsupportedFormat(f"{path.name}: bad header values {width} {height} {maxval}")

    n = width * height
    if magic == b"P5":
        offset += 1  # exactly one whitespace byte before the raster
        itemsize = 1 if maxval < 256 else 2
        raster = data[offset : offset + n * itemsize]
        if len(raster) < n * itemsize:
            raise TruncatedFile(f"{path.name}: raster has {len(raster)} of {n * itemsize} bytes")
        dtype = np.uint8 if itemsize == 1 else np.dtype(">u2")
        values = np.frombuffer(raster, dtype=dtype).astype(np.int64)
    else:
        body = data[offset:]
        body = b"\n".join(line.split(b"#", 1)[0] for line in body.splitlines())
        parts = body.split()
        if len(parts) < n:
            raise TruncatedFile(f"{path.name}: {len(parts)} of {n} samples")
        try:
            values = np.array([int(p) for p in parts[:n]], dtype=np.int64)
        except ValueError as exc:
            raise UnsupportedFormat(f"{path.name}: non-integer sample") from exc
    bits = (values * 255 > 127 * maxval).reshape(height, width)
    return SilhouetteMask(width, height, bits)


def mask_to_bytes(mask: SilhouetteMask) -> bytes:
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    return header + (mask.bits.astype(np.uint8) * 255).tobytes()


def write_mask(path, mask: SilhouetteMask) -> None:
    Path(path).write_bytes(mask_to_bytes(mask))


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

def parse_calibration(path) -> CameraProjection:
    """Read 12 reals (row-major 3x4) followed by the integer image size."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(path.name)
    tokens = path.read_text().split()
    if len(tokens) != 14:
        raise MalformedCalibration(f"{path.name}: expected 14 values, found {len(tokens)}")
    try:
        values = [float(t) for t in tokens[:12]]
        width, height = int(tokens[12]), int(tokens[13])
    except ValueError as exc:
        raise MalformedCalibration(f"{path.name}: {exc}") from exc
    try:
        return CameraProjection(np.array(values).reshape(3, 4), width, height)
    except ValueError as exc:
        raise MalformedCalibration(f"{path.name}: {exc}") from exc


def calibration_text(cam: CameraProjection) -> str:
    rows = [" ".join(repr(float(v)) for v in row) for row in cam.matrix]
    return "\n".join(rows) + f"\n{cam.image_width} {cam.image_height}\n"


def write_calibration(path, cam: CameraProjection) -> None:
    Path(path).write_text(calibration_text(cam))


# ---------------------------------------------------------------------------
# Trace
# ---------------------------------------------------------------------------

def trace_header() -> list[str]:
    cols = ["frame", "t"]
    for side in ("L", "R"):
        for k in range(N_KEYPOINTS):
            cols += [f"{side}_x{k}", f"{side}_y{k}", f"{side}_z{k}"]
    cols += ["v0_u", "v0_v", "v1_u", "v1_v"]
    return cols


def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_hand(cells: Sequence[str], name: str, line: int, side: str) -> Optional[np.ndarray]:
    filled = [c.strip() != "" for c in cells]
    if not any(filled):
        return None
    if not all(filled):
        raise SchemaViolation(name, line, f"{side} hand has {sum(filled)} of {len(cells)} coordinates")
    try:
        vals = np.array([float(c) for c in cells], dtype=np.float64)
    except ValueError as exc:
        raise SchemaViolation(name, line, f"{side} hand: {exc}") from exc
    if not np.all(np.isfinite(vals)):
        raise InvariantViolation(name, line, f"{side} hand has non-finite coordinates")
    return vals.reshape(N_KEYPOINTS, 3)


def _parse_pixel(cells: Sequence[str], name: str, line: int) -> Optional[tuple[float, float]]:
    if cells[0].strip() == "" and cells[1].strip() == "":
        return None
    if cells[0].strip() == "" or cells[1].strip() == "":
        raise SchemaViolation(name, line, "centroid pixel has only one coordinate")
    try:
        u, v = float(cells[0]), float(cells[1])
    except ValueError as exc:
        raise SchemaViolation(name, line, str(exc)) from exc
    if not (math.isfinite(u) and math.isfinite(v)):
        raise InvariantViolation(name, line, "centroid pixel is not finite")
    return u, v


def parse_trace(path) -> list[TraceFrame]:
    path = Path(path)
    if not path.exists():
        raise MissingFile(path.name)
    name = path.name
    header = trace_header()
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise SchemaViolation(name, 1, "empty file") from None
        if [c.strip() for c in first] != header:
            raise SchemaViolation(name, 1, "unexpected header")
        frames: list[TraceFrame] = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaViolation(name, line, f"expected {len(header)} columns, got {len(row)}")
            try:
                index = int(row[0])
                t = float(row[1])
            except ValueError as exc:
                raise SchemaViolation(name, line, str(exc)) from exc
            if not math.isfinite(t):
                raise InvariantViolation(name, line, "timestamp is not finite")
            if frames and t <= frames[-1].timestamp:
                raise InvariantViolation(name, line, "timestamps must be strictly increasing")
            if frames and index <= frames[-1].frame_index:
                raise InvariantViolation(name, line, "frame indices must be strictly increasing")
            n = 3 * N_KEYPOINTS
            left = _parse_hand(row[2 : 2 + n], name, line, "left")
            right = _parse_hand(row[2 + n : 2 + 2 * n], name, line, "right")
            px0 = _parse_pixel(row[2 + 2 * n : 4 + 2 * n], name, line)
            px1 = _parse_pixel(row[4 + 2 * n : 6 + 2 * n], name, line)
            frames.append(TraceFrame(index, t, left, right, (px0, px1)))
    if not frames:
        raise SchemaViolation(name, None, "no frames")
    return frames


def trace_text(frames: Sequence[TraceFrame]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(trace_header())
    for fr in frames:
        row = [str(fr.frame_index), _fmt(fr.timestamp)]
        for hand in (fr.left_hand, fr.right_hand):
            if hand is None:
                row += [""] * (3 * N_KEYPOINTS)
            else:
                row += [_fmt(v) for v in np.asarray(hand).reshape(-1)]
        for px in fr.centroid_px:
            row += ["", ""] if px is None else [_fmt(px[0]), _fmt(px[1])]
        writer.writerow(row)
    return buf.getvalue()


def write_trace(path, frames: Sequence[TraceFrame]) -> None:
    Path(path).write_text(trace_text(frames))


# ---------------------------------------------------------------------------
# Estimates
# ---------------------------------------------------------------------------

def parse_estimates(path, frame_indices: Sequence[int]) -> EstimateStream:
    """Read per-frame per-view class probabilities, aligned to trace frames."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(path.name)
    name = path.name
    header = ["frame", "view", *CLASSES]
    slot = {f: i for i, f in enumerate(frame_indices)}
    probs = np.full((len(frame_indices), 2, len(CLASSES)), 1.0 / len(CLASSES))
    seen = np.zeros((len(frame_indices), 2), dtype=bool)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise SchemaViolation(name, 1, "empty file") from None
        if [c.strip() for c in first] != header:
            raise SchemaViolation(name, 1, f"header must be {','.join(header)}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaViolation(name, line, f"expected {len(header)} columns, got {len(row)}")
            try:
                frame, view = int(row[0]), int(row[1])
                vec = np.array([float(c) for c in row[2:]])
            except ValueError as exc:
                raise SchemaViolation(name, line, str(exc)) from exc
            if frame not in slot:
                raise SchemaViolation(name, line, f"frame {frame} does not exist in trace.csv")
            if view not in (0, 1):
                raise SchemaViolation(name, line, f"view must be 0 or 1, got {view}")
            if not np.all(np.isfinite(vec)) or np.any(vec < 0):
                raise InvariantViolation(name, line, "probabilities must be finite and non-negative")
            total = float(vec.sum())
            if abs(total - 1.0) > PROB_TOL:
                raise InvariantViolation(name, line, f"row {line} sums to {total:.9g}, not 1")
            k = slot[frame]
            if seen[k, view]:
                raise SchemaViolation(name, line, f"duplicate row for frame {frame} view {view}")
            seen[k, view] = True
            probs[k, view] = vec
    partial = seen.any(axis=1) & ~seen.all(axis=1)
    if partial.any():
        k = int(np.argmax(partial))
        raise SchemaViolation(name, None, f"frame {frame_indices[k]} has only one view")
    return EstimateStream(probs, seen.all(axis=1))


def estimates_text(stream: EstimateStream, frame_indices: Sequence[int]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["frame", "view", *CLASSES])
    for k, frame in enumerate(frame_indices):
        if not stream.present[k]:
            continue
        for view in (0, 1):
            writer.writerow([frame, view, *(_fmt(p) for p in stream.probs[k, view])])
    return buf.getvalue()


def write_estimates(path, stream: EstimateStream, frame_indices: Sequence[int]) -> None:
    Path(path).write_text(estimates_text(stream, frame_indices))


# ---------------------------------------------------------------------------
# scenario.json and the full bundle
# ---------------------------------------------------------------------------

def _require(obj: dict, key: str, name: str) -> Any:
    if key not in obj:
        raise SchemaViolation(name, None, f"missing key {key!r}")
    return obj[key]


def _parse_truth(obj: Any, name: str) -> GroundTruth:
    if not isinstance(obj, dict):
        raise SchemaViolation(name, None, "'truth' must be an object")
    try:
        return GroundTruth(
            container_mass=float(_require(obj, "container_mass", name)),
            content=str(_require(obj, "type", name)),
            level=float(_require(obj, "level", name)),
            capacity=float(_require(obj, "capacity", name)),
            opaque=bool(obj.get("opaque", False)),
        )
    except (TypeError, ValueError) as exc:
        raise InvariantViolation(name, None, f"truth: {exc}") from exc


def parse_transition(obj: Any, name: str) -> np.ndarray:
    try:
        mat = np.asarray(obj, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaViolation(name, None, f"transition matrix: {exc}") from exc
    n = len(CLASSES)
    if mat.shape != (n, n):
        raise SchemaViolation(name, None, f"transition matrix must be {n}x{n}")
    if np.any(mat < 0) or not np.all(np.isfinite(mat)):
        raise InvariantViolation(name, None, "transition matrix entries must be finite and >= 0")
    sums = mat.sum(axis=1)
    bad = np.nonzero(np.abs(sums - 1.0) > PROB_TOL)[0]
    if bad.size:
        raise InvariantViolation(name, None, f"transition row {int(bad[0])} sums to {sums[bad[0]]:.9g}")
    return mat


def parse_scenario(path, param_overrides: Optional[dict] = None) -> HandoverScenario:
    """Load and validate a scenario bundle directory.

    ``param_overrides`` are applied on top of the overrides stored in
    ``scenario.json``.

    Raises:
        MissingFile, SchemaViolation, InvariantViolation and the file-level
        parse errors; never returns a partially populated scenario.
    """
    root = Path(path)
    if not root.is_dir():
        raise MissingFile(str(root))
    for fname in BUNDLE_FILES:
        if not (root / fname).exists():
            raise MissingFile(fname)

    name = "scenario.json"
    try:
        meta = json.loads((root / name).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(name, exc.lineno, exc.msg) from exc
    if not isinstance(meta, dict):
        raise SchemaViolation(name, None, "top level must be an object")

    truth = _parse_truth(_require(meta, "truth", name), name)
    overrides = dict(meta.get("params", {}) or {})
    effective = dict(overrides)
    if "delivery_radius" in meta:
        effective.setdefault("eta", meta["delivery_radius"])
    try:
        params = from_mapping(effective)
        if param_overrides:
            params = with_overrides(params, param_overrides)
    except (TypeError, ValueError) as exc:
        raise InvariantViolation(name, None, f"params: {exc}") from exc
    try:
        densities = DensityTable(**meta.get("densities", {}))
    except (TypeError, ValueError) as exc:
        raise InvariantViolation(name, None, f"densities: {exc}") from exc
    target = np.asarray(_require(meta, "delivery_target", name), dtype=np.float64)
    if target.shape != (3,) or not np.all(np.isfinite(target)):
        raise SchemaViolation(name, None, "delivery_target must be three finite numbers")
    transition = None
    if meta.get("transition_matrix") is not None:
        transition = parse_transition(meta["transition_matrix"], name)

    frames = parse_trace(root / "trace.csv")
    cams = (parse_calibration(root / "calib_0.txt"), parse_calibration(root / "calib_1.txt"))
    masks = (parse_mask(root / "mask_0.pgm"), parse_mask(root / "mask_1.pgm"))
    for view, (cam, mask) in enumerate(zip(cams, masks)):
        if (mask.width, mask.height) != (cam.image_width, cam.image_height):
            raise InvariantViolation(
                f"mask_{view}.pgm", None,
                f"mask is {mask.width}x{mask.height}, camera is {cam.image_width}x{cam.image_height}",
            )
    indices = [f.frame_index for f in frames]
    estimates = parse_estimates(root / "estimates.csv", indices)

    shape_frame = int(meta.get("shape_frame", indices[0]))
    if shape_frame not in indices:
        raise SchemaViolation(name, None, f"shape_frame {shape_frame} does not exist in trace.csv")

    return HandoverScenario(
        frames=frames,
        cameras=cams,
        shape_masks=masks,
        estimates=estimates,
        truth=truth,
        params=params,
        delivery_target=target,
        delivery_radius=params.eta,
        densities=densities,
        scenario_id=str(meta.get("id", root.name)),
        container=str(meta.get("container", "C?")),
        shape_frame=shape_frame,
        transition=transition,
        overrides=overrides,
    )


def scenario_json(scenario: HandoverScenario) -> dict[str, Any]:
    out: dict[str, Any] = {
        "id": scenario.scenario_id,
        "container": scenario.container,
        "truth": scenario.truth.to_dict(),
        "params": dict(scenario.overrides),
        "densities": scenario.densities.to_dict(),
        "delivery_target": [float(v) for v in scenario.delivery_target],
        "delivery_radius": float(scenario.delivery_radius),
        "shape_frame": scenario.shape_frame,
    }
    if scenario.transition is not None:
        out["transition_matrix"] = scenario.transition.tolist()
    return out


def write_scenario(path, scenario: HandoverScenario) -> Path:
    """Write ``scenario`` as a bundle directory (created if needed)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / "scenario.json").write_text(json.dumps(scenario_json(scenario), indent=2) + "\n")
    write_trace(root / "trace.csv", scenario.frames)
    for view in (0, 1):
        write_calibration(root / f"calib_{view}.txt", scenario.cameras[view])
        write_mask(root / f"mask_{view}.pgm", scenario.shape_masks[view])
    write_estimates(root / "estimates.csv", scenario.estimates, [f.frame_index for f in scenario.frames])
    return root
