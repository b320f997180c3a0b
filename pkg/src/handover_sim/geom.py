"""Camera models, two-view triangulation, Kalman filtering, distance queries.

World frame: millimetres, z up, y pointing from the robot base toward the
human.  Points are plain ``(3,)`` float arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, DegenerateProjection, NonFiniteMeasurement, ParallelRays

DEPTH_EPS = 1e-9
PARALLEL_EPS = 1e-6


def as_point(p) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64).reshape(3)
    return arr


@dataclass(frozen=True)
class CameraProjection:
    """Pinhole camera as a 3x4 projection matrix plus the image size."""

    matrix: np.ndarray
    image_width: int
    image_height: int

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 4):
            raise ValueError(f"projection matrix must be 3x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("projection matrix has non-finite entries")
        if abs(np.linalg.det(m[:, :3])) == 0.0:
            raise ValueError("left 3x3 block of the projection matrix is singular")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image dimensions must be positive")
        object.__setattr__(self, "matrix", m)

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        m = self.matrix
        return -np.linalg.solve(m[:, :3], m[:, 3])

    def ray(self, pixel) -> np.ndarray:
        """Direction of the back-projected ray; unit depth along it (w = 1)."""
        u, v = pixel
        return np.linalg.solve(self.matrix[:, :3], np.array([u, v, 1.0]))

    def depth(self, p) -> float:
        """Homogeneous depth w of a world point (positive in front)."""
        return float(self.matrix[2] @ np.append(as_point(p), 1.0))


def look_at_camera(
    eye,
    target,
    focal: float,
    width: int,
    height: int,
    up=(0.0, 0.0, 1.0),
) -> CameraProjection:
    """Build an ideal pinhole camera at ``eye`` looking at ``target``.

    Image rows grow downward; the principal point is the image centre.
    """
    eye = as_point(eye)
    forward = as_point(target) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, as_point(up))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.vstack([right, down, forward])
    k = np.array(
        [[focal, 0.0, width / 2.0], [0.0, focal, height / 2.0], [0.0, 0.0, 1.0]]
    )
    ext = np.hstack([rot, (-rot @ eye)[:, None]])
    return CameraProjection(k @ ext, width, height)


def project(cam: CameraProjection, p) -> tuple[float, float]:
    """Project a world point to pixel coordinates.

    Raises:
        DegenerateProjection: the homogeneous depth is (numerically) zero.
    """
    h = cam.matrix @ np.append(as_point(p), 1.0)
    if abs(h[2]) < DEPTH_EPS:
        raise DegenerateProjection(f"point {p} projects with depth {h[2]:.3g}")
    return float(h[0] / h[2]), float(h[1] / h[2])


def project_many(cam: CameraProjection, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised projection of ``(n, 3)`` points; returns ``u, v, w``."""
    pts = np.asarray(points, dtype=np.float64)
    h = pts @ cam.matrix[:, :3].T + cam.matrix[:, 3]
    w = h[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        return h[:, 0] / w, h[:, 1] / w, w


def triangulate(cam_a: CameraProjection, pixel_a, cam_b: CameraProjection, pixel_b) -> np.ndarray:
    """Midpoint of the shortest segment between two back-projected rays.

    Raises:
        ParallelRays: the rays are closer than 1e-6 rad to parallel.
        BehindCamera: the midpoint is not in front of both cameras.
    """
    c1, c2 = cam_a.center, cam_b.center
    d1, d2 = cam_a.ray(pixel_a), cam_b.ray(pixel_b)
    n1, n2 = np.linalg.norm(d1), np.linalg.norm(d2)
    cross = np.cross(d1 / n1, d2 / n2)
    if np.linalg.norm(cross) < np.sin(PARALLEL_EPS):
        raise ParallelRays("back-projected rays are parallel")

    # Closest points c1 + s*d1 and c2 + t*d2.
    w0 = c1 - c2
    a = d1 @ d1
    b = d1 @ d2
    c = d2 @ d2
    d = d1 @ w0
    e = d2 @ w0
    denom = a * c - b * b
    s = (b * e - c * d) / denom
    t = (a * e - b * d) / denom
    mid = 0.5 * ((c1 + s * d1) + (c2 + t * d2))

    if cam_a.depth(mid) <= 0 or cam_b.depth(mid) <= 0:
        raise BehindCamera(f"triangulated point {mid} is behind a camera")
    return mid


@dataclass(frozen=True)
class KalmanState:
    position: np.ndarray
    velocity: np.ndarray
    covariance: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])


def initial_state(
    measurement,
    position_var: float = 25.0,
    velocity_var: float = 1e6,
) -> KalmanState:
    """Filter state seeded at a first measurement with zero velocity."""
    cov = np.diag([position_var] * 3 + [velocity_var] * 3).astype(np.float64)
    return KalmanState(as_point(measurement).copy(), np.zeros(3), cov)


_EYE3 = np.eye(3)
_EYE6 = np.eye(6)
_AXES = np.arange(3)
_PV = (_AXES, _AXES + 3)  # position-velocity coupling entries
_VP = (_AXES + 3, _AXES)
_VV = (_AXES + 3, _AXES + 3)


def _transition(dt: float) -> np.ndarray:
    f = _EYE6.copy()
    f[_PV] = dt
    return f


def _process_noise(dt: float, q: float) -> np.ndarray:
    # Continuous white-noise acceleration, identical and independent per axis.
    out = np.zeros((6, 6))
    out[_AXES, _AXES] = q * dt**3 / 3.0
    out[_PV] = out[_VP] = q * dt**2 / 2.0
    out[_VV] = q * dt
    return out


def kalman_predict(state: KalmanState, dt: float, q: float) -> KalmanState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if q < 0:
        raise ValueError("process noise must be non-negative")
    f = _transition(dt)
    x = f @ state.vector
    p = f @ state.covariance @ f.T + _process_noise(dt, q)
    p = 0.5 * (p + p.T)
    return KalmanState(x[:3], x[3:], p)


def kalman_update(state: KalmanState, measurement, r: float) -> KalmanState:
    if r < 0:
        raise ValueError("measurement noise must be non-negative")
    z = np.asarray(measurement, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(z)):
        raise NonFiniteMeasurement(f"measurement {z} is not finite")
    p = state.covariance
    s = p[:3, :3] + r * _EYE3
    try:
        k = np.linalg.solve(s, p[:3, :]).T
    except np.linalg.LinAlgError:
        k = p[:, :3] @ np.linalg.pinv(s)
    x = state.vector + k @ (z - state.position)
    i_kh = _EYE6.copy()
    i_kh[:, :3] -= k
    # Joseph form keeps the covariance PSD under round-off.
    p_new = i_kh @ p @ i_kh.T + r * (k @ k.T)
    p_new = 0.5 * (p_new + p_new.T)
    pos = x[:3]
    if r == 0.0:
        pos = z.copy()
        p_new[:3, :] = 0.0
        p_new[:, :3] = 0.0
    return KalmanState(pos, x[3:], p_new)


def kalman_step(state: KalmanState, measurement, dt: float, q: float, r: float) -> KalmanState:
    """One constant-velocity predict/update cycle.

    Each axis is filtered independently with white-noise acceleration of
    spectral density ``q`` (mm^2/s^3) and measurement variance ``r`` (mm^2).
    With ``r == 0`` the returned position equals the measurement exactly.
    """
    z = np.asarray(measurement, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(z)):
        raise NonFiniteMeasurement(f"measurement {z} is not finite")
    return kalman_update(kalman_predict(state, dt, q), z, r)


def closest_point_on_segment(p, a, b) -> np.ndarray:
    p, a, b = as_point(p), as_point(a), as_point(b)
    ab = b - a
    denom = ab @ ab
    if denom == 0.0:
        return a.copy()
    t = np.clip((p - a) @ ab / denom, 0.0, 1.0)
    return a + t * ab


def point_segment_distance(p, seg) -> float:
    """Euclidean distance from ``p`` to the closed segment ``seg = (a, b)``."""
    a, b = seg
    return float(np.linalg.norm(as_point(p) - closest_point_on_segment(p, a, b)))


def points_segment_distance(points: np.ndarray, a, b) -> np.ndarray:
    """Vectorised :func:`point_segment_distance` over ``(n, 3)`` points."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    a, b = as_point(a), as_point(b)
    ab = b - a
    denom = ab @ ab
    if denom == 0.0:
        return np.linalg.norm(pts - a, axis=1)
    t = np.clip((pts - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(pts - (a + t[:, None] * ab), axis=1)
