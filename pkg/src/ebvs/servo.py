"""Image-based control law and gripper alignment.

Sign conventions (shared with :mod:`ebvs.scene`): a camera translation of
``+v_x`` along its own x axis moves a static point at depth ``Z`` by
``-f/Z * v_x`` pixels per second along u, so the planar point-feature
interaction matrix is ``L = diag(-f/Z, -f/Z)``. With ``e = f - f*`` the
command ``V = -lambda * pinv(L) @ e`` moves the camera toward the feature
and gives ``de/dt = -lambda * e``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class NoFeatureError(LookupError):
    """No corner or centroid available to act on."""


@dataclass(frozen=True)
class CameraVelocity:
    """Twist in the camera frame: linear ``v`` (m/s) and angular ``w`` (rad/s)."""

    v: tuple[float, float, float] = (0.0, 0.0, 0.0)
    w: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @classmethod
    def planar(cls, vx: float, vy: float, wz: float = 0.0) -> CameraVelocity:
        return cls((float(vx), float(vy), 0.0), (0.0, 0.0, float(wz)))

    @property
    def linear_norm(self) -> float:
        return math.hypot(*self.v)

    @property
    def angular_norm(self) -> float:
        return math.hypot(*self.w)

    def __add__(self, other: CameraVelocity) -> CameraVelocity:
        return CameraVelocity(tuple(a + b for a, b in zip(self.v, other.v)),
                              tuple(a + b for a, b in zip(self.w, other.w)))

    def scaled(self, s: float) -> CameraVelocity:
        return CameraVelocity(tuple(s * a for a in self.v), tuple(s * a for a in self.w))


ZERO_TWIST = CameraVelocity()


@dataclass
class ControllerConfig:
    gain: float = 1.2  # lambda, 1/s
    omega_align: float = 0.5
    align_tolerance_deg: float = 2.0
    v_max: float = 0.25
    w_max: float = 1.0
    depth_z: float | None = None  # None: use the camera height

    def __post_init__(self):
        if self.gain <= 0 or self.omega_align <= 0 or self.v_max <= 0 or self.w_max <= 0:
            raise ConfigError("gain, omega_align and velocity limits must be positive")
        if self.depth_z is not None and self.depth_z <= 0:
            raise ConfigError(f"depth must be positive, got {self.depth_z}")

    @property
    def align_tolerance(self) -> float:
        return math.radians(self.align_tolerance_deg)


def clamp_velocity(vel: CameraVelocity, v_max: float, w_max: float) -> CameraVelocity:
    """Scale linear and angular parts down to their limits, keeping direction."""
    vn, wn = vel.linear_norm, vel.angular_norm
    v = vel.v if vn <= v_max else tuple(a * v_max / vn for a in vel.v)
    w = vel.w if wn <= w_max else tuple(a * w_max / wn for a in vel.w)
    return CameraVelocity(v, w)


@dataclass
class ServoTarget:
    desired: tuple[float, float]
    current: tuple[float, float]

    @property
    def error(self) -> np.ndarray:
        return np.subtract(self.current, self.desired, dtype=float)


@dataclass
class InteractionModel:
    focal: float
    depth_z: float
    gain: float = 1.2
    L: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.depth_z <= 0:
            raise ConfigError(f"depth must be positive, got {self.depth_z}")
        if self.focal <= 0:
            raise ConfigError(f"focal length must be positive, got {self.focal}")
        s = -self.focal / self.depth_z
        self.L = np.array([[s, 0.0], [0.0, s]])

    def pinv(self) -> np.ndarray:
        L = self.L
        if np.linalg.matrix_rank(L) < L.shape[1]:
            log.warning("rank-deficient interaction matrix; using damped least squares")
            mu = 1e-6
            return np.linalg.solve(L.T @ L + mu * np.eye(L.shape[1]), L.T)
        return np.linalg.solve(L.T @ L, L.T)


def compute_velocity(model: InteractionModel, target: ServoTarget) -> CameraVelocity:
    """``V_c = -lambda * L^+ e`` as a planar twist (x/y translation only)."""
    vx, vy = -model.gain * (model.pinv() @ target.error)
    return CameraVelocity.planar(vx, vy)


def wrap_angle(a: float) -> float:
    """Wrap to ``(-pi, pi]``."""
    w = math.remainder(a, 2.0 * math.pi)
    return math.pi if w == -math.pi else w


def farthest_corner(centroid, corners) -> tuple[float, float]:
    pts = np.asarray(corners, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise NoFeatureError("no corners for alignment")
    d2 = (pts[:, 0] - centroid[0]) ** 2 + (pts[:, 1] - centroid[1]) ** 2
    # argmax returns the first maximum; corners arrive in row-major order.
    i = int(np.argmax(d2))
    return float(pts[i, 0]), float(pts[i, 1])


def alignment_angle(centroid, corners) -> float:
    """Angle of the centroid-to-farthest-corner line in the image, in (-pi, pi]."""
    xc, yc = farthest_corner(centroid, corners)
    return wrap_angle(math.atan2(yc - centroid[1], xc - centroid[0]))


def alignment_step(theta_now: float, theta: float, omega: float, dt: float,
                   tolerance: float = math.radians(2.0)) -> tuple[float, bool]:
    """One constant-rate rotation step along the shorter arc.

    Returns ``(yaw_increment, done)``; the increment never overshoots.
    """
    if omega <= 0:
        raise ConfigError("omega must be positive")
    err = wrap_angle(theta - theta_now)
    if abs(err) <= tolerance:
        return 0.0, True
    step = math.copysign(min(omega * dt, abs(err)), err)
    return step, abs(err - step) <= tolerance
