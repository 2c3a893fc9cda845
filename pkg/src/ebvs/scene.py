"""Pinhole camera, planar prism scene and a synthetic event generator.

World frame: the workspace is the plane ``z = 0`` with ``x`` to the right and
``y`` away from the robot; the camera looks straight down. At ``yaw = 0`` the
camera x axis is world ``+x`` and the camera y axis (image v, pointing down
the sensor) is world ``-y``. A point offset by ``d`` along the camera x axis
at depth ``Z`` lands at ``u = cx + f * d / Z``.

Events come from silhouette sweeps: a pixel is "inside" when its center lies
inside the projected top face of an object, and every inside/outside flip
between two trajectory samples emits an event. Edges moving along themselves
flip no pixels, which is exactly why they stay invisible to the sensor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from .events import DEFAULT_HEIGHT, DEFAULT_WIDTH, EVENT_DTYPE, empty_events
from .servo import CameraVelocity

# Reachable camera positions (x_min, x_max, y_min, y_max) in meters: the
# table area over which objects are placed.
CAMERA_BOUNDS = (0.3, 0.9, 0.3, 0.7)
DEFAULT_CAMERA_HEIGHT = 0.6
DEFAULT_FOCAL = 120.0
MM_PER_PX = 1000.0 * DEFAULT_CAMERA_HEIGHT / DEFAULT_FOCAL  # 5 mm at the workspace plane


class BehindCameraError(ValueError):
    """The point's depth in the camera frame is not positive."""


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class CameraModel:
    f: float = DEFAULT_FOCAL
    cx: float = (DEFAULT_WIDTH - 1) / 2.0
    cy: float = (DEFAULT_HEIGHT - 1) / 2.0
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT

    def __post_init__(self):
        if self.f <= 0:
            raise ValueError("focal length must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the sensor")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.f, 0.0, self.cx], [0.0, self.f, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self) -> tuple[float, float]:
        return self.cx, self.cy


@dataclass(frozen=True)
class CameraPose:
    x: float
    y: float
    z: float = DEFAULT_CAMERA_HEIGHT
    yaw: float = 0.0

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def R(self) -> np.ndarray:
        """Camera-to-world rotation; columns are the camera axes in world."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s, 0.0], [-s, -c, 0.0], [0.0, 0.0, -1.0]])

    @property
    def t(self) -> np.ndarray:
        """Translation of the world-to-camera transform ``X_c = R^T X + t``."""
        return -self.R.T @ self.position

    def lerp(self, other: CameraPose, a: float) -> CameraPose:
        return CameraPose(self.x + a * (other.x - self.x), self.y + a * (other.y - self.y),
                          self.z + a * (other.z - self.z), self.yaw + a * (other.yaw - self.yaw))


def project_many(camera: CameraModel, pose: CameraPose, points) -> np.ndarray:
    """Project ``(n, 3)`` world points to ``(n, 2)`` real pixel coordinates."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    pc = (pts - pose.position) @ pose.R
    z = pc[:, 2]
    if np.any(z <= 0):
        raise BehindCameraError("point at or behind the camera plane")
    return np.column_stack([camera.f * pc[:, 0] / z + camera.cx,
                            camera.f * pc[:, 1] / z + camera.cy])


def project(camera: CameraModel, pose: CameraPose, world_point) -> tuple[float, float]:
    u, v = project_many(camera, pose, world_point)[0]
    return float(u), float(v)


def back_project(camera: CameraModel, pose: CameraPose, u: float, v: float,
                 plane_z: float = 0.0) -> np.ndarray:
    """World point on ``z = plane_z`` seen at pixel ``(u, v)``."""
    depth = pose.z - plane_z
    if depth <= 0:
        raise BehindCameraError("plane is not in front of the camera")
    pc = np.array([(u - camera.cx) * depth / camera.f, (v - camera.cy) * depth / camera.f, depth])
    return pose.R @ pc + pose.position


def apply_velocity(pose: CameraPose, twist: CameraVelocity, dt: float) -> CameraPose:
    """Explicit Euler step of a camera-frame twist.

    Only yaw (rotation about the optic axis) is integrated from the angular
    part, so the optic axis stays vertical.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    vw = pose.R @ np.asarray(twist.v, dtype=float)
    return CameraPose(pose.x + vw[0] * dt, pose.y + vw[1] * dt, pose.z + vw[2] * dt,
                      pose.yaw + twist.w[2] * dt)


def _polygon_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


@dataclass(frozen=True)
class SceneObject:
    """Convex prism standing on the workspace; ``vertices`` are CCW in (x, y)."""

    vertices: np.ndarray
    height: float = 0.05
    name: str = "object"

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        object.__setattr__(self, "vertices", v)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("need at least 3 planar vertices")
        if _polygon_area(v) <= 0:
            raise ValueError("vertices must be counterclockwise")
        d = np.roll(v, -1, axis=0) - v
        cross = d[:, 0] * np.roll(d, -1, axis=0)[:, 1] - d[:, 1] * np.roll(d, -1, axis=0)[:, 0]
        if np.any(cross <= 0):
            raise ValueError("polygon must be strictly convex")
        if self.height < 0:
            raise ValueError("height must be non-negative")

    @property
    def true_centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    @property
    def top_face(self) -> np.ndarray:
        """``(n, 3)`` world coordinates of the top face vertices."""
        return np.column_stack([self.vertices, np.full(len(self.vertices), self.height)])

    @property
    def edges(self) -> list[tuple[np.ndarray, np.ndarray]]:
        v = self.top_face
        return [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]


def regular_polygon(n: int, radius: float, center=(0.6, 0.5), yaw: float = 0.0,
                    height: float = 0.05, name: str | None = None) -> SceneObject:
    a = yaw + 2.0 * math.pi * np.arange(n) / n
    verts = np.column_stack([center[0] + radius * np.cos(a), center[1] + radius * np.sin(a)])
    return SceneObject(verts, height, name or f"{n}-gon")


def rectangle(width: float, depth: float, center=(0.6, 0.5), yaw: float = 0.0,
              height: float = 0.05, name: str = "rectangle") -> SceneObject:
    local = np.array([[-width, -depth], [width, -depth], [width, depth], [-width, depth]]) / 2
    c, s = math.cos(yaw), math.sin(yaw)
    verts = local @ np.array([[c, s], [-s, c]]) + np.asarray(center, dtype=float)
    return SceneObject(verts, height, name)


def right_triangle(leg: float, center=(0.6, 0.5), yaw: float = 0.0, height: float = 0.05,
                   name: str = "triangle") -> SceneObject:
    """Right isosceles triangle with its centroid at ``center``."""
    local = np.array([[0.0, 0.0], [leg, 0.0], [0.0, leg]]) - leg / 3.0
    c, s = math.cos(yaw), math.sin(yaw)
    verts = local @ np.array([[c, s], [-s, c]]) + np.asarray(center, dtype=float)
    return SceneObject(verts, height, name)


SHAPES = ("triangle", "rectangle", "pentagon")


def make_shape(shape: str, size: float = 0.15, center=(0.6, 0.5), yaw: float = 0.0,
               height: float = 0.05) -> SceneObject:
    """Objects used in trials; ``size`` is the longest side in meters."""
    if shape == "triangle":
        return regular_polygon(3, size / math.sqrt(3.0), center, yaw + math.pi / 2, height, shape)
    if shape == "rectangle":
        return rectangle(size, size * 2.0 / 3.0, center, yaw, height, shape)
    if shape == "pentagon":
        side = size * 0.65
        return regular_polygon(5, side / (2 * math.sin(math.pi / 5)), center,
                               yaw + math.pi / 2, height, shape)
    raise ValueError(f"unknown shape {shape!r}; expected one of {SHAPES}")


@dataclass
class EventGenConfig:
    crossings_per_pixel: int = 1
    noise_rate: float = 0.0  # events/s over the whole sensor
    jitter_sigma: float = 0.0  # us
    seed: int = 0
    substep_us: int = 1000

    def __post_init__(self):
        if self.crossings_per_pixel < 0 or self.noise_rate < 0 or self.jitter_sigma < 0:
            raise ValueError("event generator rates must be non-negative")
        if self.substep_us <= 0:
            raise ValueError("substep must be positive")


@njit(cache=True)
def _project_planes(faces, starts, x, y, z, yaw, f, cx, cy, img, normals, offsets):
    c = math.cos(yaw)
    s = math.sin(yaw)
    for i in range(faces.shape[0]):
        dx = faces[i, 0] - x
        dy = faces[i, 1] - y
        dz = faces[i, 2] - z
        xc = c * dx - s * dy
        yc = -s * dx - c * dy
        zc = -dz
        if zc <= 0.0:
            return False
        img[i, 0] = f * xc / zc + cx
        img[i, 1] = f * yc / zc + cy
    for k in range(starts.shape[0] - 1):
        a, b = starts[k], starts[k + 1]
        area = 0.0
        for i in range(a, b):
            j = a + (i - a + 1) % (b - a)
            area += img[i, 0] * img[j, 1] - img[j, 0] * img[i, 1]
        sign = 1.0 if area > 0.0 else -1.0
        for i in range(a, b):
            j = a + (i - a + 1) % (b - a)
            nx = sign * (img[j, 1] - img[i, 1])
            ny = -sign * (img[j, 0] - img[i, 0])
            norm = math.sqrt(nx * nx + ny * ny)
            nx /= norm
            ny /= norm
            normals[i, 0] = nx
            normals[i, 1] = ny
            offsets[i] = nx * img[i, 0] + ny * img[i, 1]
    return True


@njit(cache=True)
def _level(px, py, normals, offsets, starts):
    # Union of convex polygons: min over objects of max over half-planes.
    best = np.inf
    for k in range(starts.shape[0] - 1):
        h = -np.inf
        for i in range(starts[k], starts[k + 1]):
            val = normals[i, 0] * px + normals[i, 1] * py - offsets[i]
            if val > h:
                h = val
        if h < best:
            best = h
    return best


@njit(cache=True)
def _sweep(faces, starts, poses, times, f, cx, cy, width, height, out_t, out_u, out_v, out_p):
    """Silhouette flips for consecutive pose samples; returns the event count,
    or -1 if a vertex ends up behind the camera."""
    nv = faces.shape[0]
    img0 = np.empty((nv, 2))
    img1 = np.empty((nv, 2))
    n0 = np.empty((nv, 2))
    n1 = np.empty((nv, 2))
    c0 = np.empty(nv)
    c1 = np.empty(nv)
    if not _project_planes(faces, starts, poses[0, 0], poses[0, 1], poses[0, 2], poses[0, 3],
                           f, cx, cy, img0, n0, c0):
        return -1
    m = 0
    for k in range(1, poses.shape[0]):
        if not _project_planes(faces, starts, poses[k, 0], poses[k, 1], poses[k, 2],
                               poses[k, 3], f, cx, cy, img1, n1, c1):
            return -1
        t0 = times[k - 1]
        span = times[k] - t0
        u_lo = width
        u_hi = -1
        v_lo = height
        v_hi = -1
        for i in range(nv):
            for img in (img0, img1):
                lo = int(math.floor(img[i, 0])) - 1
                hi = int(math.ceil(img[i, 0])) + 1
                u_lo = min(u_lo, lo)
                u_hi = max(u_hi, hi)
                lo = int(math.floor(img[i, 1])) - 1
                hi = int(math.ceil(img[i, 1])) + 1
                v_lo = min(v_lo, lo)
                v_hi = max(v_hi, hi)
        u_lo = max(u_lo, 0)
        v_lo = max(v_lo, 0)
        u_hi = min(u_hi, width - 1)
        v_hi = min(v_hi, height - 1)
        for v in range(v_lo, v_hi + 1):
            for u in range(u_lo, u_hi + 1):
                h0 = _level(u, v, n0, c0, starts)
                h1 = _level(u, v, n1, c1, starts)
                in0 = h0 < 0.0
                in1 = h1 < 0.0
                if in0 == in1:
                    continue
                if m >= out_t.shape[0]:
                    return -2
                dt = int(math.floor(h0 / (h0 - h1) * span))
                out_t[m] = t0 + min(max(dt, 0), span - 1)
                out_u[m] = u
                out_v[m] = v
                out_p[m] = 1 if in1 else -1
                m += 1
        img0, img1 = img1, img0
        n0, n1 = n1, n0
        c0, c1 = c1, c0
    return m


class EventGenerator:
    """Stateful generator for closed-loop use: call :meth:`step` per interval."""

    def __init__(self, scene: Sequence[SceneObject], camera: CameraModel,
                 config: EventGenConfig | None = None):
        self.scene = list(scene)
        self.camera = camera
        self.config = config or EventGenConfig()
        self.rng = np.random.default_rng(self.config.seed)
        counts = [len(o.vertices) for o in self.scene]
        self._starts = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self._faces = (np.ascontiguousarray(np.concatenate([o.top_face for o in self.scene]))
                       if self.scene else np.zeros((0, 3)))
        self._cap = 4096

    def _silhouette_events(self, poses: np.ndarray, times: np.ndarray) -> np.ndarray:
        cam = self.camera
        while True:
            buf = [np.empty(self._cap, np.int64) for _ in range(4)]
            m = _sweep(self._faces, self._starts, poses, times, float(cam.f), float(cam.cx),
                       float(cam.cy), cam.width, cam.height, *buf)
            if m == -1:
                raise BehindCameraError("object vertex at or behind the camera plane")
            if m != -2:
                break
            self._cap *= 4
        ev = np.zeros(m, dtype=EVENT_DTYPE)
        ev["t"], ev["u"], ev["v"], ev["p"] = (b[:m] for b in buf)
        return ev

    def step(self, pose0: CameraPose, pose1: CameraPose, t0: int, t1: int) -> np.ndarray:
        """Events for the half-open interval ``[t0, t1)`` while the camera
        moves linearly from ``pose0`` to ``pose1``."""
        if t1 <= t0:
            raise TrajectoryError(f"non-increasing trajectory times {t0} -> {t1}")
        n_sub = max(1, -(-(t1 - t0) // self.config.substep_us))
        a = np.arange(n_sub + 1) / n_sub
        p0 = np.array([pose0.x, pose0.y, pose0.z, pose0.yaw])
        p1 = np.array([pose1.x, pose1.y, pose1.z, pose1.yaw])
        return self._emit(p0 + a[:, None] * (p1 - p0), t0 + (t1 - t0) * np.arange(n_sub + 1) // n_sub)

    def _emit(self, poses: np.ndarray, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=np.int64)
        if np.any(np.diff(times) <= 0):
            raise TrajectoryError("trajectory times must be strictly increasing")
        parts = []
        if self.scene:
            ev = self._silhouette_events(np.ascontiguousarray(poses, dtype=float), times)
            k = self.config.crossings_per_pixel
            if k != 1:
                ev = np.repeat(ev, k)
            if self.config.jitter_sigma > 0 and len(ev):
                # Keep each event inside its own sample interval.
                seg = np.searchsorted(times, ev["t"], side="right") - 1
                jit = np.rint(self.rng.normal(0.0, self.config.jitter_sigma, len(ev))).astype(np.int64)
                ev["t"] = np.clip(ev["t"] + jit, times[seg], times[seg + 1] - 1)
            if len(ev):
                parts.append(ev)
        rate = self.config.noise_rate
        if rate > 0:
            cam = self.camera
            t0, t1 = int(times[0]), int(times[-1])
            n = int(self.rng.poisson(rate * (t1 - t0) * 1e-6))
            if n:
                noise = np.zeros(n, dtype=EVENT_DTYPE)
                noise["t"] = self.rng.integers(t0, t1, n)
                noise["u"] = self.rng.integers(0, cam.width, n)
                noise["v"] = self.rng.integers(0, cam.height, n)
                noise["p"] = self.rng.choice(np.array([-1, 1], np.int8), n)
                parts.append(noise)
        if not parts:
            return empty_events()
        ev = np.concatenate(parts) if len(parts) > 1 else parts[0]
        return ev[np.lexsort((ev["u"], ev["v"], ev["t"]))]


def generate_events(scene: Sequence[SceneObject], camera: CameraModel,
                    trajectory: Iterable[tuple[int, CameraPose]],
                    config: EventGenConfig | None = None) -> np.ndarray:
    """Event stream for a time-sampled camera path ``[(t_us, pose), ...]``.

    Samples are used as given; callers keep them at 1 ms or finer.
    """
    traj = list(trajectory)
    if len(traj) < 2:
        return empty_events()
    times = np.array([int(t) for t, _ in traj], dtype=np.int64)
    poses = np.array([[p.x, p.y, p.z, p.yaw] for _, p in traj], dtype=float)
    return EventGenerator(scene, camera, config)._emit(poses, times)


def linear_trajectory(start: CameraPose, velocity_xy: tuple[float, float], duration_s: float,
                      rate_hz: float = 1000.0, t0_us: int = 0) -> list[tuple[int, CameraPose]]:
    """World-frame constant-velocity path sampled at ``rate_hz``."""
    n = int(round(duration_s * rate_hz))
    out = []
    for i in range(n + 1):
        s = i / rate_hz
        out.append((t0_us + int(round(s * 1e6)),
                    CameraPose(start.x + velocity_xy[0] * s, start.y + velocity_xy[1] * s,
                               start.z, start.yaw)))
    return out


def circular_trajectory(center: CameraPose, radius: float, period_s: float, duration_s: float,
                        rate_hz: float = 1000.0, t0_us: int = 0) -> list[tuple[int, CameraPose]]:
    """Small circular jitter of the camera about ``center``."""
    n = int(round(duration_s * rate_hz))
    out = []
    for i in range(n + 1):
        s = i / rate_hz
        a = 2.0 * math.pi * s / period_s
        out.append((t0_us + int(round(s * 1e6)),
                    CameraPose(center.x + radius * math.cos(a), center.y + radius * math.sin(a),
                               center.z, center.yaw)))
    return out
