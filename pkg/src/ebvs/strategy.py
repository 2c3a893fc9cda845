"""Switching strategy: explore toward random virtual targets until the object
centroid is seen consistently, then reach it, align the gripper and grasp.

Target selection follows a three-case rule on the contiguity count ``j`` of
recent centroid estimates::

    P = p_vr   if j < C_th
    P = p_voc  if j >= C_th
    P = p_va   if j >= C_th and |p_voc - p_cc| <= eps

Phases only move forward, except that losing track while reaching sends the
machine back to exploring.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .events import DEFAULT_HEIGHT, DEFAULT_WIDTH, VirtualEvent, VirtualKind
from .heatmap import PeakSet, compute_centroid
from .servo import (ZERO_TWIST, CameraVelocity, ControllerConfig, InteractionModel, ServoTarget,
                    alignment_angle, alignment_step, clamp_velocity, compute_velocity)
from .tracking import TrackedFeatureSet


class Phase(enum.Enum):
    EXPLORE = "explore"
    REACH = "reach"
    ALIGN = "align"
    GRASP = "grasp"
    DONE = "done"


@dataclass
class StrategyConfig:
    contiguity_threshold: int = 3  # C_th
    contiguity_radius: float = 3.0
    contiguity_timeout_s: float = 0.3
    reach_tolerance: float = 2.0  # eps, px
    target_margin: float = 0.1  # per side; targets fall in the central 80%
    target_stale_s: float = 2.0
    min_corners: int = 3

    def __post_init__(self):
        if self.contiguity_threshold < 1:
            raise ValueError("contiguity_threshold must be >= 1")
        if not 0.0 <= self.target_margin < 0.5:
            raise ValueError("target_margin must be in [0, 0.5)")


def select_target(count: int, centroid: tuple[float, float] | None, p_cc: tuple[float, float],
                  c_th: int, eps: float) -> VirtualKind:
    """The three-case target rule."""
    if count < c_th or centroid is None:
        return VirtualKind.RANDOM_TARGET
    if math.hypot(centroid[0] - p_cc[0], centroid[1] - p_cc[1]) <= eps:
        return VirtualKind.ALIGNMENT_TARGET
    return VirtualKind.OBJECT_CENTROID


@dataclass
class ServoState:
    phase: Phase = Phase.EXPLORE
    target: VirtualEvent | None = None
    contiguity_count: int = 0
    last_centroid: tuple[float, float, int] | None = None  # (x, y, t_us)
    last_peaks: PeakSet | None = None
    target_spawned: int = 0
    align_yaw: float | None = None
    n_switch: int = 0
    clock: int = 0
    last_velocity: CameraVelocity = ZERO_TWIST
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0), repr=False)

    @classmethod
    def seeded(cls, seed: int) -> ServoState:
        return cls(rng=np.random.default_rng(seed))


@dataclass(frozen=True)
class Directive:
    """What the strategy asks of the arm for the next control tick."""

    velocity: CameraVelocity
    target: VirtualEvent | None
    grasp: bool = False


def target_box(bounds: tuple[int, int], margin: float) -> tuple[int, int, int, int]:
    """Half-open pixel box ``[u0, u1) x [v0, v1)`` left after the margin."""
    w, h = bounds
    return (math.ceil(margin * w), math.floor((1 - margin) * w),
            math.ceil(margin * h), math.floor((1 - margin) * h))


def spawn_random_target(state: ServoState, bounds: tuple[int, int] = (DEFAULT_WIDTH, DEFAULT_HEIGHT),
                        t: int | None = None, margin: float = 0.1) -> VirtualEvent:
    u0, u1, v0, v1 = target_box(bounds, margin)
    u = int(state.rng.integers(u0, u1))
    v = int(state.rng.integers(v0, v1))
    t = state.clock if t is None else t
    state.target = VirtualEvent(float(u), float(v), t, VirtualKind.RANDOM_TARGET)
    state.target_spawned = t
    return state.target


def update_contiguity(state: ServoState, centroid: tuple[float, float] | None, t: int,
                      config: StrategyConfig | None = None) -> ServoState:
    """Count consecutive centroid estimates lying within the contiguity radius."""
    config = config or StrategyConfig()
    timeout = round(config.contiguity_timeout_s * 1e6)
    last = state.last_centroid
    if centroid is None:
        if last is not None and t - last[2] > timeout:
            state.contiguity_count = 0
            state.last_centroid = None
        return state
    if last is None or t - last[2] > timeout:
        state.contiguity_count = 0
    elif math.hypot(centroid[0] - last[0], centroid[1] - last[1]) <= config.contiguity_radius:
        state.contiguity_count += 1
    else:
        state.contiguity_count = 0
    state.last_centroid = (float(centroid[0]), float(centroid[1]), t)
    return state


def gripper_angle(theta: float) -> float:
    """Fold an image angle into ``(-pi/2, pi/2]``: a two-finger gripper is
    symmetric under a half turn."""
    a = math.remainder(theta, math.pi)
    return math.pi / 2 if a == -math.pi / 2 else a


class SwitchingStrategy:
    """The phase machine, stepped once per control tick."""

    def __init__(self, config: StrategyConfig | None = None,
                 controller: ControllerConfig | None = None, focal: float = 120.0,
                 depth_z: float = 0.6, bounds: tuple[int, int] = (DEFAULT_WIDTH, DEFAULT_HEIGHT),
                 p_cc: tuple[float, float] | None = None, seed: int = 0, tick_s: float = 0.01):
        self.config = config or StrategyConfig()
        self.controller = controller or ControllerConfig()
        self.model = InteractionModel(focal, self.controller.depth_z or depth_z, self.controller.gain)
        self.bounds = bounds
        self.p_cc = p_cc if p_cc is not None else ((bounds[0] - 1) / 2.0, (bounds[1] - 1) / 2.0)
        self.tick_s = tick_s
        self.state = ServoState.seeded(seed)
        self.log: list[tuple[int, str, str, str]] = []

    def _goto(self, phase: Phase, t: int, reason: str) -> None:
        s = self.state
        self.log.append((t, s.phase.value, phase.value, reason))
        s.phase = phase

    def _servo_to(self, point: tuple[float, float]) -> CameraVelocity:
        vel = compute_velocity(self.model, ServoTarget(self.p_cc, point))
        return clamp_velocity(vel, self.controller.v_max, self.controller.w_max)

    def _explore(self, t: int) -> CameraVelocity:
        s, cfg = self.state, self.config
        if s.target is None or s.target.kind is not VirtualKind.RANDOM_TARGET:
            spawn_random_target(s, self.bounds, t, cfg.target_margin)
        else:
            # The target is anchored to the scene: it drifts as the camera moves.
            L = self.model.L
            du, dv = L @ np.array(s.last_velocity.v[:2]) * self.tick_s
            s.target = VirtualEvent(s.target.u + du, s.target.v + dv, t, VirtualKind.RANDOM_TARGET)
            reached = math.hypot(s.target.u - self.p_cc[0], s.target.v - self.p_cc[1]) <= cfg.reach_tolerance
            stale = t - s.target_spawned >= round(cfg.target_stale_s * 1e6)
            if reached or stale:
                spawn_random_target(s, self.bounds, t, cfg.target_margin)
        return self._servo_to((s.target.u, s.target.v))

    def _regress(self, tracker: TrackedFeatureSet, t: int, reason: str) -> None:
        s = self.state
        if tracker.tracking:
            tracker.revert()
        s.n_switch += 1
        s.contiguity_count = 0
        s.last_centroid = None
        s.target = None
        self._goto(Phase.EXPLORE, t, reason)

    def _start_align(self, tracker: TrackedFeatureSet, yaw: float, t: int) -> None:
        s = self.state
        centroid = tracker.centroid
        theta = gripper_angle(alignment_angle(centroid, tracker.corners))
        # Image angles turn opposite to camera yaw, so yaw by +theta to zero them.
        s.align_yaw = yaw + theta
        r = float(np.max(np.hypot(*(tracker.corners - np.array(centroid)).T)))
        s.target = VirtualEvent(self.p_cc[0] + r, self.p_cc[1], t, VirtualKind.ALIGNMENT_TARGET)
        self._goto(Phase.ALIGN, t, "centered")

    def step(self, t: int, tracker: TrackedFeatureSet, detect: Callable[[], PeakSet],
             yaw: float = 0.0) -> Directive:
        """Advance one tick. ``detect`` returns the current heat-map peaks and
        is only called while exploring."""
        s, cfg = self.state, self.config
        s.clock = t
        vel = ZERO_TWIST
        grasp = False

        if s.phase is Phase.REACH and not tracker.tracking:
            self._regress(tracker, t, "tracking_lost")

        if s.phase is Phase.EXPLORE:
            peaks = detect()
            centroid = None
            if len(peaks) >= cfg.min_corners:
                centroid = compute_centroid(peaks)
                s.last_peaks = peaks
            update_contiguity(s, centroid, t, cfg)
            kind = self._select()
            if kind is VirtualKind.RANDOM_TARGET:
                vel = self._explore(t)
            else:
                tracker.seed(s.last_peaks, t)
                if kind is VirtualKind.OBJECT_CENTROID:
                    self._goto(Phase.REACH, t, "contiguous")
                else:
                    self._start_align(tracker, yaw, t)
        elif s.phase is Phase.REACH:
            update_contiguity(s, tracker.centroid, t, cfg)
            kind = self._select()
            if kind is VirtualKind.RANDOM_TARGET:
                self._regress(tracker, t, "contiguity_lost")
                vel = self._explore(t)
            elif kind is VirtualKind.ALIGNMENT_TARGET:
                self._start_align(tracker, yaw, t)
        elif s.phase is Phase.ALIGN:
            pass
        elif s.phase is Phase.GRASP:
            grasp = True
            self._goto(Phase.DONE, t, "grasped")

        if s.phase is Phase.REACH:
            c = tracker.centroid
            s.target = VirtualEvent(c[0], c[1], t, VirtualKind.OBJECT_CENTROID)
            vel = self._servo_to(c)
        elif s.phase is Phase.ALIGN:
            inc, done = alignment_step(yaw, s.align_yaw, self.controller.omega_align, self.tick_s,
                                       self.controller.align_tolerance)
            vel = self._servo_to(tracker.centroid) if tracker.tracking else ZERO_TWIST
            vel = CameraVelocity(vel.v, (0.0, 0.0, inc / self.tick_s))
            if done:
                self._goto(Phase.GRASP, t, "aligned")

        s.last_velocity = vel
        return Directive(vel, s.target, grasp)

    def _select(self) -> VirtualKind:
        s, cfg = self.state, self.config
        c = s.last_centroid
        return select_target(s.contiguity_count, None if c is None else c[:2], self.p_cc,
                             cfg.contiguity_threshold, cfg.reach_tolerance)

    def phase_log_csv(self) -> str:
        rows = ["t_us,phase_from,phase_to,reason"]
        rows += [f"{t},{a},{b},{r}" for t, a, b, r in self.log]
        return "\n".join(rows) + "\n"


def step(strategy: SwitchingStrategy, tracker: TrackedFeatureSet, detect: Callable[[], PeakSet],
         t: int, yaw: float = 0.0) -> tuple[ServoState, Directive]:
    directive = strategy.step(t, tracker, detect, yaw)
    return strategy.state, directive
