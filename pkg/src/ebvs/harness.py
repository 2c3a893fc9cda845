"""Closed-loop trials: scene simulation, perception, strategy and control
wired together on a fixed control tick, plus suite summaries.

A trial is a pure function of its :class:`TrialConfig`. Perception runs on
every event; the strategy and controller run once per tick and the commanded
twist is integrated over the following tick.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .corners import HarrisConfig
from .events import empty_events
from .eventio import format_events, read_events
from .pipeline import HeatmapConfig, Perception
from .scene import (CAMERA_BOUNDS, DEFAULT_CAMERA_HEIGHT, DEFAULT_FOCAL, CameraModel, CameraPose,
                    SHAPES, EventGenConfig, EventGenerator, SceneObject, apply_velocity,
                    make_shape)
from .servo import ConfigError, ControllerConfig
from .strategy import Phase, StrategyConfig, SwitchingStrategy
from .tracking import TrackerConfig

log = logging.getLogger(__name__)

# A grasp counts as successful within 5 px (25 mm at the workspace plane).
GRASP_SUCCESS_PX = 5.0


@dataclass
class SceneConfig:
    shape: str = "rectangle"
    size: float = 0.15
    x: float = 0.6
    y: float = 0.5
    yaw: float = 0.0
    height: float = 0.05
    present: bool = True
    # Explicit CCW polygon [[x, y], ...] in meters; overrides shape/size/pose.
    vertices: list | None = None

    def build(self) -> SceneObject:
        if self.vertices is not None:
            return SceneObject(np.asarray(self.vertices, dtype=float), self.height, self.shape)
        return make_shape(self.shape, self.size, (self.x, self.y), self.yaw, self.height)


@dataclass
class CameraConfig:
    focal: float = DEFAULT_FOCAL
    width: int = 240
    height: int = 180
    x: float = 0.6
    y: float = 0.5
    z: float = DEFAULT_CAMERA_HEIGHT
    yaw: float = 0.0
    bounds: list = field(default_factory=lambda: list(CAMERA_BOUNDS))

    def __post_init__(self):
        if len(self.bounds) != 4 or self.bounds[0] >= self.bounds[1] or self.bounds[2] >= self.bounds[3]:
            raise ValueError("bounds must be [x_min, x_max, y_min, y_max]")

    def clip(self, pose: CameraPose) -> CameraPose:
        x0, x1, y0, y1 = self.bounds
        return CameraPose(min(max(pose.x, x0), x1), min(max(pose.y, y0), y1), pose.z, pose.yaw)

    def model(self) -> CameraModel:
        return CameraModel(self.focal, (self.width - 1) / 2.0, (self.height - 1) / 2.0,
                           self.width, self.height)

    def pose(self) -> CameraPose:
        return CameraPose(self.x, self.y, self.z, self.yaw)


_BLOCKS = {
    "scene": SceneConfig,
    "camera": CameraConfig,
    "events": EventGenConfig,
    "controller": ControllerConfig,
    "detector": HarrisConfig,
    "heatmap": HeatmapConfig,
    "tracker": TrackerConfig,
    "strategy": StrategyConfig,
}
# Config files may use the control-law symbol for the gain.
_ALIASES = {"controller": {"lambda": "gain"}}


def _block_to_dict(obj) -> dict[str, Any]:
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj) if f.init}


def _block_from_dict(name: str, data: dict | None):
    cls = _BLOCKS[name]
    data = dict(data or {})
    for alias, key in _ALIASES.get(name, {}).items():
        if alias in data:
            data[key] = data.pop(alias)
    known = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad '{name}' block: {exc}") from exc


@dataclass
class TrialConfig:
    name: str = "trial"
    seed: int = 0
    max_sim_time: float = 30.0
    tick_hz: float = 100.0
    scene: SceneConfig = field(default_factory=SceneConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    events: EventGenConfig = field(default_factory=EventGenConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    detector: HarrisConfig = field(default_factory=HarrisConfig)
    heatmap: HeatmapConfig = field(default_factory=HeatmapConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    output_dir: str | None = None

    def __post_init__(self):
        if self.max_sim_time <= 0 or self.tick_hz <= 0:
            raise ConfigError("max_sim_time and tick_hz must be positive")
        if round(1e6 / self.tick_hz) * self.tick_hz != 1e6:
            raise ConfigError("tick_hz must divide one second into whole microseconds")

    @property
    def tick_us(self) -> int:
        return round(1e6 / self.tick_hz)

    def to_dict(self) -> dict[str, Any]:
        out = {k: getattr(self, k) for k in ("name", "seed", "max_sim_time", "tick_hz", "output_dir")}
        for name in _BLOCKS:
            out[name] = _block_to_dict(getattr(self, name))
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TrialConfig:
        if not isinstance(data, dict):
            raise ConfigError("trial config must be a mapping")
        data = dict(data)
        kw = {name: _block_from_dict(name, data.pop(name, None)) for name in _BLOCKS}
        top = {"name", "seed", "max_sim_time", "tick_hz", "output_dir"}
        unknown = set(data) - top
        if unknown:
            raise ConfigError(f"unknown trial keys: {sorted(unknown)}")
        try:
            return cls(**data, **kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def replace(self, **changes) -> TrialConfig:
        return TrialConfig.from_dict({**self.to_dict(), **changes})


def load_config(path: str | Path) -> TrialConfig:
    """Read a trial config from YAML or JSON."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return TrialConfig.from_dict(data or {})


def dump_config(config: TrialConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)


@dataclass
class TrialMetrics:
    name: str
    shape: str
    seed: int
    success: bool
    final_phase: str
    e_grasp_px: float  # NaN when there is no object to grasp
    e_grasp_mm: float
    n_switch: int
    sim_time: float
    phase_durations: dict[str, float]
    n_events: int
    n_corners: int
    align_error_deg: float = math.nan
    reason: str = ""

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class TrialResult:
    metrics: TrialMetrics
    perception_trace: str
    tracker_trace: str
    phase_log: str
    events: np.ndarray | None = None


def _grasp_error(scene_obj, pose: CameraPose, mm_per_px: float) -> tuple[float, float]:
    c = scene_obj.true_centroid
    mm = 1000.0 * math.hypot(pose.x - c[0], pose.y - c[1])
    return mm / mm_per_px, mm


def _align_error(scene_obj, pose: CameraPose) -> float:
    """Angle in degrees between the image x axis and the closest
    centroid-to-vertex line among the farthest vertices, modulo a half turn.

    Regular shapes have several equally far vertices; any of them is a valid
    alignment.
    """
    v = scene_obj.vertices - scene_obj.true_centroid
    r = np.hypot(v[:, 0], v[:, 1])
    best = math.inf
    for i in np.nonzero(r >= 0.99 * r.max())[0]:
        image = -(pose.yaw + math.atan2(v[i, 1], v[i, 0]))
        best = min(best, abs(math.degrees(math.remainder(image, math.pi))))
    return best


def run_trial(config: TrialConfig, events: np.ndarray | None = None,
              record: bool = False) -> TrialResult:
    """Run one closed-loop trial.

    With ``events`` given, the recorded stream replaces live generation; the
    chunk for each tick is the recorded events inside that tick.
    """
    cam_cfg, sc = config.camera, config.scene
    camera = cam_cfg.model()
    scene = []
    if sc.present:
        scene.append(sc.build())
    ev_cfg = dataclasses.replace(config.events, seed=config.seed)
    generator = EventGenerator(scene, camera, ev_cfg)
    perception = Perception(camera.width, camera.height, config.detector, config.heatmap,
                            config.tracker)
    tick_us = config.tick_us
    dt = tick_us * 1e-6
    strategy = SwitchingStrategy(config.strategy, config.controller, camera.f,
                                 cam_cfg.z, (camera.width, camera.height),
                                 camera.center, seed=config.seed + 1, tick_s=dt)
    mm_per_px = 1000.0 * cam_cfg.z / camera.f
    pose = cam_cfg.pose()
    n_ticks = int(round(config.max_sim_time * config.tick_hz))
    recorded = [] if record else None
    perception_rows = ["t_us,events,corners,peaks,centroid_x,centroid_y,mode"]
    tracker_rows = ["t_us,mode,strikes,corners...,centroid_x,centroid_y"]
    replay_idx = 0
    if events is not None:
        replay_t = np.asarray(events["t"], dtype=np.int64)

    t = 0
    grasp_pose = None
    for _ in range(n_ticks):
        directive = strategy.step(t, perception.tracker, perception.peaks, pose.yaw)
        if directive.target is not None:
            perception.stamp(directive.target)
        if directive.grasp:
            grasp_pose = pose
            break
        new_pose = cam_cfg.clip(apply_velocity(pose, directive.velocity, dt))
        t1 = t + tick_us
        if events is None:
            chunk = generator.step(pose, new_pose, t, t1)
        else:
            j = int(np.searchsorted(replay_t, t1, side="left"))
            chunk = events[replay_idx:j]
            replay_idx = j
        if recorded is not None and len(chunk):
            recorded.append(chunk)
        perception.process(chunk)
        perception.advance(t1)
        pose, t = new_pose, t1

        tracker = perception.tracker
        if tracker.validation_due(t):
            tracker.validate(perception.peaks(), t)
            tracker_rows.append(tracker.trace_row(t))
        c = tracker.centroid if tracker.tracking else None
        peaks = perception._peaks
        perception_rows.append(",".join([
            str(t), str(len(chunk)), str(perception.n_corners),
            "" if peaks is None else str(len(peaks)),
            "" if c is None else f"{c[0]:.6f}", "" if c is None else f"{c[1]:.6f}",
            tracker.mode.value]))

    final = strategy.state.phase
    done = final is Phase.DONE and grasp_pose is not None
    if scene:
        e_px, e_mm = _grasp_error(scene[0], grasp_pose or pose, mm_per_px)
        align = _align_error(scene[0], grasp_pose or pose)
    else:
        e_px = e_mm = align = math.nan
    success = done and e_px <= GRASP_SUCCESS_PX
    if done:
        reason = "" if success else "grasp error above the success radius"
    else:
        reason = f"timeout in {final.value} after {config.max_sim_time:g} s"

    # Total time spent in each phase, summed over visits.
    durations: dict[str, float] = {}
    visits = [(0, Phase.EXPLORE.value)] + [(tt, to) for tt, _, to, _ in strategy.log]
    for (t0, ph), (t1, _) in zip(visits, visits[1:] + [(t, None)]):
        durations[ph] = round(durations.get(ph, 0.0) + (t1 - t0) * 1e-6, 6)

    metrics = TrialMetrics(
        name=config.name, shape=sc.shape if sc.present else "none", seed=config.seed,
        success=success, final_phase=final.value, e_grasp_px=e_px, e_grasp_mm=e_mm,
        n_switch=perception.tracker.reversions, sim_time=round(t * 1e-6, 6),
        phase_durations=durations, n_events=perception.n_events, n_corners=perception.n_corners,
        align_error_deg=align, reason=reason)
    result = TrialResult(metrics, "\n".join(perception_rows) + "\n",
                         "\n".join(tracker_rows) + "\n", strategy.phase_log_csv(),
                         np.concatenate(recorded) if recorded else (empty_events() if record else None))
    if config.output_dir:
        write_outputs(result, config, Path(config.output_dir))
    return result


def write_outputs(result: TrialResult, config: TrialConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    stem = config.name
    (out / f"{stem}_metrics.json").write_text(json.dumps(result.metrics.to_dict(), indent=2) + "\n")
    (out / f"{stem}_perception.csv").write_text(result.perception_trace)
    (out / f"{stem}_tracker.csv").write_text(result.tracker_trace)
    (out / f"{stem}_phases.csv").write_text(result.phase_log)


def record_events(result: TrialResult, config: TrialConfig) -> str:
    ev = result.events if result.events is not None else empty_events()
    return format_events(ev, config.camera.width, config.camera.height)


def replay_trial(config: TrialConfig, events_path: str | Path) -> TrialResult:
    events, width, height = read_events(events_path)
    if (width, height) != (config.camera.width, config.camera.height):
        raise ConfigError(f"event file is {width}x{height}, config expects "
                          f"{config.camera.width}x{config.camera.height}")
    return run_trial(config, events=events)


def run_suite(configs: list[TrialConfig]) -> list[TrialMetrics]:
    if not configs:
        raise ValueError("suite needs at least one trial")
    return [run_trial(c).metrics for c in configs]


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.1f}"


def format_table(metrics: list[TrialMetrics]) -> str:
    """Per-trial rows followed by Average and Max rows for each shape."""
    lines = [f"{'Shape':<10} {'Trial':<16} {'e_grasp (mm)':>12} {'N_switch':>9}  Status"]
    by_shape: dict[str, list[TrialMetrics]] = {}
    for m in metrics:
        by_shape.setdefault(m.shape, []).append(m)
    for shape, ms in by_shape.items():
        for m in ms:
            status = "ok" if m.success else f"FAIL ({m.reason})"
            lines.append(f"{shape:<10} {m.name:<16} {_fmt(m.e_grasp_mm):>12} {m.n_switch:>9}  {status}")
        errs = np.array([m.e_grasp_mm for m in ms], dtype=float)
        sw = np.array([m.n_switch for m in ms], dtype=float)
        if np.all(np.isnan(errs)):
            mean_e = max_e = math.nan
        else:
            mean_e, max_e = float(np.nanmean(errs)), float(np.nanmax(errs))
        lines.append(f"{shape:<10} {'Average':<16} {_fmt(mean_e):>12} {sw.mean():>9.1f}")
        lines.append(f"{shape:<10} {'Max':<16} {_fmt(max_e):>12} {sw.max():>9.0f}")
    return "\n".join(lines) + "\n"


def summary_rows(metrics: list[TrialMetrics]) -> list[dict[str, Any]]:
    keys = ("name", "shape", "seed", "success", "e_grasp_mm", "e_grasp_px", "n_switch", "sim_time")
    return [{k: getattr(m, k) for k in keys} for m in metrics]


def placement_configs(shape: str, n: int, seed: int = 0, **overrides) -> list[TrialConfig]:
    """``n`` trials of ``shape`` at seeded random placements that keep the
    object well inside the starting view."""
    rng = np.random.default_rng([seed, SHAPES.index(shape)])
    out = []
    for i in range(n):
        x = 0.6 + rng.uniform(-0.25, 0.25)
        y = 0.5 + rng.uniform(-0.18, 0.18)
        yaw = rng.uniform(-math.pi, math.pi)
        cfg = TrialConfig(name=f"{shape}-{i + 1}", seed=seed * 1000 + i,
                          scene=SceneConfig(shape=shape, x=float(x), y=float(y), yaw=float(yaw)))
        if overrides:
            cfg = cfg.replace(**{k: ({**cfg.to_dict()[k], **v} if isinstance(v, dict) else v)
                                 for k, v in overrides.items()})
        out.append(cfg)
    return out
