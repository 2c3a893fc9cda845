"""Event data model and the per-pixel time surfaces.

Three surfaces are kept by the pipeline: the raw surface of active events
(SAE), the surface holding corner events (SACE) and the surface of virtual
events (SAVE). All three share the :class:`TimeSurface` structure.

Timestamps are integer microseconds. A cell that never fired holds
``NEVER`` rather than 0 so that events at ``t = 0`` stay representable.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

NEVER = -1
DEFAULT_WIDTH = 240
DEFAULT_HEIGHT = 180


class BoundsError(ValueError):
    """Event coordinates fall outside the sensor."""


class StreamOrderError(ValueError):
    """An event arrived with a timestamp older than what was already seen."""


class LayerKind(enum.Enum):
    SAE = "SAE"
    SACE = "SACE"
    SAVE = "SAVE"


class VirtualKind(enum.Enum):
    DESIRED_CENTER = "p_cc"
    RANDOM_TARGET = "p_vr"
    OBJECT_CENTROID = "p_voc"
    ALIGNMENT_TARGET = "p_va"


class Event(NamedTuple):
    u: int
    v: int
    t: int
    polarity: int = 1


@dataclass(frozen=True)
class VirtualEvent:
    """A feature or goal stamped into SAVE that was not sensed directly.

    Coordinates are real-valued pixels; the surface stores the rounded cell.
    """

    u: float
    v: float
    t: int
    kind: VirtualKind

    @property
    def pixel(self) -> tuple[int, int]:
        return int(round(self.u)), int(round(self.v))


# Events in bulk travel as a structured array; one row per event.
EVENT_DTYPE = np.dtype([("t", np.int64), ("u", np.int16), ("v", np.int16), ("p", np.int8)])


def empty_events() -> np.ndarray:
    return np.zeros(0, dtype=EVENT_DTYPE)


def make_events(rows) -> np.ndarray:
    """Build an event array from ``(t, u, v, polarity)`` tuples."""
    return np.array([tuple(r) for r in rows], dtype=EVENT_DTYPE)


def check_order(events: np.ndarray, last_t: int = NEVER) -> None:
    """Raise :class:`StreamOrderError` unless ``events['t']`` is non-decreasing
    and does not start before ``last_t``."""
    if len(events) == 0:
        return
    t = events["t"]
    if t[0] < last_t:
        raise StreamOrderError(f"event at t={int(t[0])} after t={last_t}")
    bad = np.flatnonzero(np.diff(t) < 0)
    if bad.size:
        i = int(bad[0])
        raise StreamOrderError(f"event at t={int(t[i + 1])} after t={int(t[i])}")


class TimeSurface:
    """Per-pixel latest timestamp grid.

    ``cells`` is indexed ``[v, u]`` (row, column) like an image.
    """

    def __init__(self, width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT,
                 kind: LayerKind = LayerKind.SAE):
        self.width = width
        self.height = height
        self.kind = kind
        self.cells = np.full((height, width), NEVER, dtype=np.int64)

    def __repr__(self) -> str:
        return (f"TimeSurface({self.width}x{self.height}, {self.kind.value}, "
                f"occupied={self.occupied_count()})")

    def in_bounds(self, u: int, v: int) -> bool:
        return 0 <= u < self.width and 0 <= v < self.height

    def get(self, u: int, v: int) -> int | None:
        t = int(self.cells[v, u])
        return None if t == NEVER else t

    def update(self, event: Event | VirtualEvent) -> TimeSurface:
        """Write ``event.t`` into the event's cell; returns ``self``."""
        if isinstance(event, VirtualEvent):
            u, v = event.pixel
        else:
            u, v = int(event.u), int(event.v)
        if not self.in_bounds(u, v):
            raise BoundsError(f"({u}, {v}) outside {self.width}x{self.height} surface")
        if event.t < 0:
            raise ValueError(f"negative timestamp {event.t}")
        if event.t < self.cells[v, u]:
            raise StreamOrderError(
                f"cell ({u}, {v}) holds t={int(self.cells[v, u])}, got t={event.t}")
        self.cells[v, u] = event.t
        return self

    def occupied_count(self) -> int:
        return int(np.count_nonzero(self.cells != NEVER))

    def snapshot_recent(self, now: int, horizon: int) -> list[tuple[int, int, int]]:
        """Cells with ``now - t <= horizon`` as ``(u, v, t)`` sorted by t.

        Equal timestamps keep row-major order.
        """
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        c = self.cells
        vs, us = np.nonzero((c != NEVER) & (now - c <= horizon))
        ts = c[vs, us]
        order = np.argsort(ts, kind="stable")
        return [(int(us[i]), int(vs[i]), int(ts[i])) for i in order]

    def copy(self) -> TimeSurface:
        out = TimeSurface(self.width, self.height, self.kind)
        out.cells = self.cells.copy()
        return out


def update_surface(surface: TimeSurface, event: Event | VirtualEvent) -> TimeSurface:
    return surface.update(event)
