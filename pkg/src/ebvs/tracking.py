"""Moving-average corner tracking with periodic cross-checks against the
heat-map detector.

Each corner event pulls its nearest tracked corner by
``p <- 0.9 * p + 0.1 * p_hc``. Events farther than the gate radius from every
tracked corner are dropped as clutter. Every validation period the tracked
set is compared with the detected peaks; a detection that disagrees, or finds
nothing at all, is a strike, and three strikes in a row hand control back to
detection.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass

import numpy as np
from numba import njit

from .heatmap import PeakSet


class NotEnoughFeaturesError(ValueError):
    pass


class Mode(enum.Enum):
    DETECTING = "detecting"
    TRACKING = "tracking"


@dataclass
class TrackerConfig:
    smoothing: float = 0.9  # weight kept by the old estimate
    gate_radius: float = 8.0
    discrepancy_px: float = 5.0
    max_strikes: int = 3
    validation_period_s: float = 0.3
    min_corners: int = 3


@njit(cache=True)
def _assimilate(corners, stamps, xs, ys, ts, gate2, keep, out_cx, out_cy, out_ok):
    n = corners.shape[0]
    for i in range(xs.shape[0]):
        best = -1
        best_d = np.inf
        for j in range(n):
            dx = corners[j, 0] - xs[i]
            dy = corners[j, 1] - ys[i]
            d = dx * dx + dy * dy
            # strict '<' keeps the lowest index on ties
            if d < best_d:
                best = j
                best_d = d
        if best < 0 or best_d > gate2:
            out_ok[i] = False
            continue
        corners[best, 0] = keep * corners[best, 0] + (1.0 - keep) * xs[i]
        corners[best, 1] = keep * corners[best, 1] + (1.0 - keep) * ys[i]
        stamps[best] = ts[i]
        sx = 0.0
        sy = 0.0
        for j in range(n):
            sx += corners[j, 0]
            sy += corners[j, 1]
        out_cx[i] = sx / n
        out_cy[i] = sy / n
        out_ok[i] = True


class TrackedFeatureSet:
    """Tracked object corners ``S`` and their centroid."""

    def __init__(self, config: TrackerConfig | None = None):
        self.config = config or TrackerConfig()
        self.corners = np.zeros((0, 2))
        self.stamps = np.zeros(0, np.int64)
        self.mode = Mode.DETECTING
        self.last_validation = 0
        self.strikes = 0
        self.reversions = 0

    def __repr__(self) -> str:
        return (f"TrackedFeatureSet(mode={self.mode.value}, corners={len(self.corners)}, "
                f"strikes={self.strikes}, reversions={self.reversions})")

    @property
    def tracking(self) -> bool:
        return self.mode is Mode.TRACKING

    @property
    def centroid(self) -> tuple[float, float] | None:
        if len(self.corners) == 0:
            return None
        c = self.corners.mean(axis=0)
        return float(c[0]), float(c[1])

    def seed(self, peaks: PeakSet, t: int) -> TrackedFeatureSet:
        if len(peaks) < self.config.min_corners:
            raise NotEnoughFeaturesError(
                f"{len(peaks)} peaks, need {self.config.min_corners} to track")
        self.corners = np.asarray(peaks.points, dtype=float).copy()
        self.stamps = np.full(len(self.corners), t, np.int64)
        self.mode = Mode.TRACKING
        self.strikes = 0
        self.last_validation = t
        return self

    def revert(self, peaks: PeakSet | None = None) -> None:
        """Fall back to detection mode, reseeding corners from ``peaks``."""
        if self.mode is Mode.TRACKING:
            self.reversions += 1
        self.mode = Mode.DETECTING
        self.strikes = 0
        if peaks is not None:
            self.corners = np.asarray(peaks.points, dtype=float).copy()
            self.stamps = np.full(len(self.corners), self.last_validation, np.int64)

    def assimilate(self, p_hc: tuple[float, float], t: int) -> bool:
        """Pull the nearest corner toward ``p_hc``; False if gated out."""
        ok, _ = self.assimilate_many(np.array([p_hc[0]]), np.array([p_hc[1]]), np.array([t]))
        return bool(ok[0])

    def assimilate_many(self, xs, ys, ts) -> tuple[np.ndarray, np.ndarray]:
        """Sequential :meth:`assimilate` over corner events.

        Returns ``(accepted, centroids)``; ``centroids[i]`` is the centroid
        right after event ``i`` (NaN where the event was rejected).
        """
        if self.mode is not Mode.TRACKING:
            raise ValueError("tracker is not in tracking mode")
        n = len(xs)
        ok = np.zeros(n, np.bool_)
        cx = np.full(n, np.nan)
        cy = np.full(n, np.nan)
        if n:
            _assimilate(self.corners, self.stamps, np.asarray(xs, dtype=float),
                        np.asarray(ys, dtype=float), np.asarray(ts, dtype=np.int64),
                        self.config.gate_radius**2, self.config.smoothing, cx, cy, ok)
        return ok, np.column_stack([cx, cy])

    def discrepancy(self, peaks: PeakSet) -> bool:
        if len(peaks) == 0 or len(peaks) != len(self.corners):
            return True
        p = np.asarray(peaks.points, dtype=float)
        d = np.sqrt(((self.corners[:, None, :] - p[None, :, :]) ** 2).sum(-1))
        return bool(np.any(d.min(axis=1) > self.config.discrepancy_px))

    def validate(self, peaks: PeakSet, t: int) -> bool:
        """Cross-check against detected peaks; returns True when this check
        made the tracker fall back to detection."""
        self.last_validation = t
        if 0 < len(peaks) < self.config.min_corners:
            # A partial detection (typical while translating, when edges
            # parallel to the motion go quiet) says nothing either way.
            pass
        elif self.discrepancy(peaks):
            self.strikes += 1
        else:
            self.strikes = 0
        if self.strikes >= self.config.max_strikes:
            self.revert(peaks)
            return True
        return False

    def validation_due(self, t: int) -> bool:
        return (self.mode is Mode.TRACKING
                and t - self.last_validation >= round(self.config.validation_period_s * 1e6))

    def trace_row(self, t: int) -> str:
        parts = [str(t), self.mode.value, str(self.strikes)]
        parts += [f"{x:.6f}" for x in self.corners.ravel()]
        c = self.centroid
        parts += ["", ""] if c is None else [f"{c[0]:.6f}", f"{c[1]:.6f}"]
        return ",".join(parts)


def seed_from_peaks(peaks: PeakSet, t: int, config: TrackerConfig | None = None) -> TrackedFeatureSet:
    return TrackedFeatureSet(config).seed(peaks, t)


def assimilate_corner(tracker: TrackedFeatureSet, p_hc, t: int) -> TrackedFeatureSet:
    tracker.assimilate(p_hc, t)
    return tracker


def validate_against_detection(tracker: TrackedFeatureSet, peaks: PeakSet, t: int) -> TrackedFeatureSet:
    tracker.validate(peaks, t)
    return tracker


def format_trace(rows: list[str]) -> str:
    buf = io.StringIO()
    buf.write("t_us,mode,strikes,corners...,centroid_x,centroid_y\n")
    for r in rows:
        buf.write(r + "\n")
    return buf.getvalue()
