"""Per-event perception: SAE update and e-Harris classification, SACE and
heat-map deposits for corner events, and tracker updates while tracking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corners import CORNER, HarrisConfig, detect_batch
from .events import (DEFAULT_HEIGHT, DEFAULT_WIDTH, NEVER, LayerKind, TimeSurface, VirtualEvent)
from .heatmap import CornerHeatMap, PeakConfig, PeakSet, extract_peaks
from .tracking import TrackedFeatureSet, TrackerConfig


@dataclass
class HeatmapConfig:
    alpha: float = 1.0
    sigma: float = 2.0
    tau: float = 5.0
    kernel_radius: int | None = None
    threshold: float = 0.7
    window: int = 10

    @property
    def peaks(self) -> PeakConfig:
        return PeakConfig(self.threshold, self.window)


class Perception:
    def __init__(self, width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT,
                 detector: HarrisConfig | None = None, heatmap: HeatmapConfig | None = None,
                 tracker: TrackerConfig | None = None):
        self.detector = detector or HarrisConfig()
        self.heat_config = heatmap or HeatmapConfig()
        hc = self.heat_config
        self.sae = TimeSurface(width, height, LayerKind.SAE)
        self.sace = TimeSurface(width, height, LayerKind.SACE)
        self.save = TimeSurface(width, height, LayerKind.SAVE)
        self.heatmap = CornerHeatMap(width, height, hc.alpha, hc.sigma, hc.tau, hc.kernel_radius)
        self.tracker = TrackedFeatureSet(tracker)
        self.last_t = NEVER
        self.n_events = 0
        self.n_corners = 0
        self.n_assimilated = 0
        self._peaks: PeakSet | None = None

    def process(self, events: np.ndarray) -> np.ndarray:
        """Run a time-ordered chunk of events through the pipeline; returns
        the mask of corner events."""
        if len(events) == 0:
            return np.zeros(0, np.bool_)
        classes, _ = detect_batch(self.sae, events, self.detector, self.last_t)
        self.last_t = int(events["t"][-1])
        self.n_events += len(events)
        corner = classes == CORNER
        if corner.any():
            ce = events[corner]
            us, vs, ts = ce["u"].astype(np.int64), ce["v"].astype(np.int64), ce["t"]
            np.maximum.at(self.sace.cells, (vs, us), ts)
            self.heatmap.deposit_many(us, vs, ts)
            self.n_corners += len(ce)
            self._peaks = None
            if self.tracker.tracking:
                ok, cents = self.tracker.assimilate_many(us, vs, ts)
                self.n_assimilated += int(ok.sum())
                if ok.any():
                    px = np.rint(cents[ok]).astype(np.int64)
                    inside = ((px[:, 0] >= 0) & (px[:, 0] < self.save.width)
                              & (px[:, 1] >= 0) & (px[:, 1] < self.save.height))
                    np.maximum.at(self.save.cells, (px[inside, 1], px[inside, 0]), ts[ok][inside])
        return corner

    def advance(self, t: int) -> None:
        """Bring time-dependent state up to ``t`` (end of a tick)."""
        if t > self.heatmap.t_c:
            self.heatmap.decay_to(t)

    def peaks(self) -> PeakSet:
        # Decay scales the whole map, so peaks only change with new deposits.
        if self._peaks is None:
            self._peaks = extract_peaks(self.heatmap, self.heat_config.peaks)
        return self._peaks

    def stamp(self, virtual: VirtualEvent) -> None:
        u, v = virtual.pixel
        if self.save.in_bounds(u, v) and virtual.t >= self.save.cells[v, u]:
            self.save.cells[v, u] = virtual.t
