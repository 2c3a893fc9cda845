"""Corner heat-map: Gaussian accumulation of corner events with exponential
forgetting, local-peak extraction and the object centroid.

Decay is kept as a single scalar multiplier on the stored grid so that
forgetting costs O(1) per corner event; :attr:`CornerHeatMap.values`
materializes the decayed map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import ndimage

from .events import DEFAULT_HEIGHT, DEFAULT_WIDTH, BoundsError, StreamOrderError
from .servo import NoFeatureError

# Below this the stored grid is rescaled to keep magnitudes in range.
_RENORM_BELOW = 1e-100


def truncation_bound(sigma: float, radius: int) -> float:
    """Largest weight a single deposit can leave out beyond ``radius``."""
    return math.exp(-0.5 * radius**2 / sigma**2)


@njit(cache=True)
def _deposit_batch(buf, xs, ys, ts, kernel, radius, alpha, tau, scale, t_c):
    height, width = buf.shape
    for i in range(xs.shape[0]):
        t = ts[i]
        if t > t_c:
            scale *= math.exp(-tau * (t - t_c) * 1e-6)
            t_c = t
            if scale < _RENORM_BELOW:
                for y in range(height):
                    for x in range(width):
                        buf[y, x] *= scale
                scale = 1.0
        w = alpha / scale
        x0 = xs[i]
        y0 = ys[i]
        for dy in range(-radius, radius + 1):
            y = y0 + dy
            if y < 0 or y >= height:
                continue
            for dx in range(-radius, radius + 1):
                x = x0 + dx
                if x < 0 or x >= width:
                    continue
                g = kernel[dy + radius, dx + radius]
                if g > 0.0:
                    buf[y, x] += w * g
    return scale, t_c


class CornerHeatMap:
    def __init__(self, width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT,
                 alpha: float = 1.0, sigma: float = 2.0, tau: float = 5.0,
                 kernel_radius: int | None = None):
        if sigma <= 0 or tau < 0 or alpha < 0:
            raise ValueError("need sigma > 0, tau >= 0, alpha >= 0")
        self.width, self.height = width, height
        self.alpha, self.sigma, self.tau = alpha, sigma, tau
        self.kernel_radius = int(math.ceil(3 * sigma)) if kernel_radius is None else kernel_radius
        r = self.kernel_radius
        d = np.arange(-r, r + 1)
        dist2 = d[:, None] ** 2 + d[None, :] ** 2
        self._kernel = np.where(dist2 <= r * r, np.exp(-0.5 * dist2 / sigma**2), 0.0)
        self._buf = np.zeros((height, width))
        self._scale = 1.0
        self.t_c = 0
        self.deposits = 0

    @property
    def values(self) -> np.ndarray:
        """Decayed map at ``t_c``, indexed ``[y, x]``."""
        return self._buf * self._scale

    def value(self, x: int, y: int) -> float:
        return float(self._buf[y, x] * self._scale)

    def _check_time(self, t: int) -> None:
        if t < self.t_c:
            raise StreamOrderError(f"heat-map update at t={t} before t_c={self.t_c}")

    def decay_to(self, t: int) -> CornerHeatMap:
        """Multiply the map by ``exp(-tau * elapsed)``; ``elapsed`` in seconds."""
        self._check_time(t)
        if t > self.t_c:
            self._scale *= math.exp(-self.tau * (t - self.t_c) * 1e-6)
            self.t_c = int(t)
            if self._scale < _RENORM_BELOW:
                self._buf *= self._scale
                self._scale = 1.0
        return self

    def deposit(self, x: int, y: int, t: int) -> CornerHeatMap:
        return self.deposit_many(np.array([x]), np.array([y]), np.array([t]))

    def deposit_many(self, xs, ys, ts) -> CornerHeatMap:
        """Deposit corner events in order; each first decays the map to its time."""
        xs = np.ascontiguousarray(xs, dtype=np.int64)
        ys = np.ascontiguousarray(ys, dtype=np.int64)
        ts = np.ascontiguousarray(ts, dtype=np.int64)
        if len(ts) == 0:
            return self
        self._check_time(int(ts[0]))
        if np.any(np.diff(ts) < 0):
            raise StreamOrderError("corner events out of time order")
        if np.any((xs < 0) | (xs >= self.width) | (ys < 0) | (ys >= self.height)):
            raise BoundsError("corner outside the heat-map")
        self._scale, self.t_c = _deposit_batch(self._buf, xs, ys, ts, self._kernel,
                                               self.kernel_radius, self.alpha, self.tau,
                                               self._scale, self.t_c)
        self.t_c = int(self.t_c)
        self.deposits += len(ts)
        return self


def deposit_corner(heatmap: CornerHeatMap, corner: tuple[int, int], t: int) -> CornerHeatMap:
    return heatmap.deposit(int(corner[0]), int(corner[1]), t)


def decay_to(heatmap: CornerHeatMap, t: int) -> CornerHeatMap:
    return heatmap.decay_to(t)


@dataclass
class PeakSet:
    """Local maxima of the heat-map, row-major ordered."""

    points: np.ndarray  # (n, 2) integer (x, y)
    values: np.ndarray  # (n,)

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> PeakSet:
        return cls(np.zeros((0, 2), np.int64), np.zeros(0))

    @classmethod
    def from_points(cls, points, values=None) -> PeakSet:
        pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
        vals = np.ones(len(pts)) if values is None else np.asarray(values, dtype=float)
        return cls(pts, vals)

    def as_list(self) -> list[tuple[int, int]]:
        return [(int(x), int(y)) for x, y in self.points]


@dataclass
class PeakConfig:
    threshold: float = 0.7  # relative to the map maximum
    window: int = 10


def _window_offsets(size: int) -> tuple[int, int]:
    # Matches scipy.ndimage's placement for even sizes: [-size//2, size - size//2 - 1].
    return size // 2, size - size // 2 - 1


def extract_peaks(heatmap: CornerHeatMap | np.ndarray, config: PeakConfig | None = None) -> PeakSet:
    """Cells equal to the grayscale dilation of the map and at least
    ``threshold * max``. Exact-value plateaus keep their row-major first cell."""
    config = config or PeakConfig()
    H = heatmap.values if isinstance(heatmap, CornerHeatMap) else np.asarray(heatmap, float)
    hmax = float(H.max()) if H.size else 0.0
    if hmax <= 0.0:
        return PeakSet.empty()
    dil = ndimage.maximum_filter(H, size=config.window, mode="constant", cval=0.0)
    ys, xs = np.nonzero((H == dil) & (H >= config.threshold * hmax))
    lo, hi = _window_offsets(config.window)
    kept: list[int] = []
    for i in range(len(xs)):
        dup = False
        for j in kept:
            if (H[ys[j], xs[j]] == H[ys[i], xs[i]]
                    and -lo <= xs[j] - xs[i] <= hi and -lo <= ys[j] - ys[i] <= hi):
                dup = True
                break
        if not dup:
            kept.append(i)
    pts = np.column_stack([xs[kept], ys[kept]]).astype(np.int64)
    return PeakSet(pts, H[ys[kept], xs[kept]])


def compute_centroid(peaks: PeakSet) -> tuple[float, float]:
    if len(peaks) == 0:
        raise NoFeatureError("no peaks to average")
    pts = np.asarray(peaks.points, dtype=float)
    return float(pts[:, 0].mean()), float(pts[:, 1].mean())
