"""Event-based Harris corner classification on a binarized SAE patch.

For every incoming event the local patch of the SAE around it is binarized
by keeping the newest ``N`` events, differentiated with 5x5 Sobel kernels and
scored with the Harris response ``det(H) - k * trace(H)**2``. Cost per event
depends only on the patch size.

The hot loop lives in :func:`detect_batch`, a numba kernel that applies a
whole chunk of events to the SAE and classifies each one in arrival order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .events import NEVER, BoundsError, StreamOrderError, TimeSurface

SOBEL_SMOOTH = np.array([1.0, 4.0, 6.0, 4.0, 1.0])
SOBEL_DERIV = np.array([-1.0, -2.0, 0.0, 2.0, 1.0])
# Row index is v (y), column index is u (x).
SOBEL_X = np.outer(SOBEL_SMOOTH, SOBEL_DERIV)
SOBEL_Y = SOBEL_X.T.copy()
# Largest kernel coefficient; dividing by it puts scores on the unit-kernel
# scale used by the reference event-Harris detector.
SOBEL_MAX = float(np.abs(SOBEL_X).max())

FLAT, EDGE, CORNER = 0, 1, 2


class CornerClass(enum.IntEnum):
    FLAT = FLAT
    EDGE = EDGE
    CORNER = CORNER


def gaussian_window(size: int, sigma: float | None = None) -> np.ndarray:
    """Gaussian weights over a ``size x size`` patch, normalized to sum 1."""
    if sigma is None:
        sigma = size / 6.0
    r = np.arange(size) - size // 2
    g = np.exp(-0.5 * (r[:, None] ** 2 + r[None, :] ** 2) / sigma**2)
    return g / g.sum()


def uniform_window(size: int) -> np.ndarray:
    return np.full((size, size), 1.0 / size**2)


@dataclass
class HarrisConfig:
    threshold: float = 5.0  # HC_th on the raw score
    n_newest: int = 20
    patch_size: int = 9
    k: float = 0.04
    window: str = "gaussian"  # or "uniform"
    # Events with fewer active cells than this in their patch are FLAT with
    # score 0 (an isolated event has no local structure to score).
    min_support: int = 2
    # HC_th applies to the raw score from the integer kernels; True divides
    # the kernels by their max coefficient (scores shrink by 12**4).
    normalized_kernels: bool = False
    weights: np.ndarray = field(init=False, repr=False)
    gx: np.ndarray = field(init=False, repr=False)
    gy: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.patch_size % 2 != 1 or self.patch_size < 5:
            raise ValueError("patch_size must be odd and >= 5")
        if not 1 <= self.n_newest <= self.patch_size**2:
            raise ValueError("n_newest must be in [1, patch_size**2]")
        if self.window == "gaussian":
            self.weights = gaussian_window(self.patch_size)
        elif self.window == "uniform":
            self.weights = uniform_window(self.patch_size)
        else:
            raise ValueError(f"unknown window {self.window!r}")
        scale = SOBEL_MAX if self.normalized_kernels else 1.0
        self.gx = SOBEL_X / scale
        self.gy = SOBEL_Y / scale

    @property
    def half(self) -> int:
        return self.patch_size // 2


@dataclass
class BinaryPatch:
    bits: np.ndarray  # (patch_size, patch_size) uint8, centered on the event

    @property
    def count(self) -> int:
        return int(self.bits.sum())


@njit(cache=True)
def _binarize(cells, u, v, half, n_newest, bits):
    height, width = cells.shape
    size = 2 * half + 1
    ts = np.empty(size * size, np.int64)
    idx = np.empty(size * size, np.int64)
    m = 0
    for r in range(size):
        y = v - half + r
        for c in range(size):
            bits[r, c] = 0
            x = u - half + c
            if 0 <= y < height and 0 <= x < width:
                tc = cells[y, x]
                if tc != NEVER:
                    ts[m] = tc
                    idx[m] = r * size + c
                    m += 1
    if m <= n_newest:
        for i in range(m):
            bits[idx[i] // size, idx[i] % size] = 1
        return m
    for i in range(m):
        rank = 0
        for j in range(m):
            if ts[j] > ts[i] or (ts[j] == ts[i] and idx[j] < idx[i]):
                rank += 1
        if rank < n_newest:
            bits[idx[i] // size, idx[i] % size] = 1
    return n_newest


@njit(cache=True)
def _harris(bits, gx, gy, weights, k):
    size = bits.shape[0]
    rad = gx.shape[0] // 2
    ix = np.zeros((size, size))
    iy = np.zeros((size, size))
    # Scatter each active cell's kernel footprint (zero padding outside).
    for r in range(size):
        for c in range(size):
            if bits[r, c] == 0:
                continue
            for dy in range(-rad, rad + 1):
                y = r - dy
                if y < 0 or y >= size:
                    continue
                for dx in range(-rad, rad + 1):
                    x = c - dx
                    if x < 0 or x >= size:
                        continue
                    ix[y, x] += gx[dy + rad, dx + rad]
                    iy[y, x] += gy[dy + rad, dx + rad]
    a = 0.0
    b = 0.0
    d = 0.0
    for y in range(size):
        for x in range(size):
            w = weights[y, x]
            a += w * ix[y, x] * ix[y, x]
            b += w * ix[y, x] * iy[y, x]
            d += w * iy[y, x] * iy[y, x]
    return a * d - b * b - k * (a + d) * (a + d)


@njit(cache=True)
def _detect_batch(cells, ts, us, vs, last_t, half, n_newest, gx, gy, weights, k,
                  threshold, min_support, out_class, out_score):
    height, width = cells.shape
    size = 2 * half + 1
    bits = np.zeros((size, size), np.uint8)
    for i in range(ts.shape[0]):
        t = ts[i]
        u = us[i]
        v = vs[i]
        if t < last_t:
            return 1, i
        if u < 0 or u >= width or v < 0 or v >= height:
            return 2, i
        last_t = t
        cells[v, u] = t
        m = _binarize(cells, u, v, half, n_newest, bits)
        if m < min_support:
            out_score[i] = 0.0
            out_class[i] = FLAT
            continue
        s = _harris(bits, gx, gy, weights, k)
        out_score[i] = s
        if s >= threshold:
            out_class[i] = CORNER
        elif s < 0.0:
            out_class[i] = EDGE
        else:
            out_class[i] = FLAT
    return 0, ts.shape[0]


def binarize_patch(sae: TimeSurface, center: tuple[int, int], config: HarrisConfig) -> BinaryPatch:
    """Mark the newest ``N`` occupied cells of the patch around ``center``.

    Cells outside the sensor count as empty. Equal timestamps are ranked in
    row-major order, earlier cells first.
    """
    u, v = center
    if not sae.in_bounds(u, v):
        raise BoundsError(f"({u}, {v}) outside sensor")
    bits = np.zeros((config.patch_size, config.patch_size), np.uint8)
    _binarize(sae.cells, int(u), int(v), config.half, config.n_newest, bits)
    return BinaryPatch(bits)


def harris_score(patch: BinaryPatch, config: HarrisConfig) -> float:
    bits = np.ascontiguousarray(patch.bits, dtype=np.uint8)
    return float(_harris(bits, config.gx, config.gy, config.weights, config.k))


def classify_score(score: float, count: int, config: HarrisConfig) -> CornerClass:
    if count < config.min_support:
        return CornerClass.FLAT
    if score >= config.threshold:
        return CornerClass.CORNER
    if score < 0:
        return CornerClass.EDGE
    return CornerClass.FLAT


def classify_event(sae: TimeSurface, event, config: HarrisConfig) -> CornerClass:
    """Classify an event that has already been written into ``sae``."""
    patch = binarize_patch(sae, (int(event.u), int(event.v)), config)
    count = patch.count
    score = harris_score(patch, config) if count >= config.min_support else 0.0
    return classify_score(score, count, config)


def detect_batch(sae: TimeSurface, events: np.ndarray, config: HarrisConfig,
                 last_t: int = NEVER) -> tuple[np.ndarray, np.ndarray]:
    """Apply ``events`` to ``sae`` one by one and classify each.

    Returns ``(classes, scores)``. Raises :class:`StreamOrderError` or
    :class:`BoundsError` at the first offending event; events before it stay
    applied.
    """
    n = len(events)
    classes = np.zeros(n, np.int8)
    scores = np.zeros(n, np.float64)
    if n == 0:
        return classes, scores
    ts = np.ascontiguousarray(events["t"], dtype=np.int64)
    us = np.ascontiguousarray(events["u"], dtype=np.int64)
    vs = np.ascontiguousarray(events["v"], dtype=np.int64)
    status, i = _detect_batch(sae.cells, ts, us, vs, last_t, config.half, config.n_newest,
                              config.gx, config.gy, config.weights, config.k,
                              config.threshold, config.min_support, classes, scores)
    if status == 1:
        raise StreamOrderError(f"event {i} at t={int(ts[i])} is older than its predecessor")
    if status == 2:
        raise BoundsError(f"event {i} at ({int(us[i])}, {int(vs[i])}) outside sensor")
    return classes, scores
