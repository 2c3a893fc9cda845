"""Text event files (record/replay format).

Layout::

    # ebvs-events v1 width=240 height=180
    t_us,u,v,pol

with ``pol`` 1 for a positive change and 0 for a negative one. Rows must be
non-decreasing in ``t_us``.
"""

from __future__ import annotations

import io
import re
from pathlib import Path

import numpy as np

from .events import EVENT_DTYPE, BoundsError, StreamOrderError, check_order

HEADER_RE = re.compile(r"#\s*ebvs-events\s+v1\s+width=(\d+)\s+height=(\d+)\s*$")


class EventFileError(ValueError):
    pass


def format_events(events: np.ndarray, width: int, height: int) -> str:
    buf = io.StringIO()
    buf.write(f"# ebvs-events v1 width={width} height={height}\n")
    if len(events):
        pol = (events["p"] > 0).astype(np.int64)
        table = np.column_stack([events["t"].astype(np.int64), events["u"].astype(np.int64),
                                 events["v"].astype(np.int64), pol])
        np.savetxt(buf, table, fmt="%d", delimiter=",")
    return buf.getvalue()


def write_events(path: str | Path, events: np.ndarray, width: int, height: int) -> None:
    check_order(events)
    Path(path).write_text(format_events(events, width, height))


def parse_events(text: str) -> tuple[np.ndarray, int, int]:
    """Parse file contents into ``(events, width, height)``."""
    lines = text.splitlines()
    if not lines:
        raise EventFileError("empty event file")
    m = HEADER_RE.match(lines[0].strip())
    if m is None:
        raise EventFileError(f"bad header: {lines[0]!r}")
    width, height = int(m.group(1)), int(m.group(2))
    body = [ln for ln in lines[1:] if ln.strip() and not ln.lstrip().startswith("#")]
    if not body:
        return np.zeros(0, dtype=EVENT_DTYPE), width, height
    try:
        table = np.loadtxt(body, delimiter=",", dtype=np.int64, ndmin=2)
    except ValueError as exc:
        raise EventFileError(str(exc)) from exc
    if table.shape[1] != 4:
        raise EventFileError(f"expected 4 columns, got {table.shape[1]}")
    t, u, v, pol = table.T
    if np.any((pol != 0) & (pol != 1)):
        raise EventFileError("polarity must be 0 or 1")
    if np.any((u < 0) | (u >= width) | (v < 0) | (v >= height)):
        raise BoundsError("event outside the declared sensor size")
    if np.any(t < 0):
        raise EventFileError("negative timestamp")
    events = np.zeros(len(t), dtype=EVENT_DTYPE)
    events["t"], events["u"], events["v"] = t, u, v
    events["p"] = np.where(pol == 1, 1, -1)
    try:
        check_order(events)
    except StreamOrderError as exc:
        raise EventFileError(f"timestamps not monotonic: {exc}") from exc
    return events, width, height


def read_events(path: str | Path) -> tuple[np.ndarray, int, int]:
    return parse_events(Path(path).read_text())
