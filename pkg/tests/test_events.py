import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ebvs.events import (NEVER, BoundsError, Event, LayerKind, StreamOrderError, TimeSurface,
                         VirtualEvent, VirtualKind, check_order, make_events, update_surface)
from ebvs.scene import CameraModel, CameraPose, generate_events, linear_trajectory, project_many, rectangle


def test_first_event_sets_one_cell():
    s = TimeSurface()
    update_surface(s, Event(10, 20, 500))
    assert s.get(10, 20) == 500
    assert s.cells[20, 10] == 500
    assert s.occupied_count() == 1


def test_overwrite_with_latest():
    s = TimeSurface()
    s.update(Event(10, 20, 500)).update(Event(10, 20, 900))
    assert s.get(10, 20) == 900


def test_t_zero_is_representable():
    s = TimeSurface()
    s.update(Event(0, 0, 0))
    assert s.get(0, 0) == 0
    assert s.get(1, 0) is None
    assert s.cells[0, 1] == NEVER


@pytest.mark.parametrize("u,v", [(-1, 0), (240, 0), (0, 180), (5, -3)])
def test_out_of_bounds_rejected(u, v):
    with pytest.raises(BoundsError):
        TimeSurface().update(Event(u, v, 1))


def test_older_event_on_cell_rejected():
    s = TimeSurface().update(Event(3, 3, 100))
    with pytest.raises(StreamOrderError):
        s.update(Event(3, 3, 99))


def test_equal_timestamps_allowed():
    s = TimeSurface().update(Event(3, 3, 100)).update(Event(3, 3, 100))
    assert s.get(3, 3) == 100


def test_virtual_event_rounds_to_cell():
    s = TimeSurface(kind=LayerKind.SAVE)
    s.update(VirtualEvent(119.5, 89.4, 7, VirtualKind.DESIRED_CENTER))
    assert s.get(120, 89) == 7


def test_occupancy_matches_pixel_set_oracle():
    rng = np.random.default_rng(1)
    # 1000 events along a 9-pixel horizontal segment
    us = rng.integers(50, 59, 1000)
    vs = np.full(1000, 40)
    ts = np.sort(rng.integers(0, 10_000, 1000))
    s = TimeSurface()
    for u, v, t in zip(us, vs, ts):
        s.update(Event(int(u), int(v), int(t)))
    assert s.occupied_count() == len(set(zip(us.tolist(), vs.tolist())))


def test_snapshot_window():
    s = TimeSurface().update(Event(1, 1, 100)).update(Event(2, 2, 5000))
    assert s.snapshot_recent(5000, 1000) == [(2, 2, 5000)]
    assert s.snapshot_recent(5000, 10_000) == [(1, 1, 100), (2, 2, 5000)]
    with pytest.raises(ValueError):
        s.snapshot_recent(5000, 0)


def test_snapshot_does_not_mutate():
    s = TimeSurface().update(Event(1, 1, 100))
    before = s.cells.copy()
    s.snapshot_recent(200, 50)
    assert np.array_equal(before, s.cells)


def _inside_convex(poly, u, v):
    area = 0.5 * np.sum(poly[:, 0] * np.roll(poly[:, 1], -1) - poly[:, 1] * np.roll(poly[:, 0], -1))
    poly = poly if area > 0 else poly[::-1]
    ok = np.ones(u.shape, bool)
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        ok &= (b[0] - a[0]) * (v - a[1]) - (b[1] - a[1]) * (u - a[0]) > 0
    return ok


def test_snapshot_of_square_sweep_matches_swept_area():
    cam = CameraModel()
    obj = rectangle(0.2, 0.2, (0.6, 0.5), 0.3)
    traj = linear_trajectory(CameraPose(0.58, 0.5), (0.4, 0.1), 0.06)
    s = TimeSurface()
    for e in generate_events([obj], cam, traj):
        s.update(Event(int(e["u"]), int(e["v"]), int(e["t"])))
    now, horizon = 60_000, 30_000
    got = {(u, v) for u, v, _ in s.snapshot_recent(now, horizon)}
    # Oracle: pixel centers whose silhouette membership differs between the
    # window's end poses (a translating convex face crosses each pixel once).
    pose = dict(traj)
    vv, uu = np.mgrid[0:cam.height, 0:cam.width]
    a = _inside_convex(project_many(cam, pose[now - horizon], obj.top_face), uu, vv)
    b = _inside_convex(project_many(cam, pose[now], obj.top_face), uu, vv)
    expected = {(int(u), int(v)) for v, u in zip(*np.nonzero(a ^ b))}
    assert len(expected) > 200
    assert got == expected


def test_check_order():
    ev = make_events([(1, 0, 0, 1), (1, 1, 0, 1), (2, 0, 0, -1)])
    check_order(ev)
    with pytest.raises(StreamOrderError):
        check_order(ev[::-1])
    with pytest.raises(StreamOrderError):
        check_order(ev, last_t=5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 15), st.integers(0, 11), st.integers(0, 50)),
                min_size=1, max_size=60))
def test_stored_timestamps_never_decrease(raw):
    s = TimeSurface(16, 12)
    t = 0
    prev = s.cells.copy()
    for u, v, dt in raw:
        t += dt
        s.update(Event(u, v, t))
        assert np.all(s.cells >= prev)
        changed = np.argwhere(s.cells != prev)
        assert len(changed) <= 1
        prev = s.cells.copy()


def test_identical_sequences_give_identical_surfaces():
    rng = np.random.default_rng(7)
    rows = [(int(t), int(u), int(v)) for t, u, v in
            zip(np.sort(rng.integers(0, 1000, 300)), rng.integers(0, 240, 300), rng.integers(0, 180, 300))]
    a, b = TimeSurface(), TimeSurface()
    for t, u, v in rows:
        a.update(Event(u, v, t))
        b.update(Event(u, v, t))
    assert a.cells.tobytes() == b.cells.tobytes()
