from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cyclenet.analysis import (
    LinkScenario,
    OversaturatedError,
    light_traffic_mean,
    platoon_profile,
    platoon_surface,
    platoon_travel_time,
    propagate_queue,
    uniform_curve,
    uniform_inflow,
    waiting_curve,
    write_curve_csv,
    write_surface_csv,
)


def two_lane_link():
    return LinkScenario.from_seconds(60, 60, 10, (40, 60), 1.0, 0.5)


def right_offset():
    # green 30 s, outgoing capacity doubled
    return LinkScenario.from_seconds(60, 60, 10, (30, 60), 1.0, 2.0)


def test_zero_inflow():
    sc = two_lane_link()
    tr = propagate_queue(sc, np.zeros(sc.k))
    assert tr.total_waiting_seconds == 0
    assert tr.average_travel_time == sc.free_transit


def test_hand_trace_k6():
    sc = LinkScenario(6, 1.0, 0, 1.0, 1.0, frozenset({0, 1}))
    tr = propagate_queue(sc, [1, 0, 0, 0, 0, 0])
    assert list(tr.departures) == [0, 0, 1, 0, 0, 0]
    assert tr.total_waiting_seconds == 2.0
    assert tr.individual_waits() == [(0, 2, 2, 1.0)]


def test_two_lane_link_travel_time_range():
    sc = two_lane_link()
    tr = propagate_queue(sc, uniform_inflow(sc, 1e-3))
    assert tr.travel_time_range() == (10.0, 30.0)


def test_light_traffic_limit():
    sc = two_lane_link()
    low = propagate_queue(sc, uniform_inflow(sc, 1e-3)).average_travel_time
    # contiguous red of R steps: waits R, R-1, ..., 1 over k arrival steps
    R = 20
    assert light_traffic_mean(sc) == pytest.approx(10 + R * (R + 1) / (2 * 60))
    assert low == pytest.approx(light_traffic_mean(sc), abs=1e-6)


def test_curve_convex_and_increasing():
    sc = two_lane_link()
    rates = np.linspace(0, 0.33, 34)
    w = np.array([y for _x, y in waiting_curve(sc, rates)])
    assert np.all(np.diff(w) >= -1e-9)
    second = w[2:] - 2 * w[1:-1] + w[:-2]
    assert np.all(second >= -1e-7)


def test_tripling_superlinear():
    sc = two_lane_link()
    w1 = propagate_queue(sc, uniform_inflow(sc, 0.05)).total_waiting_seconds
    w3 = propagate_queue(sc, uniform_inflow(sc, 0.15)).total_waiting_seconds
    assert w3 / w1 > 3


def test_oversaturated():
    sc = two_lane_link()
    with pytest.raises(OversaturatedError, match="queue grows unboundedly"):
        propagate_queue(sc, uniform_inflow(sc, 0.4))


def test_inflow_validation():
    sc = two_lane_link()
    with pytest.raises(ValueError):
        propagate_queue(sc, np.zeros(3))
    with pytest.raises(ValueError):
        propagate_queue(sc, np.full(sc.k, 2.0))


def test_right_offset_small_platoons_free():
    sc = right_offset()
    for L in range(0, 10):
        assert platoon_travel_time(sc, L, 20) == sc.free_transit
    assert platoon_travel_time(sc, 12, 20) > sc.free_transit


def test_left_offset_first_vehicle_waits_longest():
    sc = right_offset()
    head = 50  # 10 s before green starts at 0
    tr = propagate_queue(sc, platoon_profile(sc, 8, head))
    waits = tr.individual_waits()
    first = next(w for w in waits if w[0] == head)
    assert first[2] == max(w[2] for w in waits)
    times = [platoon_travel_time(sc, L, head) for L in range(0, 10)]
    assert all(b < a for a, b in zip(times, times[1:]))


def test_length_zero_platoon_is_single_unit():
    sc = right_offset()
    for head in (0, 25, 40, 59):
        tr = propagate_queue(sc, platoon_profile(sc, 0, head))
        wait = tr.individual_waits()[0][2]
        assert platoon_travel_time(sc, 0, head) == pytest.approx(sc.free_transit + max(0, wait))


def test_surface_consistency_and_plateau():
    sc = right_offset()
    lengths = [0, 2, 4, 10]
    offsets = list(range(0, 60, 5))
    mat = platoon_surface(sc, lengths, offsets)
    assert mat.shape == (4, 12)
    j = offsets.index(50)
    assert list(mat[:, j]) == pytest.approx([platoon_travel_time(sc, L, 50) for L in lengths])
    # short platoon inside the long green
    assert np.all(mat[0, :5] == sc.free_transit)


def test_surface_row_breakpoints_at_switches():
    sc = right_offset()
    offsets = np.arange(0, 60)
    row = platoon_surface(sc, [5], offsets)[0]
    slope = np.diff(row)
    kinks = {int(offsets[i + 1]) for i in range(len(slope) - 1) if abs(slope[i + 1] - slope[i]) > 1e-9}
    assert kinks
    # kinks only while the platoon [o, o + 5] overlaps a switch (red at 30 s, green at 0 s)
    for o in kinks:
        assert any((s - o) % 60 <= 6 or (o - s) % 60 <= 1 for s in (0, 30))
    # away from the switches the row is linear
    assert np.allclose(np.diff(row[32:56]), -1.0)


def test_csv_emitters(tmp_path):
    sc = two_lane_link()
    write_curve_csv(uniform_curve(sc, [0.0, 0.1]), tmp_path / "c.csv")
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["rate", "average_travel_time_s"] and len(rows) == 3
    write_surface_csv([0, 1], [0, 5], np.ones((2, 2)), tmp_path / "s.csv")
    assert list(csv.reader(open(tmp_path / "s.csv")))[0] == ["length_s", "0", "5"]


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 12), st.data())
def test_steady_state_conservation(k, data):
    red = frozenset(data.draw(st.sets(st.integers(0, k - 1), max_size=k - 1)))
    out = data.draw(st.sampled_from([0.5, 1.0, 2.0]))
    sc = LinkScenario(k, 1.0, 1, 2.0, out, red)
    cap = sc.cycle_capacity
    inflow = np.array(data.draw(st.lists(st.floats(0, 2.0), min_size=k, max_size=k)))
    if inflow.sum() >= cap * 0.999:
        inflow *= 0.99 * cap / max(inflow.sum(), 1e-12)
    tr = propagate_queue(sc, inflow)
    assert tr.departures.sum() == pytest.approx(inflow.sum(), abs=1e-9)
    assert np.all(tr.departures[list(red)] == 0)
    assert np.all(tr.queue >= 0)
    assert tr.queue[-1] == pytest.approx(tr.start_queue, abs=1e-9)
    # FIFO waits are nonnegative and ordered within each arrival step
    for _t, lo, hi, _m in tr.individual_waits():
        assert 0 <= lo <= hi
