from __future__ import annotations

import csv
from functools import lru_cache

import pytest

from cyclenet.assignment import assign
from cyclenet.greenband import build_diagram, emit_greenband, svg_from_csv
from cyclenet.mip import branch_and_bound, build_mip
from cyclenet.network import expand_cyclic
from cyclenet.scenario import default_schedules, gen_arterial


@lru_cache(maxsize=None)
def green_wave(opposing: float = 0.0):
    k = 60
    sc = gen_arterial(2, 20, k, (30, opposing), through_profile=[1] * 30 + [0] * 30)
    exp = expand_cyclic(sc.network)
    sol = branch_and_bound(build_mip(exp, sc.commodities), 0.0)
    fa = assign(exp, sc.commodities, sol.schedule)
    return sc, sol.schedule, fa


def _bands_by_x(bands):
    out = {}
    for b in bands:
        out.setdefault(b.x, []).append(b)
    return out


def test_bands_partition_cycle():
    sc, sched, fa = green_wave()
    bands, _segs = build_diagram(sc.network, sched, fa)
    gamma = sc.network.cycle_time
    for x, bs in _bands_by_x(bands).items():
        bs = sorted(bs, key=lambda b: b.start)
        assert bs[0].start == 0 and bs[-1].end == pytest.approx(gamma)
        assert all(a.end == pytest.approx(b.start) for a, b in zip(bs, bs[1:]))


def test_green_wave_crosses_only_green():
    sc, sched, fa = green_wave()
    free = 30 * sum(a.transit for a in sc.network.arcs) * sc.network.step_length
    assert fa.total_travel_time == pytest.approx(free)
    bands, segs = build_diagram(sc.network, sched, fa)
    gamma = sc.network.cycle_time
    by_x = _bands_by_x(bands)
    checked = 0
    for s in segs:
        assert s.t1 - s.t0 == pytest.approx(s.x1 - s.x0)  # free speed: slope one
        for x, t in ((s.x0, s.t0), (s.x1, s.t1)):
            if x not in by_x:
                continue
            t = t % gamma
            state = next(b.state for b in by_x[x] if b.start <= t + 1e-9 < b.end)
            assert state == "green"
            checked += 1
    assert checked > 0


def test_reverse_commodity_has_negative_slope():
    sc, sched, fa = green_wave(opposing=6.0)
    _bands, segs = build_diagram(sc.network, sched, fa)
    back = [s for s in segs if s.commodity == "opposing" and s.x0 != s.x1]
    fwd = [s for s in segs if s.commodity == "through" and s.x0 != s.x1]
    assert back and fwd
    assert all(s.x1 < s.x0 and s.t1 > s.t0 for s in back)
    assert all(s.x1 > s.x0 and s.t1 > s.t0 for s in fwd)


def test_no_commodities_draws_bands_only(tmp_path):
    sc = gen_arterial(3, 10, 12)
    with pytest.warns(UserWarning, match="signal bands only"):
        svg, csv_path = emit_greenband(sc.network, default_schedules(sc.network), None, tmp_path / "b.svg")
    rows = list(csv.reader(open(csv_path)))
    kinds = {r[0] for r in rows[1:]}
    assert kinds == {"meta", "band"}
    assert "<polygon" not in open(svg).read()


def test_csv_twin_regenerates_svg(tmp_path):
    sc, sched, fa = green_wave(opposing=6.0)
    svg, csv_path = emit_greenband(sc.network, sched, fa, tmp_path / "wave.svg")
    assert csv_path.endswith("wave.csv")
    text = open(svg).read()
    assert svg_from_csv(csv_path) == text
    # deterministic
    svg2, _ = emit_greenband(sc.network, sched, fa, tmp_path / "again.svg")
    assert open(svg2).read() == text
    assert text.startswith("<svg") and "polygon" in text
