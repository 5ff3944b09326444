from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cyclenet.assignment import (
    AssignmentInfeasible,
    assign,
    decompose_paths,
    travel_time_report,
    write_paths_csv,
    write_waiting_csv,
)
from cyclenet.mip import Commodity, build_mip, solve_lp
from cyclenet.network import Arc, expand_cyclic, make_network

from conftest import fig1_network, fig1_red_schedule, pulse
from oracles import path_flow_optimum


def test_no_signals_single_path():
    net = make_network(["a", "b", "c"], [Arc("x", "a", "b", 5, 2), Arc("y", "b", "c", 5, 3)], 20, 10)
    fa = assign(expand_cyclic(net), [Commodity("a", "c", 3.0)])
    assert fa.total_travel_time == pytest.approx(3.0 * 5 * 2.0)


def test_fig1_injection_at_step_3_waits_once(fig1):
    exp = expand_cyclic(fig1)
    fa = assign(exp, [Commodity("v1", "v3", 1.0, pulse(8, 3), "c1")], fig1_red_schedule())
    paths = fa.paths()
    assert len(paths) == 1
    labels = [exp.arc_label(a) for a in paths[0].arcs]
    assert labels == ["e1@3", "wait:v2@6", "e2@7"]
    dt = fig1.step_length
    assert fa.total_travel_time == pytest.approx((3 + 1 + 1) * dt)
    rep = travel_time_report(fa)
    assert rep.signal_waiting["I"] == pytest.approx(dt)


def test_fig1_injection_at_step_4_no_wait(fig1):
    exp = expand_cyclic(fig1)
    fa = assign(exp, [Commodity("v1", "v3", 1.0, pulse(8, 4))], fig1_red_schedule())
    assert fa.total_travel_time == pytest.approx(4 * fig1.step_length)


def test_same_optimum_as_model_lp(fig1, fig1_commodity):
    exp = expand_cyclic(fig1)
    fa = assign(exp, [fig1_commodity], fig1_red_schedule())
    sol = solve_lp(build_mip(exp, [fig1_commodity], schedule=fig1_red_schedule()))
    assert fa.total_travel_time == pytest.approx(sol.objective)
    assert fa.total_travel_time == pytest.approx(23.75)


def test_infeasible_reports_cut(fig1):
    exp = expand_cyclic(fig1)
    with pytest.raises(AssignmentInfeasible) as info:
        assign(exp, [Commodity("v1", "v3", 9.0, id="big")], fig1_red_schedule())
    err = info.value
    assert err.commodity == "big"
    assert err.cut_capacity == pytest.approx(5.0)
    assert err.demand == 9.0
    assert all(label.startswith("e2@") for label in err.cut)


def _parallel():
    net = make_network(["s", "t"], [Arc("cheap", "s", "t", 5, 10), Arc("dear", "s", "t", 5, 20)], 21, 21,
                       queue_caps={"s": 0, "t": 0})
    return expand_cyclic(net)


def test_decomposition_two_paths():
    exp = _parallel()
    fa = assign(exp, [Commodity("s", "t", 8.0, pulse(21, 0))])
    assert fa.total_travel_time == pytest.approx(110.0)
    paths = sorted(fa.paths(), key=lambda p: p.travel_time)
    assert [p.flow for p in paths] == pytest.approx([5.0, 3.0])
    assert [p.travel_time for p in paths] == pytest.approx([10.0, 20.0])
    assert [exp.arc_label(p.arcs[0]) for p in paths] == ["cheap@0", "dear@0"]


def test_zero_flow_empty_decomposition():
    exp = _parallel()
    fa = assign(exp, [])
    assert decompose_paths(fa) == []
    assert fa.total_travel_time == 0.0


def test_free_flow_zero_waiting():
    net = make_network(["a", "b"], [Arc("x", "a", "b", 5, 2)], 10, 10)
    fa = assign(expand_cyclic(net), [Commodity("a", "b", 1.0)])
    rep = travel_time_report(fa)
    assert all(v == 0 for v in rep.node_waiting.values())
    assert rep.commodities[0].waiting_seconds == 0


def test_csv_emitters(tmp_path, fig1):
    fa = assign(expand_cyclic(fig1), [Commodity("v1", "v3", 1.0, pulse(8, 3), "c1")], fig1_red_schedule())
    write_paths_csv(fa, tmp_path / "p.csv")
    write_waiting_csv(fa, tmp_path / "w.csv")
    rows = list(csv.reader(open(tmp_path / "p.csv")))
    assert rows[1][:2] == ["c1", "e1@3 wait:v2@6 e2@7"]
    rows = list(csv.reader(open(tmp_path / "w.csv")))
    assert rows[1][0] == "I" and float(rows[1][1]) == pytest.approx(5.0)


@st.composite
def instances(draw):
    k = draw(st.integers(2, 6))
    n = draw(st.integers(2, 4))
    nodes = [f"v{i}" for i in range(n)]
    arcs = [Arc(f"p{i}", nodes[i], nodes[i + 1], draw(st.integers(1, 3)), draw(st.integers(0, k - 1)))
            for i in range(n - 1)]
    for j in range(draw(st.integers(0, 2))):
        a, b = draw(st.sampled_from([(x, y) for x in nodes for y in nodes if x != y]))
        arcs.append(Arc(f"q{j}", a, b, draw(st.integers(0, 2)), draw(st.integers(0, k - 1))))
    caps = {v: draw(st.sampled_from([0, 1, 5])) for v in nodes if draw(st.booleans())}
    net = make_network(nodes, arcs, float(2 * k), k, queue_caps=caps)
    coms = [Commodity(nodes[0], nodes[-1], draw(st.sampled_from([0.5, 1.0, 2.0])),
                      tuple(draw(st.lists(st.integers(1, 3), min_size=k, max_size=k))))]
    return net, coms


@settings(max_examples=40, deadline=None)
@given(instances())
def test_properties_against_path_oracle(case):
    net, coms = case
    exp = expand_cyclic(net)
    ref = path_flow_optimum(net, coms)
    try:
        fa = assign(exp, coms)
    except AssignmentInfeasible:
        assert ref is None
        return
    assert ref is not None
    assert fa.total_travel_time == pytest.approx(ref, rel=1e-6, abs=1e-9)
    # accounting identity
    rep = travel_time_report(fa)
    total = sum(c.total for c in rep.commodities)
    assert total == pytest.approx(fa.total_travel_time)
    transit = sum(c.transit_seconds for c in rep.commodities)
    assert transit + sum(rep.node_waiting.values()) == pytest.approx(fa.total_travel_time)
    # decomposition reproduces every arc flow
    paths = fa.paths()
    rebuilt = np.zeros_like(fa.flows)
    for p in paths:
        for a in p.arcs:
            rebuilt[p.commodity, a] += p.flow
    assert np.allclose(rebuilt, fa.flows, atol=1e-7)
    assert sum(p.flow for p in paths if not p.cycle) == pytest.approx(coms[0].demand)
