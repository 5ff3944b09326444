from __future__ import annotations

import warnings

import pytest

from cyclenet.network import expand_cyclic, validate_network
from cyclenet.scenario import (
    ScenarioError,
    bundled,
    dumps_scenario,
    gen_arterial,
    gen_grid,
    loads_scenario,
    parse_scenario,
    random_schedules,
    write_scenario,
)
from conftest import fig1_network

MINIMAL = """\
schema_version: 1
cycle_time: 40 s
steps: 8
nodes: [a, b]
arcs:
  - {id: x, tail: a, head: b, capacity: 1 veh/step, transit: 2 steps}
"""


def test_bundled_fig1_matches_network():
    sc = bundled("fig1.scn")
    assert sc.network == fig1_network()
    exp = expand_cyclic(sc.network)
    assert (exp.n_nodes, exp.n_arcs - exp.n_waiting, exp.n_waiting) == (24, 16, 24)
    assert sc.commodities[0].origin == "v1" and sc.commodities[0].demand == 1.0
    assert sc.schedule.status("G").tolist() == [1, 1, 1, 1, 0, 0, 0, 1]


def test_unknown_field_reports_line():
    text = MINIMAL.replace("transit: 2 steps}", "transit: 2 steps, colour: red}")
    with pytest.raises(ScenarioError) as ei:
        loads_scenario(text)
    (line, fld, msg), = ei.value.errors
    assert line == 6
    assert "colour" in fld and "colour" in msg


def test_missing_unit_is_an_error():
    with pytest.raises(ScenarioError, match="unit"):
        loads_scenario(MINIMAL.replace("2 steps", "2"))


def test_wrong_schema_version():
    with pytest.raises(ScenarioError, match="schema version"):
        loads_scenario(MINIMAL.replace("schema_version: 1", "schema_version: 7"))


def test_veh_per_hour_capacity_is_converted_with_warning():
    # 5 s steps: 1000 veh/h = 1.39 veh/step -> 1
    text = MINIMAL.replace("1 veh/step", "1000 veh/h")
    with pytest.warns(UserWarning, match="rounded to 1"):
        sc = loads_scenario(text)
    assert sc.network.arc("x").capacity == 1
    assert sc.warnings
    # exact conversion stays silent
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        sc = loads_scenario(MINIMAL.replace("1 veh/step", "1440 veh/h"))
    assert sc.network.arc("x").capacity == 2


def test_seconds_are_rounded_to_steps():
    with pytest.warns(UserWarning, match="rounded to 2 steps"):
        sc = loads_scenario(MINIMAL.replace("2 steps", "11 s"))
    assert sc.network.arc("x").transit == 2


@pytest.mark.parametrize("make", [
    lambda: bundled("fig1"),
    lambda: gen_arterial(3, 20, 30, (30, 10), cross_street=True),
    lambda: gen_arterial(5, 24, 84, (40, 20), pedestrian=2),
    lambda: gen_grid(3, 3, 12, seed=4),
])
def test_round_trip_identity(make, tmp_path):
    sc = make()
    again = loads_scenario(dumps_scenario(sc))
    assert again == sc
    path = tmp_path / "s.scn"
    write_scenario(again, path)
    assert parse_scenario(path) == sc
    assert dumps_scenario(parse_scenario(path)) == dumps_scenario(sc)


def test_arterial_single_signal():
    sc = gen_arterial(1, 20, 60)
    assert not validate_network(sc.network).violations
    assert len(sc.network.intersections) == 1
    assert [c.id for c in sc.commodities] == ["through"]


def test_arterial_with_pedestrian_crossings():
    sc = gen_arterial(5, 24, 84, (40, 20), cycle_time=84, pedestrian=2)
    net = sc.network
    assert not validate_network(net).violations
    assert len(net.intersections) == 7
    ped = [g for ix in net.intersections for g in ix.groups if g.max_switches == 2]
    assert len(ped) == 2
    assert net.step_length == pytest.approx(1.0)


@pytest.mark.parametrize("n,k,cross", [(1, 12, False), (2, 60, False), (3, 24, True), (4, 30, True)])
def test_arterials_validate(n, k, cross):
    sc = gen_arterial(n, 10, k, (20, 5, 3), cross_street=cross)
    assert not validate_network(sc.network).violations


def test_grid_minimal_and_ring():
    small = gen_grid(2, 2, 12, ring=False)
    assert not validate_network(small.network).violations
    assert len(small.network.intersections) == 4
    big = gen_grid(4, 4, 24, ring=True)
    net = big.network
    assert not validate_network(net).violations
    assert len(net.intersections) == 16
    gates = [v for v in net.nodes if v.startswith("G")]
    assert len(gates) == 16
    ring = [a for a in net.arcs if a.id.startswith("ring")]
    assert len(ring) == 2 * len(gates)
    for c in big.commodities:
        assert c.origin in gates and c.destination in gates


def test_grid_seed_reproducible():
    a, b, c = gen_grid(3, 3, 12, seed=5), gen_grid(3, 3, 12, seed=5), gen_grid(3, 3, 12, seed=6)
    assert a == b
    assert a.commodities != c.commodities


def test_grid_opposite_pattern():
    sc = gen_grid(2, 3, 12, "opposite")
    assert len(sc.commodities) == 2 * (2 + 3)


def test_random_schedules_seeded():
    net = gen_arterial(3, 10, 12).network
    a = random_schedules(net, 4, 1)
    b = random_schedules(net, 4, 1)
    assert [s.groups == t.groups for s, t in zip(a, b)] == [True] * 4


def test_generator_rejects_bad_sizes():
    with pytest.raises(ValueError):
        gen_arterial(0, 10, 12)
    with pytest.raises(ValueError):
        gen_grid(1, 3, 12)


def test_solver_block_validated():
    sc = loads_scenario(MINIMAL + "solver: {gap: 0.01, time_limit: 30 s, method: highs, fix_symmetry: true}\n")
    assert sc.solver == {"gap": 0.01, "time_limit": 30.0, "method": "highs", "fix_symmetry": True}
    with pytest.raises(ScenarioError, match="solver.method"):
        loads_scenario(MINIMAL + "solver: {method: magic}\n")


def test_bundled_arterial_is_labelled_approximate():
    sc = bundled("arterial5")
    assert sc.notes.startswith("approximate")
    assert not validate_network(sc.network).violations
    assert sum(g.max_switches == 2 for ix in sc.network.intersections for g in ix.groups) == 2
