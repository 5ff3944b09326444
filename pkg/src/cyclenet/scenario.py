"""Scenario files and synthetic scenario generators.

Scenarios are YAML documents.  Every quantity carries its unit as a string,
for example ``"3 steps"``, ``"10 s"``, ``"1800 veh/h"`` or ``"12 veh/cycle"``.
Only the step count ``steps``, profile weights and solver tolerances are bare
numbers.  See ``docs/scenario-format.md`` for the full schema.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import yaml

from .mip import Commodity
from .network import (
    INTERIOR,
    ROAD,
    Arc,
    Intersection,
    Network,
    SignalGroup,
    round_steps,
    validate_network,
)
from .signals import SignalSchedule
from .simulator import UEParams

SCHEMA_VERSION = 1

_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z/]+)\s*$")


class ScenarioError(ValueError):
    """Located scenario problems: a list of ``(line, field, message)``."""

    def __init__(self, errors: Sequence[tuple[int | None, str, str]]):
        self.errors = list(errors)
        text = "; ".join(f"line {ln}: {fld}: {msg}" if ln else f"{fld}: {msg}" for ln, fld, msg in self.errors)
        super().__init__(text)


@dataclass
class Scenario:
    network: Network
    commodities: tuple[Commodity, ...] = ()
    schedule: SignalSchedule | None = None
    solver: dict[str, Any] = field(default_factory=dict)
    simulator: UEParams = field(default_factory=UEParams)
    name: str = ""
    notes: str = ""
    schema_version: int = SCHEMA_VERSION
    warnings: list[str] = field(default_factory=list, compare=False)


# ---------------------------------------------------------------------------
# parsing


class _Lines:
    """Maps key paths of the YAML document to source line numbers."""

    def __init__(self, text: str):
        self.lines: dict[tuple, int] = {}
        try:
            node = yaml.compose(text)
        except yaml.YAMLError:
            node = None
        if node is not None:
            self._walk(node, ())

    def _walk(self, node, path):
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = k.value
                self.lines[path + (key,)] = k.start_mark.line + 1
                self._walk(v, path + (key,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._walk(v, path + (i,))

    def __call__(self, path) -> int | None:
        path = tuple(path)
        while path not in self.lines and path:
            path = path[:-1]
        return self.lines.get(path)


class _Reader:
    def __init__(self, lines: _Lines):
        self.line = lines
        self.errors: list[tuple[int | None, str, str]] = []
        self.warnings: list[str] = []
        self.dt = 1.0
        self.cycle = 1.0

    def err(self, path, msg):
        self.errors.append((self.line(path), ".".join(str(p) for p in path), msg))

    def warn(self, path, msg):
        ln = self.line(path)
        text = f"line {ln}: {'.'.join(str(p) for p in path)}: {msg}"
        self.warnings.append(text)
        warnings.warn(text)

    def check_keys(self, obj, path, allowed, required=()):
        if not isinstance(obj, Mapping):
            self.err(path, "expected a mapping")
            return False
        for key in obj:
            if key not in allowed:
                self.err(tuple(path) + (key,), f"unknown field {key!r}")
        for key in required:
            if key not in obj:
                self.err(path, f"missing field {key!r}")
        return True

    def qty(self, value, path, units: Sequence[str]):
        if isinstance(value, bool) or not isinstance(value, str):
            self.err(path, f"expected a quantity with unit ({', '.join(units)}), got {value!r}")
            return None
        m = _QTY.match(value)
        if not m:
            self.err(path, f"cannot parse quantity {value!r}")
            return None
        x, unit = float(m.group(1)), m.group(2)
        if unit == "step":
            unit = "steps"
        if unit not in units:
            self.err(path, f"unit {unit!r} not allowed here (use {', '.join(units)})")
            return None
        return x, unit

    def steps(self, value, path, allow_zero=True):
        q = self.qty(value, path, ("steps", "s"))
        if q is None:
            return None
        x, unit = q
        if unit == "s":
            n, changed = round_steps(x, self.dt)
            if changed:
                self.warn(path, f"{x:g} s rounded to {n} steps")
        else:
            n = int(round(x))
            if n != x:
                self.err(path, "step counts must be integral")
                return None
        if n < 0 or (n == 0 and not allow_zero):
            self.err(path, "must be positive" if not allow_zero else "must be nonnegative")
            return None
        return n

    def capacity(self, value, path):
        q = self.qty(value, path, ("veh/step", "veh/s", "veh/h"))
        if q is None:
            return None
        x, unit = q
        per_step = {"veh/step": x, "veh/s": x * self.dt, "veh/h": x * self.dt / 3600.0}[unit]
        n = int(math.floor(per_step + 0.5))
        if not math.isclose(per_step, n, abs_tol=1e-9):
            self.warn(path, f"capacity {value} = {per_step:g} veh/step rounded to {n}")
        if n < 0:
            self.err(path, "capacity must be nonnegative")
            return None
        return n

    def demand(self, value, path):
        q = self.qty(value, path, ("veh/cycle", "veh/h"))
        if q is None:
            return None
        x, unit = q
        return x if unit == "veh/cycle" else x * self.cycle / 3600.0


_TOP = {"schema_version", "name", "notes", "cycle_time", "steps", "step_length", "nodes", "arcs",
        "intersections", "queue_caps", "commodities", "schedule", "solver", "simulator"}
_ARC = {"id", "tail", "head", "capacity", "transit", "length"}
_IX = {"id", "arcs", "groups", "conflicts", "clearance", "coupled_on", "fixed_order", "incoming", "outgoing"}
_GROUP = {"id", "min_green", "min_red", "max_switches"}
_COM = {"id", "origin", "destination", "demand", "profile"}
_SOLVER = {"gap", "time_limit", "node_limit", "method", "fix_symmetry"}
_SIM = {"rho", "plan_cap", "eps", "window", "max_iter", "warmup", "measure", "seed"}


def loads_scenario(text: str) -> Scenario:
    lines = _Lines(text)
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError([(mark.line + 1 if mark else None, "", f"invalid YAML: {exc}")]) from None
    r = _Reader(lines)
    if not r.check_keys(doc, (), _TOP, ("schema_version", "cycle_time", "steps", "nodes", "arcs")):
        raise ScenarioError(r.errors)
    ver = doc.get("schema_version")
    if ver != SCHEMA_VERSION:
        r.err(("schema_version",), f"unsupported schema version {ver!r} (expected {SCHEMA_VERSION})")
    k = doc.get("steps")
    if not isinstance(k, int) or isinstance(k, bool) or k < 1:
        r.err(("steps",), "steps must be a positive integer")
        raise ScenarioError(r.errors)
    q = r.qty(doc.get("cycle_time"), ("cycle_time",), ("s",))
    if q is None:
        raise ScenarioError(r.errors)
    cycle = q[0]
    r.cycle = cycle
    r.dt = cycle / k
    declared = None
    if "step_length" in doc:
        q = r.qty(doc["step_length"], ("step_length",), ("s",))
        declared = q[0] if q else None
        if declared is not None and not math.isclose(declared * k, cycle, rel_tol=1e-12):
            r.err(("step_length",), f"step length {declared:g} s x {k} steps != cycle time {cycle:g} s")

    nodes = doc.get("nodes") or []
    if not isinstance(nodes, list) or not all(isinstance(v, str) for v in nodes):
        r.err(("nodes",), "nodes must be a list of names")
        nodes = []

    interior: dict[str, str] = {}
    for i, ix in enumerate(doc.get("intersections") or []):
        if isinstance(ix, Mapping):
            for a, g in (ix.get("arcs") or {}).items():
                interior[str(a)] = str(g)

    arcs = []
    for i, a in enumerate(doc.get("arcs") or []):
        path = ("arcs", i)
        if not r.check_keys(a, path, _ARC, ("id", "tail", "head", "capacity", "transit")):
            continue
        cap = r.capacity(a.get("capacity"), path + ("capacity",))
        te = r.steps(a.get("transit"), path + ("transit",))
        length = None
        if "length" in a:
            lq = r.qty(a["length"], path + ("length",), ("m",))
            length = lq[0] if lq else None
        if cap is None or te is None:
            continue
        aid = str(a["id"])
        kind = INTERIOR if aid in interior else ROAD
        arcs.append(Arc(aid, str(a["tail"]), str(a["head"]), cap, te, kind, interior.get(aid), length))

    ixs = []
    for i, ix in enumerate(doc.get("intersections") or []):
        path = ("intersections", i)
        if not r.check_keys(ix, path, _IX, ("id", "arcs", "groups")):
            continue
        groups = []
        for j, g in enumerate(ix.get("groups") or []):
            gp = path + ("groups", j)
            if not r.check_keys(g, gp, _GROUP, ("id",)):
                continue
            mg = r.steps(g.get("min_green", "1 steps"), gp + ("min_green",), allow_zero=False)
            mr = r.steps(g.get("min_red", "1 steps"), gp + ("min_red",), allow_zero=False)
            sw = g.get("max_switches", 1)
            if not isinstance(sw, int) or sw < 1:
                r.err(gp + ("max_switches",), "max_switches must be a positive integer")
                sw = 1
            if mg is not None and mr is not None:
                groups.append(SignalGroup(str(g["id"]), mg, mr, sw))
        conflicts = frozenset(frozenset(map(str, p)) for p in ix.get("conflicts") or [])
        clearance = {}
        for j, c in enumerate(ix.get("clearance") or []):
            cp = path + ("clearance", j)
            if r.check_keys(c, cp, {"from", "to", "steps"}, ("from", "to", "steps")):
                n = r.steps(c["steps"], cp + ("steps",))
                if n is not None:
                    clearance[(str(c["from"]), str(c["to"]))] = n
        coupled = frozenset(frozenset(map(str, p)) for p in ix.get("coupled_on") or [])
        fixed = []
        for j, c in enumerate(ix.get("fixed_order") or []):
            cp = path + ("fixed_order", j)
            if r.check_keys(c, cp, {"from", "to", "lag"}, ("from", "to", "lag")):
                n = r.steps(c["lag"], cp + ("lag",))
                if n is not None:
                    fixed.append((str(c["from"]), str(c["to"]), n))
        arc_ids = [str(a) for a in (ix.get("arcs") or {})]
        by_id = {a.id: a for a in arcs}
        inc = ix.get("incoming") or list(dict.fromkeys(by_id[a].tail for a in arc_ids if a in by_id))
        out = ix.get("outgoing") or list(dict.fromkeys(by_id[a].head for a in arc_ids if a in by_id))
        ixs.append(Intersection(str(ix["id"]), tuple(map(str, inc)), tuple(map(str, out)), tuple(arc_ids),
                                tuple(groups), conflicts, clearance, coupled, tuple(fixed)))

    caps = {}
    for v, c in (doc.get("queue_caps") or {}).items():
        q = r.qty(c, ("queue_caps", v), ("veh",))
        if q is not None:
            caps[str(v)] = q[0]

    net = Network(tuple(nodes), tuple(arcs), cycle, k, tuple(ixs), caps, declared)
    if not r.errors:
        rep = validate_network(net)
        for v in rep.violations:
            section = "intersections" if "group" in v or "intersection" in v else "arcs"
            r.err((section,), v)

    coms = []
    for i, c in enumerate(doc.get("commodities") or []):
        path = ("commodities", i)
        if not r.check_keys(c, path, _COM, ("origin", "destination", "demand")):
            continue
        d = r.demand(c.get("demand"), path + ("demand",))
        prof = c.get("profile")
        if prof is not None:
            if not isinstance(prof, list) or len(prof) != k or not all(
                    isinstance(x, (int, float)) and not isinstance(x, bool) and x >= 0 for x in prof):
                r.err(path + ("profile",), f"profile must list {k} nonnegative weights")
                prof = None
            elif sum(prof) <= 0:
                r.err(path + ("profile",), "profile weights sum to zero")
                prof = None
            else:
                prof = tuple(float(x) for x in prof)
        for end in ("origin", "destination"):
            if c.get(end) not in nodes:
                r.err(path + (end,), f"unknown node {c.get(end)!r}")
        if d is not None:
            if d <= 0:
                r.err(path + ("demand",), "demand must be positive")
            else:
                coms.append(Commodity(str(c["origin"]), str(c["destination"]), d, prof, str(c.get("id", ""))))

    sched = None
    if doc.get("schedule") is not None:
        sdoc = doc["schedule"]
        if not isinstance(sdoc, Mapping):
            r.err(("schedule",), "schedule must map groups to (on, off) step pairs")
        else:
            known = {g.id for ix in ixs for g in ix.groups}
            ivs = {}
            for g, pairs in sdoc.items():
                if g not in known:
                    r.err(("schedule", g), f"unknown signal group {g!r}")
                    continue
                try:
                    ivs[g] = [(int(a), int(b)) for a, b in pairs]
                except (TypeError, ValueError):
                    r.err(("schedule", g), "expected a list of [on_step, off_step] pairs")
            missing = known - set(ivs)
            if missing and not r.errors:
                r.err(("schedule",), f"schedule lacks groups {sorted(missing)}")
            if not r.errors:
                sched = SignalSchedule.from_intervals(k, ivs)

    solver = {}
    if doc.get("solver") is not None:
        s = doc["solver"]
        if r.check_keys(s, ("solver",), _SOLVER):
            for key, val in s.items():
                if key == "time_limit":
                    q = r.qty(val, ("solver", key), ("s",))
                    solver[key] = q[0] if q else None
                    continue
                ok = {
                    "gap": isinstance(val, (int, float)) and not isinstance(val, bool) and val >= 0,
                    "node_limit": isinstance(val, int) and not isinstance(val, bool) and val >= 1,
                    "method": val in ("auto", "simplex", "highs"),
                    "fix_symmetry": isinstance(val, bool),
                }.get(key, False)
                if not ok:
                    r.err(("solver", key), f"invalid value {val!r}")
                solver[key] = val

    sim = UEParams()
    if doc.get("simulator") is not None:
        s = doc["simulator"]
        if r.check_keys(s, ("simulator",), _SIM):
            vals = {}
            for key, val in s.items():
                if key in ("warmup", "measure"):
                    q = r.qty(val, ("simulator", key), ("cycles",))
                    if q is not None:
                        vals[key] = int(q[0])
                else:
                    vals[key] = val
            sim = replace(sim, **vals)

    if r.errors:
        raise ScenarioError(r.errors)
    return Scenario(net, tuple(coms), sched, solver, sim, str(doc.get("name", "")), str(doc.get("notes", "")),
                    ver, r.warnings)


def parse_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return loads_scenario(fh.read())


def bundled(name: str) -> Scenario:
    """Load a scenario shipped with the package, e.g. ``"fig1.scn"``."""
    if not name.endswith(".scn"):
        name += ".scn"
    text = resources.files("cyclenet").joinpath("data").joinpath(name).read_text(encoding="utf-8")
    return loads_scenario(text)


# ---------------------------------------------------------------------------
# serialization


def _num(x: float) -> str:
    return f"{int(x)}" if float(x).is_integer() else repr(float(x))


def to_document(sc: Scenario) -> dict:
    net = sc.network
    doc: dict[str, Any] = {"schema_version": sc.schema_version}
    if sc.name:
        doc["name"] = sc.name
    if sc.notes:
        doc["notes"] = sc.notes
    doc["cycle_time"] = f"{_num(net.cycle_time)} s"
    doc["steps"] = net.steps
    if net.declared_step_length is not None:
        doc["step_length"] = f"{_num(net.declared_step_length)} s"
    doc["nodes"] = list(net.nodes)
    arcs = []
    for a in net.arcs:
        d = {"id": a.id, "tail": a.tail, "head": a.head, "capacity": f"{a.capacity} veh/step",
             "transit": f"{a.transit} steps"}
        if a.length_m is not None:
            d["length"] = f"{_num(a.length_m)} m"
        arcs.append(d)
    doc["arcs"] = arcs
    if net.intersections:
        ixs = []
        for ix in net.intersections:
            d = {
                "id": ix.id,
                "arcs": {a: net.arc(a).group for a in ix.turning_arcs},
                "incoming": list(ix.incoming_nodes),
                "outgoing": list(ix.outgoing_nodes),
                "groups": [{"id": g.id, "min_green": f"{g.min_green} steps", "min_red": f"{g.min_red} steps",
                            "max_switches": g.max_switches} for g in ix.groups],
            }
            if ix.conflicts:
                d["conflicts"] = sorted(sorted(p) for p in ix.conflicts)
            if ix.clearance:
                d["clearance"] = [{"from": a, "to": b, "steps": f"{c} steps"}
                                  for (a, b), c in sorted(ix.clearance.items())]
            if ix.coupled_on:
                d["coupled_on"] = sorted(sorted(p) for p in ix.coupled_on)
            if ix.fixed_order:
                d["fixed_order"] = [{"from": a, "to": b, "lag": f"{lag} steps"} for a, b, lag in ix.fixed_order]
            ixs.append(d)
        doc["intersections"] = ixs
    if net.queue_caps:
        doc["queue_caps"] = {v: f"{_num(c)} veh" for v, c in net.queue_caps.items()}
    if sc.commodities:
        coms = []
        for c in sc.commodities:
            d = {}
            if c.id:
                d["id"] = c.id
            d.update({"origin": c.origin, "destination": c.destination, "demand": f"{_num(c.demand)} veh/cycle"})
            if c.profile is not None:
                d["profile"] = [float(x) for x in c.profile]
            coms.append(d)
        doc["commodities"] = coms
    if sc.schedule is not None:
        doc["schedule"] = {g: [list(p) for p in s.intervals()] for g, s in sc.schedule.groups.items()}
    if sc.solver:
        doc["solver"] = {k: (f"{_num(v)} s" if k == "time_limit" and v is not None else v)
                         for k, v in sc.solver.items()}
    default = UEParams()
    simd = {}
    for key in _SIM:
        v = getattr(sc.simulator, key)
        if v != getattr(default, key):
            simd[key] = f"{v} cycles" if key in ("warmup", "measure") else v
    if simd:
        doc["simulator"] = dict(sorted(simd.items()))
    return doc


def dumps_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(to_document(sc), sort_keys=False, default_flow_style=None, width=100)


def write_scenario(sc: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_scenario(sc))


# ---------------------------------------------------------------------------
# generators


def gen_arterial(
    n_signals: int,
    spacing_seconds: float,
    k: int,
    demands: Sequence[float] = (30.0, 0.0),
    *,
    cycle_time: float = 60.0,
    capacity: int = 1,
    signal_capacity: int | None = None,
    green_steps: int | None = None,
    cross_street: bool = False,
    clearance: int = 1,
    pedestrian: int = 0,
    pedestrian_green: int | None = None,
    approach_steps: int = 1,
    through_profile: Sequence[float] | None = None,
) -> Scenario:
    """A chain of signals along one street.

    ``demands`` gives the through (west to east), opposing and per-signal
    side-road demand per cycle.  Without a cross street each signal has a single group whose green
    and red both last ``green_steps`` (default ``k // 2``).  With
    ``cross_street`` a second, conflicting group serves a side road.
    ``pedestrian`` inserts that many single-group crossings that switch twice
    per cycle, placed midway between consecutive signals.
    """
    if n_signals < 1:
        raise ValueError("need at least one signal")
    dt = cycle_time / k
    spacing, _ = round_steps(spacing_seconds, dt)
    if not 0 <= spacing < k:
        raise ValueError("spacing must be shorter than the cycle")
    sig_cap = signal_capacity if signal_capacity is not None else capacity
    half = green_steps if green_steps is not None else k // 2
    through, opposing, cross = (list(demands) + [0.0, 0.0, 0.0])[:3]
    dirs = ["e"] + (["w"] if opposing > 0 else [])

    if pedestrian > n_signals:
        raise ValueError("at most one pedestrian crossing per signal")
    # stations along the street; crossing i sits midway after signal i
    stations: list[tuple[str, str]] = []
    seg: list[int] = []  # transit steps between consecutive stations
    for i in range(1, n_signals + 1):
        if i > 1:
            seg.append(spacing - spacing // 2 if i - 1 <= pedestrian else spacing)
        stations.append(("sig", str(i)))
        if i <= pedestrian:
            seg.append(spacing // 2)
            stations.append(("ped", str(n_signals + i)))
    nodes = ["W", "E"]
    arcs: list[Arc] = []
    ixs: list[Intersection] = []
    for d in dirs:
        seq = stations if d == "e" else stations[::-1]
        gaps_d = seg if d == "e" else seg[::-1]
        prev = "W" if d == "e" else "E"
        for j, (_kind, sid) in enumerate(seq):
            a_in, a_out = f"{sid}{d}:in", f"{sid}{d}:out"
            nodes += [a_in, a_out]
            t = approach_steps if j == 0 else gaps_d[j - 1]
            arcs.append(Arc(f"r{prev}>{a_in}" if j == 0 else f"r{sid}{d}", prev, a_in, capacity, t))
            arcs.append(Arc(f"x{sid}{d}", a_in, a_out, sig_cap, 0, INTERIOR, f"{sid}A"))
            prev = a_out
        end = "E" if d == "e" else "W"
        arcs.append(Arc(f"r{prev}>{end}", prev, end, capacity, approach_steps))
    for kind, sid in stations:
        turn = [f"x{sid}{d}" for d in dirs]
        if kind == "ped":
            pg = pedestrian_green if pedestrian_green is not None else max(1, k // 8)
            groups = (SignalGroup(f"{sid}A", max(1, k // 8), pg, 2),)
            ixs.append(Intersection(sid, tuple(f"{sid}{d}:in" for d in dirs), tuple(f"{sid}{d}:out" for d in dirs),
                                    tuple(turn), groups))
            continue
        if cross_street:
            n_in, s_out = f"{sid}n:in", f"{sid}s:out"
            nodes += [f"N{sid}", f"S{sid}", n_in, s_out]
            arcs.append(Arc(f"rN{sid}", f"N{sid}", n_in, capacity, approach_steps))
            arcs.append(Arc(f"x{sid}n", n_in, s_out, sig_cap, 0, INTERIOR, f"{sid}B"))
            arcs.append(Arc(f"rS{sid}", s_out, f"S{sid}", capacity, approach_steps))
            turn.append(f"x{sid}n")
            ming = max(1, (k - 2 * clearance) // 4)
            groups = (SignalGroup(f"{sid}A", ming, ming), SignalGroup(f"{sid}B", ming, ming))
            ixs.append(Intersection(
                sid, tuple(f"{sid}{d}:in" for d in dirs) + (n_in,), tuple(f"{sid}{d}:out" for d in dirs) + (s_out,),
                tuple(turn), groups, frozenset({frozenset((f"{sid}A", f"{sid}B"))}),
                {(f"{sid}A", f"{sid}B"): clearance, (f"{sid}B", f"{sid}A"): clearance}))
        else:
            groups = (SignalGroup(f"{sid}A", half, k - half),)
            ixs.append(Intersection(sid, tuple(f"{sid}{d}:in" for d in dirs), tuple(f"{sid}{d}:out" for d in dirs),
                                    tuple(turn), groups))
    net = Network(tuple(nodes), tuple(arcs), float(cycle_time), k, tuple(ixs))
    coms = []
    if through > 0:
        coms.append(Commodity("W", "E", float(through),
                              None if through_profile is None else tuple(float(x) for x in through_profile), "through"))
    if opposing > 0:
        coms.append(Commodity("E", "W", float(opposing), None, "opposing"))
    if cross_street and cross > 0:
        for kind, sid in stations:
            if kind == "sig":
                coms.append(Commodity(f"N{sid}", f"S{sid}", float(cross), None, f"cross{sid}"))
    name = f"arterial-{n_signals}"
    notes = "synthetic arterial; pedestrian crossings approximate a mixed arterial" if pedestrian else "synthetic arterial"
    return Scenario(net, tuple(coms), None, {}, UEParams(), name, notes)


def gen_grid(
    rows: int,
    cols: int,
    k: int,
    demand_pattern: str = "random",
    *,
    ring: bool = True,
    seed: int = 0,
    n_commodities: int = 8,
    demand: float | None = None,
    cycle_time: float = 60.0,
    block_steps: int = 2,
    ring_steps: int = 2,
    gate_steps: int = 1,
    capacity: int = 2,
    signal_capacity: int = 1,
    clearance: int = 1,
) -> Scenario:
    """A signalized grid with boundary gates and an optional ring road.

    Each junction has one incoming node per approach and a single outgoing
    node; the north/south approaches form group ``NS``, east/west form
    ``EW``, and the two conflict with ``clearance`` all-red steps between.
    Commodities run between gates on the boundary.  ``demand_pattern`` is
    ``"random"`` (seeded gate pairs) or ``"opposite"`` (each gate to the gate
    straight across).
    """
    if rows < 2 or cols < 2:
        raise ValueError("grid needs at least 2 rows and 2 columns")
    rng = np.random.default_rng(seed)
    demand = float(k) if demand is None else float(demand)
    nodes: list[str] = []
    arcs: list[Arc] = []
    ixs: list[Intersection] = []

    def J(r, c):
        return f"J{r}_{c}"

    sides = {"n": (-1, 0), "s": (1, 0), "w": (0, -1), "e": (0, 1)}
    for r in range(rows):
        for c in range(cols):
            nodes.append(J(r, c))
            for s in sides:
                nodes.append(f"{J(r, c)}:{s}")
    # internal blocks: leaving J(r,c) towards the neighbour, entering its opposite side
    opposite = {"n": "s", "s": "n", "w": "e", "e": "w"}
    gates: list[tuple[str, int, int]] = []  # (side, r, c) of junctions on the boundary
    for r in range(rows):
        for c in range(cols):
            for s, (dr, dc) in sides.items():
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols:
                    arcs.append(Arc(f"b{J(r, c)}>{J(rr, cc)}", J(r, c), f"{J(rr, cc)}:{opposite[s]}", capacity, block_steps))
                else:
                    gates.append((s, r, c))
    # boundary gates in clockwise order starting at the north-west corner
    def gate_key(g):
        s, r, c = g
        if s == "n":
            return (0, c)
        if s == "e":
            return (1, r)
        if s == "s":
            return (2, -c)
        return (3, -r)

    gates.sort(key=gate_key)
    gate_names = []
    for i, (s, r, c) in enumerate(gates):
        gname = f"G{i}"
        gate_names.append(gname)
        nodes.append(gname)
        arcs.append(Arc(f"in{gname}", gname, f"{J(r, c)}:{s}", capacity, gate_steps))
        arcs.append(Arc(f"out{gname}", J(r, c), gname, capacity, gate_steps))
    if ring:
        m = len(gate_names)
        for i in range(m):
            a, b = gate_names[i], gate_names[(i + 1) % m]
            arcs.append(Arc(f"ring{a}>{b}", a, b, capacity, ring_steps))
            arcs.append(Arc(f"ring{b}>{a}", b, a, capacity, ring_steps))
    for r in range(rows):
        for c in range(cols):
            j = J(r, c)
            turn = []
            for s in sides:
                g = "NS" if s in "ns" else "EW"
                aid = f"x{j}:{s}"
                arcs.append(Arc(aid, f"{j}:{s}", j, signal_capacity, 0, INTERIOR, f"{j}.{g}"))
                turn.append(aid)
            ming = max(1, (k - 2 * clearance) // 4)
            gNS, gEW = f"{j}.NS", f"{j}.EW"
            ixs.append(Intersection(
                j, tuple(f"{j}:{s}" for s in sides), (j,), tuple(turn),
                (SignalGroup(gNS, ming, ming), SignalGroup(gEW, ming, ming)),
                frozenset({frozenset((gNS, gEW))}), {(gNS, gEW): clearance, (gEW, gNS): clearance}))
    net = Network(tuple(nodes), tuple(arcs), float(cycle_time), k, tuple(ixs))

    m = len(gate_names)
    coms = []
    if demand_pattern == "random":
        pairs = set()
        while len(pairs) < min(n_commodities, m * (m - 3)):
            a, b = (int(x) for x in rng.choice(m, size=2, replace=False))
            if min((a - b) % m, (b - a) % m) < 2:
                continue
            pairs.add((a, b))
        for a, b in sorted(pairs):
            coms.append(Commodity(gate_names[a], gate_names[b], demand, None, f"{gate_names[a]}-{gate_names[b]}"))
    elif demand_pattern == "opposite":
        for (s, r, c), g in zip(gates, gate_names):
            for (s2, r2, c2), g2 in zip(gates, gate_names):
                if s2 == opposite[s] and ((s in "ns" and c2 == c) or (s in "we" and r2 == r)):
                    coms.append(Commodity(g, g2, demand, None, f"{g}-{g2}"))
    else:
        raise ValueError(f"unknown demand pattern {demand_pattern!r}")
    return Scenario(net, tuple(coms), None, {}, UEParams(seed=seed), f"grid-{rows}x{cols}",
                    "synthetic grid" + (" with ring road" if ring else ""))


def default_schedules(net: Network) -> SignalSchedule:
    from .signals import default_schedule

    groups = {}
    for ix in net.intersections:
        groups.update(default_schedule(ix, net.steps).groups)
    return SignalSchedule(net.steps, groups)


def random_schedules(net: Network, n: int, seed: int) -> list[SignalSchedule]:
    """Default schedules with a random offset per intersection."""
    base = default_schedules(net)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        s = base
        for ix in net.intersections:
            s = s.shifted(int(rng.integers(net.steps)), ix.group_ids)
        out.append(s)
    return out
