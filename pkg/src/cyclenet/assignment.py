"""Fixed-signal traffic assignment on the expanded network.

With every signal status fixed the program is a multicommodity min-cost
circulation, solved here as an LP through the same model builder the MIP
uses.  Results can be split into path flows and summarized per node.
"""

from __future__ import annotations

import csv
import heapq
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import networkx as nx
import numpy as np

from . import lp as lpmod
from .mip import Commodity, build_mip, solve_lp
from .network import ExpandedNetwork
from .signals import SignalSchedule, apply_schedule

FLOW_TOL = 1e-9
# relative surcharge on waiting at the origin; among equal-cost routings this
# makes vehicles depart when injected and queue where capacity binds
ORIGIN_WAIT_SURCHARGE = 1e-7


class AssignmentInfeasible(Exception):
    """Demand cannot be routed under the schedule.

    ``cut`` lists expanded arc labels of a saturated cut when one was found.
    """

    def __init__(self, message: str, commodity: str | None = None,
                 cut: Sequence[str] = (), cut_capacity: float | None = None, demand: float | None = None):
        super().__init__(message)
        self.commodity = commodity
        self.cut = list(cut)
        self.cut_capacity = cut_capacity
        self.demand = demand


class DecompositionError(ValueError):
    pass


@dataclass
class PathFlow:
    commodity: int
    arcs: tuple[int, ...]
    flow: float
    travel_time: float
    cycle: bool = False


@dataclass
class FlowAssignment:
    exp: ExpandedNetwork
    commodities: tuple[Commodity, ...]
    schedule: SignalSchedule | None
    flows: np.ndarray  # (commodities, expanded arcs)
    total_travel_time: float
    _paths: list[PathFlow] | None = field(default=None, repr=False)

    @property
    def aggregate(self) -> np.ndarray:
        return self.flows.sum(axis=0) if len(self.flows) else np.zeros(self.exp.n_arcs)

    def paths(self) -> list[PathFlow]:
        if self._paths is None:
            self._paths = decompose_paths(self)
        return self._paths


def _commodity_name(c: Commodity, i: int) -> str:
    return c.id or f"{c.origin}->{c.destination}#{i}"


def _min_cut(exp: ExpandedNetwork, caps: np.ndarray, com: Commodity) -> tuple[float, list[str]]:
    g = nx.DiGraph()
    k = exp.k
    for a in range(exp.n_arcs):
        u, v = int(exp.tail[a]), int(exp.head[a])
        if g.has_edge(u, v):
            cap = g[u][v].get("capacity", math.inf) + caps[a]
            g[u][v]["arcs"].append(a)
        else:
            g.add_edge(u, v, arcs=[a])
            cap = caps[a]
        if math.isinf(cap):
            g[u][v].pop("capacity", None)
        else:
            g[u][v]["capacity"] = cap
    inj = com.injection(k)
    for t in range(k):
        g.add_edge("S", exp.node_index(com.origin, t), capacity=float(inj[t]), arcs=[])
        g.add_edge(exp.node_index(com.destination, t), "T", arcs=[])
    value, (side, _other) = nx.minimum_cut(g, "S", "T")
    cut = []
    for u in side:
        for v in g.successors(u):
            if v not in side:
                cut.extend(exp.arc_label(a) for a in g[u][v]["arcs"])
    return value, sorted(cut)


def assign(
    exp: ExpandedNetwork,
    commodities: Sequence[Commodity],
    schedule: SignalSchedule | None = None,
    method: str = "auto",
) -> FlowAssignment:
    """Minimum total travel time routing of all commodities under a fixed schedule."""
    if schedule is None:
        groups = [a.group for a in exp.base.arcs if a.group is not None]
        schedule = SignalSchedule.always_green(exp.k, dict.fromkeys(groups))
    model = build_mip(exp, commodities, schedule=schedule)
    c = model.lp.c.copy()
    for th, com in enumerate(commodities):
        w = exp.waiting_index(com.origin, 0)
        cols = model.flow_col(th, w) + np.arange(exp.k)
        c[cols] *= 1.0 + ORIGIN_WAIT_SURCHARGE
    model.lp = replace(model.lp, c=c)
    sol = solve_lp(model, method=method)
    if sol.status == lpmod.INFEASIBLE:
        raise _explain(exp, commodities, schedule)
    if not sol.ok:
        raise lpmod.LpNumericalError(f"assignment LP ended with status {sol.status}")
    flows = np.array(model.flows(sol.x))
    flows[np.abs(flows) < FLOW_TOL] = 0.0
    total = float((flows * exp.cost).sum())
    return FlowAssignment(exp, tuple(commodities), schedule, flows, total)


def _explain(exp, commodities, schedule) -> AssignmentInfeasible:
    caps = apply_schedule(exp, schedule)
    for i, c in enumerate(commodities):
        value, cut = _min_cut(exp, caps, c)
        if value < c.demand - 1e-9:
            name = _commodity_name(c, i)
            return AssignmentInfeasible(
                f"commodity {name}: demand {c.demand:g} exceeds cut capacity {value:g}",
                commodity=name, cut=cut, cut_capacity=value, demand=c.demand,
            )
    return AssignmentInfeasible("demand cannot be routed jointly under the shared capacities")


def _check_conservation(fa: FlowAssignment) -> None:
    exp = fa.exp
    k = exp.k
    for th, c in enumerate(fa.commodities):
        f = fa.flows[th]
        bal = np.zeros(exp.n_nodes)
        np.add.at(bal, exp.tail, f)
        np.add.at(bal, exp.head, -f)
        s = exp.base.node_position(c.origin) * k
        z = exp.base.node_position(c.destination) * k
        bal[s:s + k] -= c.injection(k)
        zsum = bal[z:z + k].sum()
        bal[z:z + k] = 0.0
        scale = max(1.0, c.demand)
        if np.max(np.abs(bal), initial=0.0) > 1e-6 * scale or abs(zsum + c.demand) > 1e-6 * scale:
            raise DecompositionError(f"flow of commodity {_commodity_name(c, th)} does not conserve")


def decompose_paths(fa: FlowAssignment, tol: float = 1e-9) -> list[PathFlow]:
    """Split each commodity's flow into source-to-destination paths and cycles.

    Paths are peeled shortest first (by cost), ties going to the path whose
    arc labels compare smaller.  Leftover cycles of positive cost trigger a
    warning since an optimal flow never contains one.
    """
    _check_conservation(fa)
    exp = fa.exp
    k = exp.k
    labels = [exp.arc_label(a) for a in range(exp.n_arcs)]
    out_arcs = exp.out_arcs()
    result: list[PathFlow] = []
    for th, c in enumerate(fa.commodities):
        f = fa.flows[th].copy()
        f[f < tol] = 0.0
        s0 = exp.base.node_position(c.origin) * k
        z0 = exp.base.node_position(c.destination) * k
        supply = {s0 + t: v for t, v in enumerate(c.injection(k)) if v > tol}
        sinks = set(range(z0, z0 + k))
        while supply:
            path = _shortest(exp, f, out_arcs, labels, supply, sinks, tol)
            if path is None:
                break
            start = int(exp.tail[path[0]]) if path else None
            amount = min([f[a] for a in path] + [supply[start]])
            for a in path:
                f[a] -= amount
                if f[a] < tol:
                    f[a] = 0.0
            supply[start] -= amount
            if supply[start] <= tol:
                del supply[start]
            result.append(PathFlow(th, tuple(path), amount, float(exp.cost[list(path)].sum())))
        for cyc in _cycles(exp, f, out_arcs, tol):
            cost = float(exp.cost[list(cyc[0])].sum())
            if cost > 0:
                warnings.warn(f"commodity {_commodity_name(c, th)}: flow cycle of cost {cost:g} s")
            result.append(PathFlow(th, cyc[0], cyc[1], cost, cycle=True))
    return result


def _shortest(exp, f, out_arcs, labels, supply, sinks, tol):
    dist: dict[int, tuple[float, tuple[str, ...]]] = {}
    pred: dict[int, int] = {}
    heap = []
    for v in supply:
        if v in sinks:
            continue
        dist[v] = (0.0, ())
        heapq.heappush(heap, (0.0, (), v))
    done = set()
    while heap:
        d, key, v = heapq.heappop(heap)
        if v in done:
            continue
        done.add(v)
        if v in sinks:
            path = []
            while v in pred:
                a = pred[v]
                path.append(a)
                v = int(exp.tail[a])
            return path[::-1]
        for a in out_arcs[v]:
            if f[a] <= tol:
                continue
            w = int(exp.head[a])
            nd = (d + float(exp.cost[a]), key + (labels[a],))
            if w not in dist or nd < dist[w]:
                dist[w] = nd
                pred[w] = a
                heapq.heappush(heap, (nd[0], nd[1], w))
    return None


def _cycles(exp, f, out_arcs, tol):
    f = f.copy()
    cycles = []
    for start in range(exp.n_nodes):
        while True:
            seen: dict[int, int] = {}
            walk: list[int] = []
            v = start
            while v not in seen:
                nxt = [a for a in out_arcs[v] if f[a] > tol]
                if not nxt:
                    break
                seen[v] = len(walk)
                walk.append(nxt[0])
                v = int(exp.head[nxt[0]])
            else:
                cyc = tuple(walk[seen[v]:])
                amount = min(f[a] for a in cyc)
                for a in cyc:
                    f[a] -= amount
                    if f[a] <= tol:
                        f[a] = 0.0
                cycles.append((cyc, float(amount)))
                continue
            break
    return cycles


@dataclass
class CommodityTimes:
    commodity: str
    transit_seconds: float
    waiting_seconds: float

    @property
    def total(self) -> float:
        return self.transit_seconds + self.waiting_seconds


@dataclass
class TravelTimeReport:
    commodities: list[CommodityTimes]
    node_waiting: dict[str, float]
    signal_waiting: dict[str, float]
    total_travel_time: float


def travel_time_report(fa: FlowAssignment) -> TravelTimeReport:
    """Transit/waiting split per commodity, and waiting per node and signal.

    Waiting is attributed to the node whose waiting arcs carry it; the signal
    total sums the incoming nodes of each intersection.
    """
    exp = fa.exp
    nt = exp.n_transit
    rows = []
    node_wait = np.zeros(len(exp.base.nodes))
    for th, c in enumerate(fa.commodities):
        f = fa.flows[th]
        transit = float(f[:nt] @ exp.cost[:nt])
        wait = float(f[nt:] @ exp.cost[nt:])
        rows.append(CommodityTimes(_commodity_name(c, th), transit, wait))
        np.add.at(node_wait, exp.base_index[nt:], f[nt:] * exp.cost[nt:])
    node_waiting = {v: float(node_wait[i]) for i, v in enumerate(exp.base.nodes)}
    signal_waiting = {}
    for ix in exp.base.intersections:
        signal_waiting[ix.id] = float(sum(node_waiting[v] for v in ix.incoming_nodes))
    return TravelTimeReport(rows, node_waiting, signal_waiting, fa.total_travel_time)


def write_paths_csv(fa: FlowAssignment, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["commodity", "path", "flow", "travel_time_s"])
        for i, p in enumerate(fa.paths()):
            name = _commodity_name(fa.commodities[p.commodity], p.commodity)
            w.writerow([name, " ".join(fa.exp.arc_label(a) for a in p.arcs), f"{p.flow:.9g}", f"{p.travel_time:.9g}"])


def write_waiting_csv(fa: FlowAssignment, path) -> None:
    rep = travel_time_report(fa)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["signal", "waiting_seconds"])
        for sid, v in rep.signal_waiting.items():
            w.writerow([sid, f"{v:.9g}"])
