"""Discrete-time link-queue simulation with agents and best-response replanning.

Vehicles are unit particles.  Every agent owns one slot in the cycle and
sends a vehicle along its current plan once per cycle.  A vehicle entering
arc ``e`` in step ``T`` reaches the head in step ``T + t_e`` and joins the
arc's exit queue, which is served strictly first in, first out.  It may enter
its next arc when the light is green, fewer than ``u(e)`` vehicles entered
that arc this step and, if the downstream node has a queue limit, there is
room left on the arc.  Zero-transit chains are resolved within the step by
repeated round-robin passes over the exit queues.
"""

from __future__ import annotations

import csv
import heapq
import json
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import networkx as nx
import numpy as np

from .mip import Commodity
from .network import INTERIOR, Network
from .signals import SignalSchedule


class GridlockError(RuntimeError):
    def __init__(self, message: str, cycle: int):
        super().__init__(message)
        self.cycle = cycle


class SimulationError(RuntimeError):
    pass


@dataclass
class AgentPlan:
    agent: int
    commodity: int
    route: tuple[str, ...]  # base arc ids
    departure: int  # step within the cycle
    score: float | None = None

    def nodes(self, net: Network) -> list[str]:
        if not self.route:
            return []
        out = [net.arc(self.route[0]).tail]
        out.extend(net.arc(a).head for a in self.route)
        return out


@dataclass
class SimResult:
    step_length: float
    k: int
    agent_times: np.ndarray  # mean realized travel time per agent, seconds
    link_queues: dict[str, np.ndarray]  # mean exit-queue length per cycle step
    delays: dict[tuple[str, int], float]  # mean wait (steps) before entering arc at phase
    counts: np.ndarray  # (steps, 3): injected, arrived, in network
    events: list[tuple[int, int, str, str]] | None = None
    fifo_ok: bool = True

    @property
    def total(self) -> float:
        return float(self.agent_times.sum())

    def to_bytes(self) -> bytes:
        doc = {
            "times": [repr(float(x)) for x in self.agent_times],
            "queues": {a: [repr(float(x)) for x in q] for a, q in sorted(self.link_queues.items())},
            "delays": sorted([a, p, repr(v)] for (a, p), v in self.delays.items()),
            "counts": self.counts.tolist(),
        }
        return json.dumps(doc, separators=(",", ":")).encode()


def agent_slots(com: Commodity, k: int) -> list[int]:
    """Departure steps of the agents of one commodity, following its profile."""
    n = int(round(com.demand))
    if abs(n - com.demand) > 1e-9:
        warnings.warn(f"demand {com.demand:g} rounded to {n} agents per cycle")
    w = com.injection(k) / com.demand
    cum = np.floor(n * np.cumsum(w) + 1e-9).astype(int)
    counts = np.diff(np.concatenate([[0], cum]))
    return [t for t in range(k) for _ in range(counts[t])]


def signal_wait(net: Network, sched: SignalSchedule | None, arc_id: str, phase: int) -> int:
    a = net.arc(arc_id)
    if a.kind != INTERIOR or sched is None:
        return 0
    st = sched.status(a.group)
    k = net.steps
    for w in range(k):
        if st[(phase + w) % k]:
            return w
    return k * 10**6  # never green


def route_search(
    net: Network,
    origin: str,
    destination: str,
    phase: int,
    wait: Callable[[str, int], int],
) -> tuple[str, ...] | None:
    """Earliest-arrival route over (node, phase) states with step-integral waits.

    Ties go to the route whose arc ids compare smaller.
    """
    k = net.steps
    start = (origin, phase % k)
    heap = [(0, (), origin, phase % k)]
    best: dict[tuple[str, int], tuple[int, tuple]] = {start: (0, ())}
    done = set()
    out = {v: [] for v in net.nodes}
    for a in net.arcs:
        out[a.tail].append(a)
    while heap:
        d, path, v, ph = heapq.heappop(heap)
        if (v, ph) in done:
            continue
        done.add((v, ph))
        if v == destination:
            return path
        for a in out[v]:
            w = wait(a.id, ph)
            if w >= k * 10**6:
                continue
            nd = d + w + a.transit
            nph = (ph + w + a.transit) % k
            key = (nd, path + (a.id,))
            st = (a.head, nph)
            if st not in best or key < best[st]:
                best[st] = key
                heapq.heappush(heap, (nd, path + (a.id,), a.head, nph))
    return None


def route_time(net: Network, route: Sequence[str], phase: int, wait: Callable[[str, int], int]) -> int:
    """Predicted steps along ``route`` starting at ``phase`` under ``wait``."""
    by_id = {a.id: a for a in net.arcs}
    d = 0
    for arc_id in route:
        ph = (phase + d) % net.steps
        d += wait(arc_id, ph) + by_id[arc_id].transit
    return d


def initial_plans(net: Network, sched: SignalSchedule | None, commodities: Sequence[Commodity]) -> list[AgentPlan]:
    plans = []
    for ci, com in enumerate(commodities):
        for t in agent_slots(com, net.steps):
            r = route_search(net, com.origin, com.destination, t,
                             lambda a, p: signal_wait(net, sched, a, p))
            if r is None:
                raise SimulationError(f"no route from {com.origin} to {com.destination}")
            plans.append(AgentPlan(len(plans), ci, r, t))
    return plans


def simulate(
    net: Network,
    schedule: SignalSchedule | None,
    plans: Sequence[AgentPlan],
    warmup: int = 5,
    measure: int = 20,
    spillback: bool = True,
    log_events: bool = False,
    drain_cycles: int = 50,
) -> SimResult:
    k = net.steps
    dt = net.step_length
    arcs = list(net.arcs)
    apos = {a.id: i for i, a in enumerate(arcs)}
    nA = len(arcs)
    cap = [a.capacity for a in arcs]
    te = [a.transit for a in arcs]
    green = []
    for a in arcs:
        if a.kind == INTERIOR:
            if schedule is None or a.group not in schedule.groups:
                raise SimulationError(f"schedule lacks group {a.group!r}")
            green.append(schedule.status(a.group).astype(bool))
        else:
            green.append(None)
    space = []
    for a in arcs:
        q = net.queue_capacity(a.head) if spillback else math.inf
        space.append(q + a.capacity * max(a.transit, 1) if math.isfinite(q) else math.inf)
    routes = [tuple(apos[x] for x in p.route) for p in plans]
    for p, r in zip(plans, routes):
        if not r:
            raise SimulationError(f"agent {p.agent} has an empty route")
    origin_of = [net.arc(p.route[0]).tail for p in plans]
    by_step: dict[int, list[int]] = {}
    for i, p in enumerate(plans):
        by_step.setdefault(p.departure % k, []).append(i)

    # queues: one exit queue per arc plus, at each origin, one queue per first arc
    nodes = list(net.nodes)
    npos = {v: i for i, v in enumerate(nodes)}
    arc_q: list[deque] = [deque() for _ in range(nA)]
    orig_q: list[deque] = [deque() for _ in range(nA)]
    incoming: list[list[tuple[str, int]]] = [[] for _ in nodes]
    for i, a in enumerate(arcs):
        incoming[npos[a.tail]].append(("o", i))
    for i, a in enumerate(arcs):
        incoming[npos[a.head]].append(("a", i))

    # vehicle state
    v_agent: list[int] = []
    v_depart: list[int] = []
    v_idx: list[int] = []
    v_ready: list[int] = []
    arc_seq_in = [0] * nA
    arc_seq_out = [0] * nA
    v_seq: list[int] = []

    total_cycles = warmup + measure
    sums = np.zeros(len(plans))
    cnt = np.zeros(len(plans))
    pending = 0  # measured vehicles still travelling
    qsum = np.zeros((nA, k))
    qcycles = 0
    dsum: dict[tuple[int, int], float] = {}
    dcnt: dict[tuple[int, int], int] = {}
    events = [] if log_events else None
    counts = []
    injected = arrived = 0
    fifo_ok = True
    stall = 0
    T = 0
    max_T = (total_cycles + drain_cycles) * k
    while True:
        cyc = T // k
        if cyc >= total_cycles and pending == 0:
            break
        if T >= max_T:
            raise SimulationError("measured vehicles did not finish within the drain limit")
        phase = T % k
        measured_cycle = warmup <= cyc < total_cycles
        for i in by_step.get(phase, ()):
            vid = len(v_agent)
            v_agent.append(i)
            v_depart.append(T)
            v_idx.append(0)
            v_ready.append(T)
            v_seq.append(-1)
            orig_q[routes[i][0]].append(vid)
            injected += 1
            if measured_cycle:
                pending += 1
            if events is not None:
                events.append((T, i, origin_of[i], "depart"))
        entries = [0] * nA
        moved = 0
        rot = T % max(len(nodes), 1)
        order = nodes[rot:] + nodes[:rot]
        while True:
            moved_pass = 0
            for v in order:
                inc = incoming[npos[v]]
                if not inc:
                    continue
                r = T % len(inc)
                for kind, qi in inc[r:] + inc[:r]:
                    q = orig_q[qi] if kind == "o" else arc_q[qi]
                    if not q:
                        continue
                    vid = q[0]
                    if v_ready[vid] > T:
                        continue
                    ag = v_agent[vid]
                    route = routes[ag]
                    if v_idx[vid] >= len(route):
                        q.popleft()
                        if kind == "a":
                            fifo_ok &= v_seq[vid] == arc_seq_out[qi]
                            arc_seq_out[qi] += 1
                        arrived += 1
                        moved_pass += 1
                        if v_depart[vid] // k in range(warmup, total_cycles):
                            sums[ag] += (T - v_depart[vid]) * dt
                            cnt[ag] += 1
                            pending -= 1
                        if events is not None:
                            events.append((T, ag, v, "arrive"))
                        continue
                    e = route[v_idx[vid]]
                    if green[e] is not None and not green[e][phase]:
                        continue
                    if entries[e] >= cap[e] or len(arc_q[e]) >= space[e]:
                        continue
                    q.popleft()
                    if kind == "a":
                        fifo_ok &= v_seq[vid] == arc_seq_out[qi]
                        arc_seq_out[qi] += 1
                    if measured_cycle:
                        key = (e, v_ready[vid] % k)
                        dsum[key] = dsum.get(key, 0.0) + (T - v_ready[vid])
                        dcnt[key] = dcnt.get(key, 0) + 1
                    entries[e] += 1
                    v_idx[vid] += 1
                    v_ready[vid] = T + te[e]
                    v_seq[vid] = arc_seq_in[e]
                    arc_seq_in[e] += 1
                    arc_q[e].append(vid)
                    moved_pass += 1
                    if events is not None:
                        events.append((T, ag, v, f"enter {arcs[e].id}"))
            moved += moved_pass
            if moved_pass == 0:
                break
        in_net = injected - arrived
        counts.append((injected, arrived, in_net))
        if measured_cycle:
            for e in range(nA):
                if arc_q[e]:
                    qsum[e, phase] += sum(1 for vid in arc_q[e] if v_ready[vid] <= T)
            if phase == k - 1:
                qcycles += 1
        if moved == 0 and in_net > 0 and all(v_ready[vid] <= T for q in arc_q for vid in q):
            stall += 1
            if stall >= k:
                raise GridlockError(f"no vehicle moved for a full cycle ending in cycle {cyc}", cyc)
        else:
            stall = 0
        T += 1

    with np.errstate(invalid="ignore"):
        times = np.where(cnt > 0, sums / np.maximum(cnt, 1), np.nan)
    link_queues = {arcs[e].id: qsum[e] / max(qcycles, 1) for e in range(nA)}
    delays = {(arcs[e].id, p): dsum[(e, p)] / dcnt[(e, p)] for (e, p) in dsum}
    return SimResult(dt, k, times, link_queues, delays, np.array(counts, dtype=np.int64), events, fifo_ok)


# ---------------------------------------------------------------------------
# best response


@dataclass
class UEParams:
    rho: float = 0.9
    plan_cap: int = 4
    eps: float = 1e-3
    window: int = 5
    max_iter: int = 60
    warmup: int = 5
    measure: int = 20
    seed: int = 0


@dataclass
class UEState:
    net: Network
    schedule: SignalSchedule | None
    commodities: tuple[Commodity, ...]
    plan_sets: list[list[AgentPlan]]
    selected: list[int]
    iteration: int = 0
    last: SimResult | None = None
    # agents that switched to a different plan on their replanning turn, with the
    # score and route of the plan they left
    trials: dict[int, tuple[float, tuple[str, ...]]] = field(default_factory=dict)

    def settled_routes(self) -> list[tuple[str, ...]]:
        """Current routes with trial agents counted on the route they left."""
        return [self.trials[i][1] if i in self.trials else p.route for i, p in enumerate(self.current())]

    def current(self) -> list[AgentPlan]:
        return [ps[s] for ps, s in zip(self.plan_sets, self.selected)]

    def best_index(self, i: int) -> int:
        """Best-scored plan of agent ``i``; ties stay with the selected plan, then the oldest."""
        ps, sel = self.plan_sets[i], self.selected[i]
        return max(range(len(ps)), key=lambda j: (-math.inf if ps[j].score is None else ps[j].score, j == sel, -j))

    def best(self) -> list[AgentPlan]:
        return [self.plan_sets[i][self.best_index(i)] for i in range(len(self.plan_sets))]

    def best_scores(self) -> np.ndarray:
        return np.array([max((p.score for p in ps if p.score is not None), default=-math.inf)
                         for ps in self.plan_sets])


def _record_scores(state: UEState, res: SimResult) -> None:
    for i, (ps, s) in enumerate(zip(state.plan_sets, state.selected)):
        t = res.agent_times[i]
        if np.isfinite(t):
            ps[s].score = -float(t)
    state.last = res


def replan_period(rho: float) -> int | None:
    """Iterations between two replanning turns of one agent; ``None`` means never."""
    if rho >= 1.0:
        return None
    return max(1, int(round(1.0 / (1.0 - rho))))


def _replans(seed: int, agent: int, iteration: int, period: int | None) -> bool:
    # each agent draws a fixed phase from its own stream and replans once per period,
    # so a share 1 - rho of the agents replans in every iteration
    if period is None:
        return False
    phase = int(np.random.default_rng([seed, agent]).integers(period))
    return iteration % period == phase


def best_response_step(state: UEState, rerandomize_fraction: float | None = None,
                       params: UEParams | None = None) -> UEState:
    """Agents on their replanning turn try a fresh shortest route; the rest keep their best plan."""
    params = params or UEParams()
    rho = params.rho if rerandomize_fraction is None else 1.0 - rerandomize_fraction
    if state.last is None:
        raise SimulationError("best_response_step needs a simulated state")
    net = state.net
    k = net.steps
    delays = state.last.delays

    def wait(arc_id: str, ph: int) -> int:
        d = delays.get((arc_id, ph))
        if d is None:
            return signal_wait(net, state.schedule, arc_id, ph)
        return int(round(d))

    period = replan_period(rho)
    new_sets, new_sel = [], []
    trials: dict[int, tuple[float, tuple[str, ...]]] = {}
    for i, (ps, sel) in enumerate(zip(state.plan_sets, state.selected)):
        ps = list(ps)
        if not _replans(params.seed, i, state.iteration, period):
            best = state.best_index(i)
            new_sets.append(ps)
            new_sel.append(best)
            continue
        cur = ps[sel]
        if cur.score is not None:
            trials[i] = (cur.score, cur.route)
        com = state.commodities[cur.commodity]
        r = route_search(net, com.origin, com.destination, cur.departure, wait)
        if r is None or (r != cur.route
                         and route_time(net, r, cur.departure, wait) >= route_time(net, cur.route, cur.departure, wait)):
            # no strictly faster route: stay put
            new_sets.append(ps)
            new_sel.append(sel)
            continue
        for j, p in enumerate(ps):
            if p.route == r:
                new_sets.append(ps)
                new_sel.append(j)
                break
        else:
            ps.append(AgentPlan(cur.agent, cur.commodity, r, cur.departure))
            if len(ps) > params.plan_cap:
                worst = min(range(len(ps) - 1),
                            key=lambda j: (math.inf if ps[j].score is None else ps[j].score, j))
                ps.pop(worst)
            new_sets.append(ps)
            new_sel.append(len(ps) - 1)
    trials = {i: v for i, v in trials.items() if new_sets[i][new_sel[i]].route != state.current()[i].route}
    return UEState(net, state.schedule, state.commodities, new_sets, new_sel, state.iteration + 1, state.last, trials)


@dataclass
class UEReport:
    converged: bool
    iterations: int
    totals: list[float]
    improvements: list[float]
    status: str


def _unique_routes(net: Network, commodities: Sequence[Commodity]) -> bool:
    g = nx.MultiDiGraph()
    g.add_nodes_from(net.nodes)
    for a in net.arcs:
        g.add_edge(a.tail, a.head)
    for c in commodities:
        n = 0
        for _ in nx.all_simple_edge_paths(g, c.origin, c.destination):
            n += 1
            if n > 1:
                return False
    return True


def solve_user_equilibrium(
    net: Network,
    schedule: SignalSchedule | None,
    commodities: Sequence[Commodity],
    params: UEParams | None = None,
) -> tuple[SimResult, UEReport]:
    """Replan until no agent's best score improves by more than ``eps`` for ``window`` iterations.

    The returned result simulates every agent on its best plan.
    """
    params = params or UEParams()
    plans = initial_plans(net, schedule, commodities)
    state = UEState(net, schedule, tuple(commodities), [[p] for p in plans], [0] * len(plans))
    totals: list[float] = []
    improvements: list[float] = []
    unique = _unique_routes(net, commodities)
    quiet = 0
    # a quiet stretch must give every agent at least one replanning turn
    period = replan_period(params.rho)
    need = max(params.window, period or 0)
    converged = False
    prev_routes = None
    for it in range(params.max_iter):
        res = simulate(net, schedule, state.current(), params.warmup, params.measure)
        _record_scores(state, res)
        totals.append(res.total)
        # progress: an agent that tried a new plan scored better than with the plan it left
        if it > 0:
            gains = [(-res.agent_times[i] - old) / max(abs(old), 1e-12) for i, (old, _r) in state.trials.items()]
            improvements.append(float(max(gains, default=0.0)))
            routes = state.settled_routes()
            quiet = quiet + 1 if improvements[-1] < params.eps and routes == prev_routes else 0
        prev_routes = state.settled_routes()
        # stop only in a state without exploratory moves in it
        if unique or (quiet >= need and not state.trials):
            converged = True
            break
        state = best_response_step(state, params=params)
    # settle: everyone takes the best plan until the choice is stable, so that
    # the reported state was simulated with fresh scores for every chosen plan
    final = res if params.max_iter > 0 else simulate(net, schedule, state.current(), params.warmup, params.measure)
    for _ in range(max(params.window, 1)):
        sel = [state.best_index(i) for i in range(len(state.plan_sets))]
        if sel == state.selected:
            break
        state.selected = sel
        final = simulate(net, schedule, state.current(), params.warmup, params.measure)
        _record_scores(state, final)
    report = UEReport(converged, len(totals), totals, improvements, "converged" if converged else "iteration_limit")
    return final, report


@dataclass
class CompareRow:
    schedule: str
    model_total: float
    simulated_total: float

    @property
    def gap_percent(self) -> float:
        if self.model_total == 0:
            return 0.0 if self.simulated_total == 0 else math.inf
        return 100.0 * (self.simulated_total - self.model_total) / self.model_total


def compare_so_ue(
    net: Network,
    commodities: Sequence[Commodity],
    schedules: Mapping[str, SignalSchedule],
    params: UEParams | None = None,
) -> list[CompareRow]:
    """Model system optimum vs simulated user equilibrium for each schedule."""
    from .assignment import assign
    from .network import expand_cyclic

    exp = expand_cyclic(net)
    rows = []
    for name, sched in schedules.items():
        model = assign(exp, commodities, sched).total_travel_time
        res, _rep = solve_user_equilibrium(net, sched, commodities, params)
        rows.append(CompareRow(name, model, res.total))
    return rows


def write_events_csv(res: SimResult, path) -> None:
    if res.events is None:
        raise SimulationError("simulation ran without event logging")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "agent", "node", "event"])
        w.writerows(res.events)


def write_table_csv(rows: Sequence[CompareRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["schedule", "model_total_s", "simulated_total_s", "gap_percent"])
        for r in rows:
            w.writerow([r.schedule, f"{r.model_total:.6f}", f"{r.simulated_total:.6f}", f"{r.gap_percent:.4f}"])
