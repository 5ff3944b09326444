"""The combined assignment / signal-coordination MIP and its branch-and-bound.

Columns are laid out commodity-major: commodity ``θ`` owns the block
``[θ * (A + 1), (θ + 1) * (A + 1))`` holding its flow on every expanded arc
followed by its backward arc.  Binary columns follow, ordered by
intersection, group, kind (status, on, off) and step.

The backward arc closes each commodity into a circulation.  Its value is
fixed to the demand and distributed over the source copies by the
commodity's injection profile; flow reaching any copy of the destination is
absorbed through a single aggregated balance row.

Row families, in construction order: ``capacity`` (1), ``conservation`` (2),
``demand`` (3), ``signal-capacity`` (5) and the compiled signal rows (6).
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import lp as lpmod
from .lp import Basis, LinearProgram, LpSolution
from .network import INTERIOR, ExpandedNetwork
from .signals import (
    KINDS,
    OFF,
    ON,
    STATUS,
    ConstraintSet,
    GroupSchedule,
    SignalSchedule,
    compile_signal_constraints,
    default_schedule,
    validate_schedule,
)

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
GAP_LIMIT = "gap_limit"
TIME_LIMIT = "time_limit"
NODE_LIMIT = "node_limit"
INFEASIBLE = "infeasible"


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Commodity:
    origin: str
    destination: str
    demand: float
    profile: tuple[float, ...] | None = None
    id: str = ""

    def injection(self, k: int) -> np.ndarray:
        """Flow entering at each source copy per cycle."""
        if self.profile is None:
            return np.full(k, self.demand / k)
        w = np.asarray(self.profile, dtype=float)
        return self.demand * w / w.sum()

    @property
    def uniform(self) -> bool:
        if self.profile is None:
            return True
        w = np.asarray(self.profile, dtype=float)
        return bool(np.allclose(w, w[0]))


def validate_commodity(c: Commodity, exp: ExpandedNetwork) -> list[str]:
    errs = []
    nodes = set(exp.base.nodes)
    if c.origin == c.destination:
        errs.append(f"commodity {c.id or c.origin}: origin equals destination")
    for v in (c.origin, c.destination):
        if v not in nodes:
            errs.append(f"commodity {c.id or c.origin}: unknown node {v!r}")
    if not c.demand > 0:
        errs.append(f"commodity {c.id or c.origin}: demand must be positive")
    if c.profile is not None:
        w = np.asarray(c.profile, dtype=float)
        if len(w) != exp.k or np.any(w < 0) or w.sum() <= 0:
            errs.append(f"commodity {c.id or c.origin}: profile needs {exp.k} nonnegative weights")
    return errs


@dataclass(eq=False)
class MipModel:
    exp: ExpandedNetwork
    commodities: tuple[Commodity, ...]
    lp: LinearProgram
    binary: np.ndarray
    row_family: list[str]
    group_order: list[tuple[str, str]]
    bin_start: int
    schedule: SignalSchedule | None = None
    pinned: tuple[str, ...] = ()

    @property
    def n_vars(self) -> int:
        return self.lp.n

    @property
    def n_binary(self) -> int:
        return int(self.binary.sum())

    @property
    def n_flow(self) -> int:
        return self.bin_start

    @property
    def block(self) -> int:
        return self.exp.n_arcs + 1

    def flow_col(self, theta: int, arc: int) -> int:
        return theta * self.block + arc

    def back_col(self, theta: int) -> int:
        return theta * self.block + self.exp.n_arcs

    def bin_col(self, kind: str, group: str, step: int) -> int:
        return self._bin_index()[(kind, group, step % self.exp.k)]

    def _bin_index(self) -> dict:
        cache = self.__dict__.get("_bin_cache")
        if cache is None:
            k = self.exp.k
            cache = {}
            col = self.bin_start
            for _ix, g in self.group_order:
                for kind in KINDS:
                    for i in range(k):
                        cache[(kind, g, i)] = col
                        col += 1
            self.__dict__["_bin_cache"] = cache
        return cache

    def var_name(self, j: int) -> str:
        if j >= self.bin_start:
            r = j - self.bin_start
            k = self.exp.k
            gi, rest = divmod(r, 3 * k)
            kind, step = divmod(rest, k)
            ix, g = self.group_order[gi]
            return f"{KINDS[kind]}[{ix}.{g}][{step}]"
        theta, a = divmod(j, self.block)
        if a == self.exp.n_arcs:
            return f"back[{theta}]"
        return f"f[{theta}][{self.exp.arc_label(a)}]"

    def flows(self, x: np.ndarray) -> np.ndarray:
        """Per-commodity flow on every expanded arc, shape (commodities, arcs)."""
        n = len(self.commodities)
        if n == 0:
            return np.zeros((0, self.exp.n_arcs))
        return x[: n * self.block].reshape(n, self.block)[:, : self.exp.n_arcs]

    def decode_schedule(self, x: np.ndarray) -> SignalSchedule | None:
        if self.schedule is not None:
            return self.schedule
        if not self.group_order:
            return SignalSchedule(self.exp.k, {})
        k = self.exp.k
        groups = {}
        for _ix, g in self.group_order:
            vecs = []
            for kind in KINDS:
                start = self.bin_col(kind, g, 0)
                vecs.append(np.rint(x[start:start + k]).astype(np.int8))
            groups[g] = GroupSchedule(*vecs)
        return SignalSchedule(k, groups)

    def schedule_values(self, sched: SignalSchedule) -> np.ndarray:
        """Binary column values encoding ``sched``."""
        vals = np.zeros(self.n_vars - self.bin_start)
        for _ix, g in self.group_order:
            gs = sched.groups[g]
            for kind, vec in zip(KINDS, (gs.status, gs.on, gs.off)):
                start = self.bin_col(kind, g, 0) - self.bin_start
                vals[start:start + self.exp.k] = vec
        return vals


def build_mip(
    exp: ExpandedNetwork,
    commodities: Sequence[Commodity],
    constraint_sets: Mapping[str, ConstraintSet] | None = None,
    schedule: SignalSchedule | None = None,
) -> MipModel:
    """Assemble the MIP.  With ``schedule`` given the signals are constants."""
    net = exp.base
    k = exp.k
    errs = []
    for c in commodities:
        errs += validate_commodity(c, exp)
    if errs:
        raise ModelError("; ".join(errs))

    interior = [(i, a) for i, a in enumerate(net.arcs) if a.kind == INTERIOR]
    group_order: list[tuple[str, str]] = []
    if schedule is None:
        if constraint_sets is None:
            constraint_sets = {ix.id: compile_signal_constraints(ix, k) for ix in net.intersections}
        covered = set()
        for ix in net.intersections:
            if ix.id in constraint_sets:
                for g in constraint_sets[ix.id].groups:
                    group_order.append((ix.id, g))
                    covered.add(g)
        for _i, a in interior:
            if a.group not in covered:
                raise ModelError(f"interior arc {a.id!r} has no governing signal group")
    else:
        for _i, a in interior:
            if a.group not in schedule.groups:
                raise ModelError(f"interior arc {a.id!r}: schedule lacks group {a.group!r}")
        constraint_sets = {}

    nA = exp.n_arcs
    nC = len(commodities)
    block = nA + 1
    bin_start = nC * block
    n_bin = 3 * k * len(group_order)
    n = bin_start + n_bin

    c = np.zeros(n)
    for th in range(nC):
        c[th * block: th * block + nA] = exp.cost

    rows_i: list[np.ndarray] = []
    rows_j: list[np.ndarray] = []
    rows_v: list[np.ndarray] = []
    lo: list[np.ndarray] = []
    hi: list[np.ndarray] = []
    fam: list[str] = []
    nrow = 0

    def add(i, j, v, l, h, family):
        nonlocal nrow
        rows_i.append(np.asarray(i, dtype=np.int64) + nrow)
        rows_j.append(np.asarray(j, dtype=np.int64))
        rows_v.append(np.asarray(v, dtype=float))
        lo.append(np.asarray(l, dtype=float))
        hi.append(np.asarray(h, dtype=float))
        cnt = len(lo[-1])
        fam.extend([family] * cnt)
        nrow += cnt

    is_interior_copy = np.zeros(nA, dtype=bool)
    for i, _a in interior:
        is_interior_copy[i * k:(i + 1) * k] = True

    # (1) shared capacity on non-interior arcs
    cap_arcs = np.flatnonzero(~is_interior_copy & np.isfinite(exp.capacity))
    if nC and len(cap_arcs):
        r = np.repeat(np.arange(len(cap_arcs)), nC)
        j = (cap_arcs[:, None] + block * np.arange(nC)[None, :]).ravel()
        add(r, j, np.ones(len(j)), np.full(len(cap_arcs), -np.inf), exp.capacity[cap_arcs], "capacity")

    # (2) conservation, destination copies merged into one balance row
    nV = exp.n_nodes
    for th, com in enumerate(commodities):
        zpos = net.node_position(com.destination)
        node_row = np.empty(nV, dtype=np.int64)
        keep = np.ones(nV, dtype=bool)
        keep[zpos * k + 1:(zpos + 1) * k] = False
        node_row[keep] = np.arange(keep.sum())
        node_row[zpos * k:(zpos + 1) * k] = node_row[zpos * k]
        arcs = np.arange(nA)
        i = np.concatenate([node_row[exp.tail], node_row[exp.head]])
        j = np.concatenate([arcs, arcs]) + th * block
        v = np.concatenate([np.ones(nA), -np.ones(nA)])
        spos = net.node_position(com.origin)
        inj = com.injection(k) / com.demand
        i = np.concatenate([i, node_row[spos * k + np.arange(k)], [node_row[zpos * k]]])
        j = np.concatenate([j, np.full(k, th * block + nA), [th * block + nA]])
        # out - in = injection at source copies; destination absorbs the backward flow
        v = np.concatenate([v, -inj, [1.0]])
        nr = int(keep.sum())
        add(i, j, v, np.zeros(nr), np.zeros(nr), "conservation")

    # (3) backward arc carries the demand
    if nC:
        add(np.arange(nC), np.arange(nC) * block + nA, np.ones(nC),
            [com.demand for com in commodities], [com.demand for com in commodities], "demand")

    # (5) signal-controlled capacity
    bin_index = {}
    col = bin_start
    for _ix, g in group_order:
        for kind in KINDS:
            for s in range(k):
                bin_index[(kind, g, s)] = col
                col += 1
    for i, a in interior:
        copies = np.arange(i * k, (i + 1) * k)
        ri = np.repeat(np.arange(k), nC)
        rj = (copies[:, None] + block * np.arange(nC)[None, :]).ravel()
        rv = np.ones(len(rj))
        if schedule is None:
            ri = np.concatenate([ri, np.arange(k)])
            rj = np.concatenate([rj, [bin_index[(STATUS, a.group, s)] for s in range(k)]])
            rv = np.concatenate([rv, np.full(k, -float(a.capacity))])
            upper = np.zeros(k)
        else:
            upper = a.capacity * schedule.status(a.group).astype(float)
        add(ri, rj, rv, np.full(k, -np.inf), upper, "signal-capacity")

    # (6) signal logic
    for ix in net.intersections:
        cs = constraint_sets.get(ix.id)
        if cs is None:
            continue
        for row in cs.rows:
            j = [bin_index[var] for var, _ in row.coeffs]
            v = [cf for _, cf in row.coeffs]
            l, h = {"<=": (-np.inf, row.rhs), ">=": (row.rhs, np.inf), "==": (row.rhs, row.rhs)}[row.sense]
            add(np.zeros(len(j)), j, v, [l], [h], row.family)

    if rows_i:
        A = sp.csr_matrix(
            (np.concatenate(rows_v), (np.concatenate(rows_i), np.concatenate(rows_j))), shape=(nrow, n)
        )
        A.sum_duplicates()
        A.eliminate_zeros()
    else:
        A = sp.csr_matrix((0, n))
    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    ub[bin_start:] = 1.0
    binary = np.zeros(n, dtype=bool)
    binary[bin_start:] = True
    lp = LinearProgram(
        c, A,
        np.concatenate(lo) if lo else np.zeros(0),
        np.concatenate(hi) if hi else np.zeros(0),
        lb, ub,
    )
    model = MipModel(exp, tuple(commodities), lp, binary, fam, group_order, bin_start, schedule)
    model.__dict__["_bin_cache"] = bin_index
    return model


def fix_symmetry(model: MipModel, intersection: str | None = None) -> MipModel:
    """Pin one group of one intersection to switch on at step 0."""
    if not model.group_order:
        return model
    ix_ids = [ix for ix, _g in model.group_order]
    if intersection is None:
        intersection = ix_ids[0]
    if intersection not in ix_ids:
        raise ModelError(f"intersection {intersection!r} has no free schedule in this model")
    if not all(c.uniform for c in model.commodities):
        warnings.warn("non-uniform injection profiles: pinning an offset may change the optimum")
    g = next(g for ix, g in model.group_order if ix == intersection)
    lb = model.lp.lb.copy()
    lb[model.bin_col(ON, g, 0)] = 1.0
    new = replace(model, lp=model.lp.with_bounds(lb, model.lp.ub.copy()),
                  pinned=model.pinned + (intersection,))
    new.__dict__["_bin_cache"] = model._bin_index()
    return new


# ---------------------------------------------------------------------------
# LP relaxation


@dataclass
class _Reduced:
    lp: LinearProgram
    keep: np.ndarray


def _reduce(model: MipModel) -> _Reduced:
    cache = model.__dict__.get("_reduced")
    if cache is None:
        lb, ub, keep = lpmod.tighten_singletons(model.lp)
        A = model.lp.A[keep]
        cache = _Reduced(LinearProgram(model.lp.c, A, model.lp.row_lo[keep], model.lp.row_hi[keep], lb, ub), keep)
        model.__dict__["_reduced"] = cache
    return cache


def solve_lp(
    model: MipModel,
    lb: np.ndarray | None = None,
    ub: np.ndarray | None = None,
    method: str = "auto",
    warm: Basis | None = None,
) -> LpSolution:
    """Solve the LP relaxation (binaries in [0, 1]) under optional extra bounds."""
    red = _reduce(model)
    l = red.lp.lb if lb is None else np.maximum(red.lp.lb, lb)
    u = red.lp.ub if ub is None else np.minimum(red.lp.ub, ub)
    sol = lpmod.solve(red.lp.with_bounds(l, u), method=method, warm=warm)
    if sol.ok and model.n_vars:
        # clip round-off so bounds hold exactly
        sol.x = np.clip(sol.x, l, u)
        sol.objective = float(model.lp.c @ sol.x)
    return sol


def evaluate_schedule(model: MipModel, sched: SignalSchedule, method: str = "auto") -> LpSolution:
    """Optimal flow for a fixed schedule, as a solution of ``model``."""
    lb = model.lp.lb.copy()
    ub = model.lp.ub.copy()
    vals = model.schedule_values(sched)
    if np.any(vals < lb[model.bin_start:] - 1e-9) or np.any(vals > ub[model.bin_start:] + 1e-9):
        return LpSolution(lpmod.INFEASIBLE)
    lb[model.bin_start:] = vals
    ub[model.bin_start:] = vals
    return solve_lp(model, lb, ub, method=method)


# ---------------------------------------------------------------------------
# branch and bound


@dataclass
class MipSolution:
    status: str
    objective: float
    dual_bound: float
    gap: float
    node_count: int
    x: np.ndarray | None = None
    schedule: SignalSchedule | None = None
    history: list[tuple[int, float, float]] = field(default_factory=list)
    relaxations: list[tuple[float, float]] = field(default_factory=list)
    lp_iterations: int = 0
    elapsed: float = 0.0

    @property
    def has_incumbent(self) -> bool:
        return self.x is not None


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    fix_lo: dict = field(compare=False)
    fix_hi: dict = field(compare=False)
    basis: Basis | None = field(compare=False, default=None)
    depth: int = field(compare=False, default=0)


def _gap(inc: float, bound: float) -> float:
    if not math.isfinite(inc):
        return math.inf
    diff = max(inc - bound, 0.0)
    if diff <= 1e-9 * max(1.0, abs(inc)):
        return 0.0
    return diff / max(abs(inc), 1e-12)


class _Search:
    def __init__(self, model: MipModel, method: str, int_tol: float, deadline: float | None):
        self.model = model
        self.method = method
        self.int_tol = int_tol
        self.deadline = deadline
        self.inc_obj = math.inf
        self.inc_x: np.ndarray | None = None
        self.iterations = 0
        bins = np.flatnonzero(model.binary)
        self.bins = bins
        k = model.exp.k
        rank = np.zeros(model.n_vars, dtype=np.int64)
        order = []
        for gi, (ix, g) in enumerate(model.group_order):
            for kind_i in range(3):
                for s in range(k):
                    order.append(((ix, g, s, kind_i), model.bin_start + gi * 3 * k + kind_i * k + s))
        for r, (_key, col) in enumerate(sorted(order)):
            rank[col] = r
        self.rank = rank

    def expired(self) -> bool:
        return self.deadline is not None and time.monotonic() > self.deadline

    def bounds(self, node: _Node):
        lb = self.model.lp.lb.copy()
        ub = self.model.lp.ub.copy()
        for j, v in node.fix_lo.items():
            lb[j] = max(lb[j], v)
        for j, v in node.fix_hi.items():
            ub[j] = min(ub[j], v)
        return lb, ub

    def relax(self, lb, ub, warm=None) -> LpSolution:
        sol = solve_lp(self.model, lb, ub, method=self.method, warm=warm)
        self.iterations += sol.iterations
        return sol

    def fractional(self, x) -> int | None:
        if len(self.bins) == 0:
            return None
        v = x[self.bins]
        frac = np.abs(v - np.rint(v))
        mask = frac > self.int_tol
        if not mask.any():
            return None
        cand = self.bins[mask]
        score = np.abs(x[cand] - 0.5)
        best = score.min()
        ties = cand[score <= best + 1e-12]
        return int(ties[np.argmin(self.rank[ties])])

    def offer(self, x: np.ndarray, obj: float) -> bool:
        if obj < self.inc_obj - 1e-9 * max(1.0, abs(obj)):
            x = x.copy()
            x[self.bins] = np.rint(x[self.bins])
            if self.model.lp.residuals(x) > 1e-6:
                return False
            self.inc_obj = float(self.model.lp.c @ x)
            self.inc_x = x
            return True
        return False

    def try_schedule(self, sched: SignalSchedule, lb=None, ub=None) -> bool:
        m = self.model
        vals = m.schedule_values(sched)
        lb = m.lp.lb.copy() if lb is None else lb.copy()
        ub = m.lp.ub.copy() if ub is None else ub.copy()
        if np.any(vals < lb[m.bin_start:] - 1e-9) or np.any(vals > ub[m.bin_start:] + 1e-9):
            return False
        lb[m.bin_start:] = vals
        ub[m.bin_start:] = vals
        sol = self.relax(lb, ub)
        if not sol.ok:
            return False
        return self.offer(sol.x, sol.objective)

    # -- primal heuristics -------------------------------------------------
    def schedule_templates(self) -> dict[str, SignalSchedule] | None:
        m = self.model
        cache = self.__dict__.get("_templates")
        if cache is not None:
            return cache or None
        out = {}
        for ix in m.exp.base.intersections:
            if not any(i == ix.id for i, _ in m.group_order):
                continue
            try:
                out[ix.id] = default_schedule(ix, m.exp.k)
            except Exception:
                out = {}
                break
        self._templates = out
        return out or None

    def rotation_rounding(self, x, lb, ub) -> SignalSchedule | None:
        """Per intersection, the rotation of a template schedule best aligned with ``x``."""
        templates = self.schedule_templates()
        if templates is None:
            return None
        m = self.model
        k = m.exp.k
        parts = {}
        for ix_id, tpl in templates.items():
            best, best_score = None, -math.inf
            for d in range(k):
                cand = tpl.shifted(d)
                ok = True
                score = 0.0
                for g, gs in cand.groups.items():
                    for kind, vec in zip(KINDS, (gs.status, gs.on, gs.off)):
                        c0 = m.bin_col(kind, g, 0)
                        if np.any(vec < lb[c0:c0 + k] - 1e-9) or np.any(vec > ub[c0:c0 + k] + 1e-9):
                            ok = False
                            break
                        if kind == STATUS:
                            score += float(vec @ x[c0:c0 + k])
                    if not ok:
                        break
                if ok and score > best_score + 1e-12:
                    best, best_score = cand, score
            if best is None:
                return None
            parts[ix_id] = best
        groups = {}
        for s in parts.values():
            groups.update(s.groups)
        return SignalSchedule(k, groups)

    def local_search(self, max_sweeps: int = 3) -> None:
        """Rotate single intersections of the incumbent while that improves it."""
        m = self.model
        if self.inc_x is None or not m.group_order:
            return
        k = m.exp.k
        ix_ids = list(dict.fromkeys(ix for ix, _ in m.group_order))
        for _sweep in range(max_sweeps):
            improved = False
            for ix_id in ix_ids:
                if ix_id in m.pinned:
                    continue
                base = m.decode_schedule(self.inc_x)
                gids = [g for i, g in m.group_order if i == ix_id]
                for d in range(1, k):
                    if self.expired():
                        return
                    if self.try_schedule(base.shifted(d, gids)):
                        improved = True
                        base = m.decode_schedule(self.inc_x)
                        break
            if not improved:
                return


def branch_and_bound(
    model: MipModel,
    gap_limit: float = 1e-4,
    time_limit: float | None = None,
    node_limit: int | None = None,
    *,
    method: str = "auto",
    int_tol: float = 1e-6,
    heuristics: bool = True,
    initial: Iterable[SignalSchedule] = (),
    local_search: bool = True,
) -> MipSolution:
    start = time.monotonic()
    deadline = None if time_limit is None else start + time_limit
    S = _Search(model, method, int_tol, deadline)
    history: list[tuple[int, float, float]] = []
    relaxations: list[tuple[float, float]] = []

    def finish(status, bound, nodes):
        x = S.inc_x
        if x is None:
            return MipSolution(status, math.inf, bound, math.inf, nodes, history=history,
                               relaxations=relaxations, lp_iterations=S.iterations,
                               elapsed=time.monotonic() - start)
        bound = min(bound, S.inc_obj)
        gap = _gap(S.inc_obj, bound)
        if status == GAP_LIMIT and gap == 0.0:
            status = OPTIMAL
        return MipSolution(status, S.inc_obj, bound, gap, nodes, x=x, schedule=model.decode_schedule(x),
                           history=history, relaxations=relaxations, lp_iterations=S.iterations,
                           elapsed=time.monotonic() - start)

    root = _Node(-math.inf, 0, {}, {})
    lb, ub = S.bounds(root)
    sol = S.relax(lb, ub)
    if sol.status == lpmod.INFEASIBLE:
        return finish(INFEASIBLE, math.inf, 1)
    if not sol.ok:
        raise lpmod.LpNumericalError(f"root relaxation ended with status {sol.status}")
    root_bound = sol.objective
    history.append((0, root_bound, math.inf))

    for sched in initial:
        S.try_schedule(sched)
    if heuristics and S.fractional(sol.x) is not None:
        rounded = S.rotation_rounding(sol.x, lb, ub)
        if rounded is not None:
            S.try_schedule(rounded)
        tpl = S.schedule_templates()
        if tpl is not None:
            groups = {}
            for s in tpl.values():
                groups.update(s.groups)
            S.try_schedule(SignalSchedule(model.exp.k, groups))
    if S.fractional(sol.x) is None:
        S.offer(sol.x, sol.objective)
    elif heuristics and local_search and S.inc_x is not None and _gap(S.inc_obj, root_bound) > gap_limit:
        S.local_search()
    history.append((0, root_bound, S.inc_obj))

    heap: list[_Node] = []
    counter = itertools.count(1)
    nodes = 1
    if S.fractional(sol.x) is not None:
        heapq.heappush(heap, _Node(sol.objective, 0, {}, {}, sol.basis, 0))
        pending_sol = {0: sol}
    else:
        pending_sol = {}

    while heap:
        bound = heap[0].bound
        if _gap(S.inc_obj, bound) <= gap_limit:
            return finish(GAP_LIMIT, bound, nodes)
        if S.expired():
            return finish(TIME_LIMIT, bound, nodes)
        if node_limit is not None and nodes >= node_limit:
            return finish(NODE_LIMIT, bound, nodes)
        node = heapq.heappop(heap)
        if node.bound >= S.inc_obj - 1e-9 * max(1.0, abs(S.inc_obj)):
            continue
        nsol = pending_sol.pop(node.seq, None)
        if nsol is None:
            lb, ub = S.bounds(node)
            nsol = S.relax(lb, ub, warm=node.basis)
            nodes += 1
            if nsol.status == lpmod.INFEASIBLE:
                continue
            if not nsol.ok:
                raise lpmod.LpNumericalError(f"node relaxation ended with status {nsol.status}")
            relaxations.append((node.bound, nsol.objective))
            if nsol.objective >= S.inc_obj - 1e-9 * max(1.0, abs(S.inc_obj)):
                continue
            j = S.fractional(nsol.x)
            if j is None:
                if S.offer(nsol.x, nsol.objective):
                    history.append((nodes, min([n.bound for n in heap] + [nsol.objective]), S.inc_obj))
                continue
            if heuristics and nodes % 25 == 0:
                r = S.rotation_rounding(nsol.x, lb, ub)
                if r is not None and S.try_schedule(r):
                    history.append((nodes, min([n.bound for n in heap] + [nsol.objective]), S.inc_obj))
        else:
            j = S.fractional(nsol.x)
        obj = max(nsol.objective, node.bound)
        for val in (1.0, 0.0) if nsol.x[j] >= 0.5 else (0.0, 1.0):
            lo_f = dict(node.fix_lo)
            hi_f = dict(node.fix_hi)
            if val == 1.0:
                lo_f[j] = 1.0
            else:
                hi_f[j] = 0.0
            heapq.heappush(heap, _Node(obj, next(counter), lo_f, hi_f, nsol.basis, node.depth + 1))
        history.append((nodes, min(n.bound for n in heap), S.inc_obj))

    if S.inc_x is None:
        return finish(INFEASIBLE, math.inf, nodes)
    return finish(OPTIMAL, S.inc_obj, nodes)


# ---------------------------------------------------------------------------
# export


def write_mps(model: MipModel, path) -> None:
    """Free-format MPS; row and column order follow construction order."""
    lp = model.lp
    A = lp.A.tocsc()
    rname = [f"R{i}" for i in range(lp.m)]
    cname = [f"C{j}" for j in range(lp.n)]
    out = ["NAME cyclenet", "ROWS", " N OBJ"]
    for i in range(lp.m):
        lo, hi = lp.row_lo[i], lp.row_hi[i]
        t = "E" if lo == hi else ("L" if np.isinf(lo) else ("G" if np.isinf(hi) else "G"))
        out.append(f" {t} {rname[i]}")
    out.append("COLUMNS")
    in_int = False
    for j in range(lp.n):
        if model.binary[j] and not in_int:
            out.append(" MARKER 'MARKER' 'INTORG'")
            in_int = True
        if not model.binary[j] and in_int:
            out.append(" MARKER 'MARKER' 'INTEND'")
            in_int = False
        if lp.c[j] != 0:
            out.append(f" {cname[j]} OBJ {lp.c[j]:.17g}")
        for p in range(A.indptr[j], A.indptr[j + 1]):
            out.append(f" {cname[j]} {rname[A.indices[p]]} {A.data[p]:.17g}")
    if in_int:
        out.append(" MARKER 'MARKER' 'INTEND'")
    out.append("RHS")
    for i in range(lp.m):
        lo, hi = lp.row_lo[i], lp.row_hi[i]
        rhs = hi if np.isinf(lo) else lo
        if rhs != 0:
            out.append(f" RHS {rname[i]} {rhs:.17g}")
    ranged = [(i, lp.row_hi[i] - lp.row_lo[i]) for i in range(lp.m)
              if np.isfinite(lp.row_lo[i]) and np.isfinite(lp.row_hi[i]) and lp.row_lo[i] != lp.row_hi[i]]
    if ranged:
        out.append("RANGES")
        for i, r in ranged:
            out.append(f" RNG {rname[i]} {r:.17g}")
    out.append("BOUNDS")
    for j in range(lp.n):
        lo, hi = lp.lb[j], lp.ub[j]
        if model.binary[j] and lo == 0 and hi == 1:
            out.append(f" BV BND {cname[j]}")
            continue
        if lo == hi:
            out.append(f" FX BND {cname[j]} {lo:.17g}")
            continue
        if lo != 0:
            out.append(f" LO BND {cname[j]} {lo:.17g}")
        if np.isfinite(hi):
            out.append(f" UP BND {cname[j]} {hi:.17g}")
    out.append("ENDATA")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def read_mps(path) -> tuple[LinearProgram, np.ndarray]:
    """Read files produced by :func:`write_mps` back into an LP and binary mask."""
    rows: dict[str, int] = {}
    rtype: list[str] = []
    cols: dict[str, int] = {}
    entries: list[tuple[int, int, float]] = []
    cost: dict[int, float] = {}
    rhs: dict[int, float] = {}
    rng: dict[int, float] = {}
    bounds: list[tuple[str, int, float]] = []
    integer: set[int] = set()
    section = None
    in_int = False
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            if not line.startswith(" "):
                section = line.split()[0]
                continue
            tok = line.split()
            if section == "ROWS":
                if tok[0] == "N":
                    continue
                rows[tok[1]] = len(rtype)
                rtype.append(tok[0])
            elif section == "COLUMNS":
                if tok[0] == "MARKER":
                    in_int = tok[2] == "'INTORG'"
                    continue
                j = cols.setdefault(tok[0], len(cols))
                if in_int:
                    integer.add(j)
                if tok[1] == "OBJ":
                    cost[j] = float(tok[2])
                else:
                    entries.append((rows[tok[1]], j, float(tok[2])))
            elif section == "RHS":
                rhs[rows[tok[1]]] = float(tok[2])
            elif section == "RANGES":
                rng[rows[tok[1]]] = float(tok[2])
            elif section == "BOUNDS":
                j = cols.setdefault(tok[2], len(cols))
                bounds.append((tok[0], j, float(tok[3]) if len(tok) > 3 else 0.0))
    m, n = len(rtype), len(cols)
    A = sp.csr_matrix(
        ([v for _, _, v in entries], ([i for i, _, _ in entries], [j for _, j, _ in entries])), shape=(m, n)
    )
    lo = np.full(m, -np.inf)
    hi = np.full(m, np.inf)
    for i, t in enumerate(rtype):
        b = rhs.get(i, 0.0)
        if t == "E":
            lo[i] = hi[i] = b
        elif t == "L":
            hi[i] = b
        else:
            lo[i] = b
            if i in rng:
                hi[i] = b + rng[i]
    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    for t, j, v in bounds:
        if t == "BV":
            lb[j], ub[j] = 0.0, 1.0
        elif t == "FX":
            lb[j] = ub[j] = v
        elif t == "LO":
            lb[j] = v
        elif t == "UP":
            ub[j] = v
    c = np.zeros(n)
    for j, v in cost.items():
        c[j] = v
    binary = np.zeros(n, dtype=bool)
    binary[list(integer)] = True
    return LinearProgram(c, A, lo, hi, lb, ub), binary


def write_lp(model: MipModel, path) -> None:
    """CPLEX-style LP text; one constraint per line in construction order."""
    lp = model.lp
    A = lp.A.tocsr()

    def term(c, j):
        sign = "-" if c < 0 else "+"
        return f"{sign} {abs(c):.17g} x{j}"

    objective = " ".join(term(lp.c[j], j) for j in np.flatnonzero(lp.c)) or "0 x0"
    lines = ["\\ cyclenet model", "Minimize", " obj: " + objective]
    lines.append("Subject To")
    for i in range(lp.m):
        body = " ".join(term(A.data[p], A.indices[p]) for p in range(A.indptr[i], A.indptr[i + 1])) or "0 x0"
        lo, hi = lp.row_lo[i], lp.row_hi[i]
        tag = model.row_family[i]
        if lo == hi:
            lines.append(f" r{i}_{tag}: {body} = {lo:.17g}")
        else:
            if np.isfinite(lo):
                lines.append(f" r{i}_{tag}_lo: {body} >= {lo:.17g}")
            if np.isfinite(hi):
                lines.append(f" r{i}_{tag}: {body} <= {hi:.17g}")
    lines.append("Bounds")
    for j in range(lp.n):
        if model.binary[j]:
            if lp.lb[j] == lp.ub[j]:
                lines.append(f" x{j} = {lp.lb[j]:.17g}")
            continue
        hi = "+inf" if np.isinf(lp.ub[j]) else f"{lp.ub[j]:.17g}"
        lines.append(f" {lp.lb[j]:.17g} <= x{j} <= {hi}")
    bins = np.flatnonzero(model.binary)
    if len(bins):
        lines.append("Binaries")
        lines.extend(f" x{j}" for j in bins)
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
