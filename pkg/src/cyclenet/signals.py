"""Signal schedules and the linear signal-logic constraints over binaries.

Every signal group ``X`` of an intersection owns three binary vectors of
length ``k``: the status ``b`` (1 = green), and the switch decisions ``on``
and ``off``.  :func:`compile_signal_constraints` emits the rows tying them
together; all step indices are taken modulo ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .network import ExpandedNetwork, INTERIOR, Intersection, SignalGroup, ValidationReport

STATUS, ON, OFF = "b", "on", "off"
KINDS = (STATUS, ON, OFF)

# families in emission order
SWITCH_COUNT = "switch-count"
LINKING = "linking"
MIN_GREEN = "min-green"
MIN_RED = "min-red"
SWITCH_EXACT = "switch-exact"
PHASE_GREEN = "phase-min-green"
PHASE_RED = "phase-min-red"
CONFLICT = "conflict"
CLEARANCE = "clearance"
FIXED_ORDER = "fixed-order"
COUPLED_ON = "coupled-on"

VarKey = tuple  # (kind, group, step)


class SignalCompileError(ValueError):
    pass


@dataclass(frozen=True)
class Constraint:
    family: str
    coeffs: tuple[tuple[VarKey, float], ...]
    sense: str  # "<=", ">=", "=="
    rhs: float

    def lhs(self, values: Mapping[VarKey, float]) -> float:
        return sum(c * values[v] for v, c in self.coeffs)

    def satisfied(self, values: Mapping[VarKey, float], tol: float = 1e-9) -> bool:
        lhs = self.lhs(values)
        if self.sense == "<=":
            return lhs <= self.rhs + tol
        if self.sense == ">=":
            return lhs >= self.rhs - tol
        return abs(lhs - self.rhs) <= tol


@dataclass
class ConstraintSet:
    intersection: str
    k: int
    groups: tuple[str, ...]
    rows: list[Constraint] = field(default_factory=list)

    def variables(self) -> list[VarKey]:
        return [(kind, g, i) for g in self.groups for kind in KINDS for i in range(self.k)]

    def count(self, family: str | None = None) -> int:
        if family is None:
            return len(self.rows)
        return sum(1 for r in self.rows if r.family == family)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)


def _row(family, terms, sense, rhs) -> Constraint:
    merged: dict[VarKey, float] = {}
    for var, c in terms:
        merged[var] = merged.get(var, 0.0) + c
    return Constraint(family, tuple((v, c) for v, c in merged.items() if c != 0), sense, float(rhs))


def _check_fixed_order(ix: Intersection, k: int) -> None:
    seen: dict[tuple[str, str], int] = {}
    succ: dict[str, list[tuple[str, int]]] = {}
    for a, b, lag in ix.fixed_order:
        if a == b:
            raise SignalCompileError(f"fixed order of group {a!r} with itself")
        if (a, b) in seen and seen[(a, b)] % k != lag % k:
            raise SignalCompileError(f"contradictory lags for fixed order {a!r}->{b!r}")
        seen[(a, b)] = lag
        succ.setdefault(a, []).append((b, lag))

    # every fixed-order cycle must fit into the cycle: lags plus minimum greens
    def dfs(start, node, total, path):
        for nxt, lag in succ.get(node, []):
            cost = total + lag + ix.group(nxt).min_green
            if nxt == start:
                if cost > k:
                    raise SignalCompileError(
                        f"fixed-order cycle {' -> '.join(path + [nxt])} needs {cost} > {k} steps"
                    )
            elif nxt not in path:
                dfs(start, nxt, cost, path + [nxt])

    for g in succ:
        dfs(g, g, 0, [g])


def compile_signal_constraints(ix: Intersection, k: int) -> ConstraintSet:
    """Compile the signal logic of one intersection into linear rows."""
    gids = ix.group_ids
    for g in ix.groups:
        if g.min_green + g.min_red > k:
            raise SignalCompileError(
                f"group {g.id!r}: min green {g.min_green} + min red {g.min_red} > k={k}"
            )
        if g.max_switches * (g.min_green + g.min_red) > k and g.max_switches > 1:
            raise SignalCompileError(f"group {g.id!r}: {g.max_switches} phases do not fit in k={k}")
    for pair in ix.coupled_on:
        if pair in ix.conflicts:
            a, b = sorted(pair)
            raise SignalCompileError(f"groups {a!r} and {b!r} are both coupled and conflicting")
    _check_fixed_order(ix, k)

    cs = ConstraintSet(ix.id, k, gids)
    rows = cs.rows
    for g in ix.groups:
        X = g.id
        s = g.max_switches
        rows.append(_row(SWITCH_COUNT, [((ON, X, i), 1) for i in range(k)], "==", s))
        rows.append(_row(SWITCH_COUNT, [((OFF, X, i), 1) for i in range(k)], "==", s))
        for i in range(k):
            p = (i - 1) % k
            rows.append(_row(LINKING, [((STATUS, X, i), 1), ((STATUS, X, p), -1), ((ON, X, i), -1)], "<=", 0))
        for i in range(k):
            p = (i - 1) % k
            rows.append(_row(LINKING, [((STATUS, X, i), 1), ((STATUS, X, p), -1), ((OFF, X, i), 1)], ">=", 0))
        rows.append(_row(MIN_GREEN, [((STATUS, X, i), 1) for i in range(k)], ">=", g.min_green))
        rows.append(_row(MIN_RED, [((STATUS, X, i), 1) for i in range(k)], "<=", k - g.min_red))
        if s > 1:
            # several phases per cycle: switches must be real and each phase long enough
            for i in range(k):
                p = (i - 1) % k
                rows.append(_row(SWITCH_EXACT, [((ON, X, i), 1), ((STATUS, X, i), -1)], "<=", 0))
                rows.append(_row(SWITCH_EXACT, [((ON, X, i), 1), ((STATUS, X, p), 1)], "<=", 1))
                rows.append(_row(SWITCH_EXACT, [((OFF, X, i), 1), ((STATUS, X, i), 1)], "<=", 1))
                rows.append(_row(SWITCH_EXACT, [((OFF, X, i), 1), ((STATUS, X, p), -1)], "<=", 0))
            for i in range(k):
                for j in range(1, g.min_green):
                    rows.append(_row(PHASE_GREEN, [((ON, X, i), 1), ((STATUS, X, (i + j) % k), -1)], "<=", 0))
                for j in range(1, g.min_red):
                    rows.append(_row(PHASE_RED, [((OFF, X, i), 1), ((STATUS, X, (i + j) % k), 1)], "<=", 1))

    for pair in sorted(tuple(sorted(p)) for p in ix.conflicts):
        W, X = pair
        for i in range(k):
            rows.append(_row(CONFLICT, [((STATUS, W, i), 1), ((STATUS, X, i), 1)], "<=", 1))
    for (W, X), c in sorted(ix.clearance.items()):
        for i in range(k):
            terms = [((OFF, W, i), 1)] + [((ON, X, (i + j) % k), 1) for j in range(c + 1)]
            rows.append(_row(CLEARANCE, terms, "<=", 1))
    for W, X, lag in ix.fixed_order:
        for i in range(k):
            rows.append(_row(FIXED_ORDER, [((OFF, W, i), 1), ((ON, X, (i + lag) % k), -1)], "==", 0))
    for pair in sorted(tuple(sorted(p)) for p in ix.coupled_on):
        W, Y = pair
        for i in range(k):
            rows.append(_row(COUPLED_ON, [((ON, W, i), 1), ((ON, Y, i), -1)], "==", 0))
    return cs


@dataclass(frozen=True)
class GroupSchedule:
    status: np.ndarray
    on: np.ndarray
    off: np.ndarray

    @staticmethod
    def from_status(status: Sequence[int]) -> "GroupSchedule":
        b = np.asarray(status, dtype=np.int8)
        prev = np.roll(b, 1)
        on = ((b == 1) & (prev == 0)).astype(np.int8)
        off = ((b == 0) & (prev == 1)).astype(np.int8)
        return GroupSchedule(b, on, off)

    def intervals(self) -> list[tuple[int, int]]:
        """Green phases as ``(on_step, off_step)`` pairs; off is exclusive, mod k."""
        k = len(self.status)
        if self.status.all():
            return [(0, k)]
        ons = [int(i) for i in np.flatnonzero((self.status == 1) & (np.roll(self.status, 1) == 0))]
        out = []
        for s in ons:
            e = s
            while self.status[e % k] == 1:
                e += 1
            out.append((s, e % k))
        return out

    def shifted(self, delta: int) -> "GroupSchedule":
        return GroupSchedule(np.roll(self.status, delta), np.roll(self.on, delta), np.roll(self.off, delta))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GroupSchedule):
            return NotImplemented
        return (
            np.array_equal(self.status, other.status)
            and np.array_equal(self.on, other.on)
            and np.array_equal(self.off, other.off)
        )


@dataclass(frozen=True)
class SignalSchedule:
    """Per-group status and switch vectors over the ``k`` steps of one cycle."""

    k: int
    groups: Mapping[str, GroupSchedule]

    @classmethod
    def from_status(cls, k: int, status: Mapping[str, Sequence[int]]) -> "SignalSchedule":
        out = {}
        for g, b in status.items():
            if len(b) != k:
                raise ValueError(f"group {g!r}: status has length {len(b)}, expected {k}")
            out[g] = GroupSchedule.from_status(b)
        return cls(k, out)

    @classmethod
    def from_intervals(cls, k: int, intervals: Mapping[str, Iterable[tuple[int, int]]]) -> "SignalSchedule":
        status = {}
        for g, ivs in intervals.items():
            b = np.zeros(k, dtype=np.int8)
            for on, off in ivs:
                on %= k
                length = (off - on) % k or k
                b[(on + np.arange(length)) % k] = 1
            status[g] = b
        return cls.from_status(k, status)

    @classmethod
    def always_green(cls, k: int, groups: Iterable[str]) -> "SignalSchedule":
        return cls.from_status(k, {g: np.ones(k, dtype=np.int8) for g in groups})

    def status(self, g: str) -> np.ndarray:
        return self.groups[g].status

    def green(self, g: str, t: int) -> bool:
        return bool(self.groups[g].status[t % self.k])

    def intervals(self) -> dict[str, list[tuple[int, int]]]:
        return {g: s.intervals() for g, s in self.groups.items()}

    def values(self) -> dict[VarKey, float]:
        vals: dict[VarKey, float] = {}
        for g, s in self.groups.items():
            for kind, vec in ((STATUS, s.status), (ON, s.on), (OFF, s.off)):
                for i, x in enumerate(vec):
                    vals[(kind, g, i)] = float(x)
        return vals

    def shifted(self, delta: int, groups: Iterable[str] | None = None) -> "SignalSchedule":
        sel = set(self.groups if groups is None else groups)
        return SignalSchedule(
            self.k, {g: (s.shifted(delta) if g in sel else s) for g, s in self.groups.items()}
        )

    def merged(self, other: "SignalSchedule") -> "SignalSchedule":
        if other.k != self.k:
            raise ValueError("schedules have different step counts")
        return SignalSchedule(self.k, {**self.groups, **other.groups})

    def restricted(self, groups: Iterable[str]) -> "SignalSchedule":
        return SignalSchedule(self.k, {g: self.groups[g] for g in groups})

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SignalSchedule):
            return NotImplemented
        return self.k == other.k and dict(self.groups) == dict(other.groups)


@dataclass(frozen=True)
class RowViolation:
    index: int
    family: str
    lhs: float
    sense: str
    rhs: float


def validate_schedule(sched: SignalSchedule, cs: ConstraintSet, tol: float = 1e-9) -> ValidationReport:
    rep = ValidationReport()
    if sched.k != cs.k:
        rep.violations.append(f"schedule has k={sched.k}, constraints expect k={cs.k}")
        return rep
    missing = [g for g in cs.groups if g not in sched.groups]
    if missing:
        rep.violations.append(f"schedule lacks groups {missing}")
        return rep
    values = sched.restricted(cs.groups).values()
    for i, row in enumerate(cs.rows):
        if not row.satisfied(values, tol):
            lhs = row.lhs(values)
            rep.violations.append(f"row {i} [{row.family}]: {lhs:g} {row.sense} {row.rhs:g} violated")
    return rep


def apply_schedule(exp: ExpandedNetwork, sched: SignalSchedule) -> np.ndarray:
    """Effective capacity of every expanded arc under a fixed schedule."""
    caps = exp.capacity.copy()
    k = exp.k
    for i, a in enumerate(exp.base.arcs):
        if a.kind != INTERIOR:
            continue
        if a.group not in sched.groups:
            raise KeyError(f"schedule has no status for group {a.group!r} (arc {a.id!r})")
        if sched.k != k:
            raise ValueError(f"schedule has k={sched.k}, network has k={k}")
        caps[i * k:(i + 1) * k] = a.capacity * sched.status(a.group)
    return caps


def default_schedule(ix: Intersection, k: int) -> SignalSchedule:
    """A feasible schedule built by sequencing the groups into phases.

    Works for the intersection shapes produced by the bundled generators:
    coupled groups share a phase, conflicting groups get separate phases with
    clearance in between.  Raises :class:`SignalCompileError` if the greedy
    construction fails to satisfy the compiled rows.
    """
    cs = compile_signal_constraints(ix, k)
    phases: list[list[SignalGroup]] = []
    for g in ix.groups:
        placed = False
        for ph in phases:
            if all(not ix.conflicting(g.id, h.id) and (g.id, h.id) not in ix.clearance
                   and (h.id, g.id) not in ix.clearance for h in ph):
                ph.append(g)
                placed = True
                break
        if not placed:
            phases.append([g])
    cands = []
    if len(phases) == 1 and all(g.max_switches > 1 for g in phases[0]):
        s = max(g.max_switches for g in phases[0])
        seg = k // s
        status = {}
        for g in phases[0]:
            b = np.zeros(k, dtype=np.int8)
            for p in range(s):
                start = p * seg
                green = max(g.min_green, seg - g.min_red)
                b[start:start + green] = 1
            status[g.id] = b
        cands.append(SignalSchedule.from_status(k, status))
    else:
        # a clearance of c steps keeps the next group off for c + 1 steps after a switch-off
        c = max([c for c in ix.clearance.values()] + [-1])
        clear = c + 1
        total = k - clear * len(phases) if len(phases) > 1 else k
        need = [max(g.min_green for g in ph) for ph in phases]
        spare = total - sum(need)
        if spare < 0:
            raise SignalCompileError(f"intersection {ix.id!r}: phases do not fit into k={k}")
        lengths = [n + spare // len(phases) + (1 if i < spare % len(phases) else 0)
                   for i, n in enumerate(need)]
        if len(phases) == 1:
            lengths = [min(lengths[0], k - max(g.min_red for g in phases[0]))]
        status = {}
        start = 0
        for ph, length in zip(phases, lengths):
            for g in ph:
                b = np.zeros(k, dtype=np.int8)
                b[(start + np.arange(length)) % k] = 1
                status[g.id] = b
            start += length + (clear if len(phases) > 1 else 0)
        cands.append(SignalSchedule.from_status(k, status))
    for sched in cands:
        if validate_schedule(sched, cs).ok:
            return sched
    raise SignalCompileError(f"no default schedule found for intersection {ix.id!r}")
