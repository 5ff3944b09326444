"""Base road networks, intersection splitting and the cyclic time expansion.

A :class:`Network` holds the static road graph together with the common
cycle time of all signals and the number of time steps ``k`` the cycle is
discretized into.  :func:`expand_cyclic` turns it into an
:class:`ExpandedNetwork` with ``k`` copies of every node, transit arcs that
wrap around modulo ``k`` and one waiting arc per node copy.

Expanded indexing is layer-major: the copies of base node ``v`` occupy the
contiguous block ``[pos(v) * k, pos(v) * k + k)`` ordered by time step, and
the same holds for the transit copies of every base arc.  Waiting arcs follow
all transit arcs in node order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

ROAD = "road"
INTERIOR = "interior"

# jam spacing used to derive queue capacities from link geometry
JAM_SPACING_M = 7.5


class NetworkError(ValueError):
    """Raised when a network violates one of its structural invariants."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "invalid network")


@dataclass(frozen=True)
class Arc:
    id: str
    tail: str
    head: str
    capacity: int
    transit: int
    kind: str = ROAD
    group: str | None = None
    length_m: float | None = None


@dataclass(frozen=True)
class SignalGroup:
    id: str
    min_green: int = 1
    min_red: int = 1
    max_switches: int = 1


@dataclass(frozen=True)
class Intersection:
    """A signalized intersection: its interior arcs and the signal logic rules.

    ``clearance`` maps an ordered pair ``(A, B)`` to the number of all-red steps
    required between A switching off and B switching on.  ``fixed_order`` holds
    triples ``(A, B, lag)`` meaning B switches on exactly ``lag`` steps after A
    switches off.
    """

    id: str
    incoming_nodes: tuple[str, ...]
    outgoing_nodes: tuple[str, ...]
    turning_arcs: tuple[str, ...]
    groups: tuple[SignalGroup, ...]
    conflicts: frozenset[frozenset[str]] = frozenset()
    clearance: Mapping[tuple[str, str], int] = field(default_factory=dict)
    coupled_on: frozenset[frozenset[str]] = frozenset()
    fixed_order: tuple[tuple[str, str, int], ...] = ()

    @property
    def group_ids(self) -> tuple[str, ...]:
        return tuple(g.id for g in self.groups)

    def group(self, gid: str) -> SignalGroup:
        for g in self.groups:
            if g.id == gid:
                return g
        raise KeyError(gid)

    def conflicting(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.conflicts

    def __hash__(self) -> int:
        return hash((self.id, self.turning_arcs, self.groups))


@dataclass(frozen=True)
class Network:
    nodes: tuple[str, ...]
    arcs: tuple[Arc, ...]
    cycle_time: float
    steps: int
    intersections: tuple[Intersection, ...] = ()
    queue_caps: Mapping[str, float] = field(default_factory=dict)
    declared_step_length: float | None = None

    @property
    def step_length(self) -> float:
        return self.cycle_time / self.steps

    def arc(self, arc_id: str) -> Arc:
        return self._arc_index()[arc_id]

    def arc_position(self, arc_id: str) -> int:
        return self._arc_pos()[arc_id]

    def node_position(self, node: str) -> int:
        return self._node_pos()[node]

    def out_arcs(self, node: str) -> list[Arc]:
        return [a for a in self.arcs if a.tail == node]

    def in_arcs(self, node: str) -> list[Arc]:
        return [a for a in self.arcs if a.head == node]

    def intersection_of_group(self, gid: str) -> Intersection:
        for ix in self.intersections:
            if gid in ix.group_ids:
                return ix
        raise KeyError(gid)

    def group_of_arc(self, arc_id: str) -> str | None:
        return self.arc(arc_id).group

    def all_groups(self) -> list[tuple[Intersection, SignalGroup]]:
        return [(ix, g) for ix in self.intersections for g in ix.groups]

    def queue_capacity(self, node: str) -> float:
        """Capacity of the waiting arcs at ``node``.

        An explicit value wins.  Otherwise the jam-spacing estimate over the
        incoming road arcs is used when every one of them carries a length;
        without geometry the queue is unbounded.
        """
        if node in self.queue_caps:
            return float(self.queue_caps[node])
        incoming = [a for a in self.in_arcs(node) if a.kind == ROAD]
        if incoming and all(a.length_m is not None for a in incoming):
            return float(sum(math.ceil(a.length_m / JAM_SPACING_M) for a in incoming))
        return math.inf

    # cached lookups; the dataclass is frozen so we stash them via object.__setattr__
    def _arc_index(self) -> dict[str, Arc]:
        cache = self.__dict__.get("_arc_cache")
        if cache is None:
            cache = {a.id: a for a in self.arcs}
            object.__setattr__(self, "_arc_cache", cache)
        return cache

    def _arc_pos(self) -> dict[str, int]:
        cache = self.__dict__.get("_arc_pos_cache")
        if cache is None:
            cache = {a.id: i for i, a in enumerate(self.arcs)}
            object.__setattr__(self, "_arc_pos_cache", cache)
        return cache

    def _node_pos(self) -> dict[str, int]:
        cache = self.__dict__.get("_node_pos_cache")
        if cache is None:
            cache = {v: i for i, v in enumerate(self.nodes)}
            object.__setattr__(self, "_node_pos_cache", cache)
        return cache

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Network):
            return NotImplemented
        return (
            self.nodes == other.nodes
            and self.arcs == other.arcs
            and self.cycle_time == other.cycle_time
            and self.steps == other.steps
            and self.intersections == other.intersections
            and dict(self.queue_caps) == dict(other.queue_caps)
        )

    def __hash__(self) -> int:
        return hash((self.nodes, self.arcs, self.cycle_time, self.steps))


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __iter__(self):
        return iter(self.violations)

    def __len__(self) -> int:
        return len(self.violations)


def round_steps(seconds: float, step_length: float) -> tuple[int, bool]:
    """Convert a duration to whole steps, rounding half up.

    Returns the step count and whether rounding changed the value.
    """
    exact = seconds / step_length
    steps = math.floor(exact + 0.5)
    return steps, not math.isclose(exact, steps, abs_tol=1e-9)


def validate_network(net: Network) -> ValidationReport:
    rep = ValidationReport()
    k = net.steps
    if not isinstance(k, (int, np.integer)) or k < 1:
        rep.violations.append(f"step count must be a positive integer, got {k!r}")
        return rep
    if not net.cycle_time > 0:
        rep.violations.append(f"cycle time must be positive, got {net.cycle_time!r}")
    if net.declared_step_length is not None and not math.isclose(
        net.declared_step_length * k, net.cycle_time, rel_tol=1e-12
    ):
        rep.violations.append(
            f"step length {net.declared_step_length} x {k} steps != cycle time {net.cycle_time}"
        )

    nodes = set(net.nodes)
    if len(nodes) != len(net.nodes):
        rep.violations.append("duplicate node ids")
    seen: set[str] = set()
    for a in net.arcs:
        if a.id in seen:
            rep.violations.append(f"duplicate arc id {a.id!r}")
        seen.add(a.id)
        for end in (a.tail, a.head):
            if end not in nodes:
                rep.violations.append(f"arc {a.id!r}: dangling endpoint {end!r}")
        if a.tail == a.head:
            rep.violations.append(f"arc {a.id!r}: self-loop at {a.tail!r}")
        if a.transit < 0:
            rep.violations.append(f"arc {a.id!r}: transit time must be >= 0")
        if a.transit >= k:
            rep.violations.append(
                f"arc {a.id!r}: transit time must be < k ({a.transit} >= {k})"
            )
        if a.capacity < 0 or int(a.capacity) != a.capacity:
            rep.violations.append(f"arc {a.id!r}: capacity must be a nonnegative integer")
        if a.kind not in (ROAD, INTERIOR):
            rep.violations.append(f"arc {a.id!r}: unknown kind {a.kind!r}")
        if a.kind == INTERIOR and a.group is None:
            rep.violations.append(f"interior arc {a.id!r} has no signal group")

    owner: dict[str, str] = {}
    group_ids: dict[str, str] = {}
    for ix in net.intersections:
        gids = ix.group_ids
        for g in ix.groups:
            if g.id in group_ids:
                rep.violations.append(f"signal group {g.id!r} defined twice")
            group_ids[g.id] = ix.id
            if g.min_green < 1 or g.min_red < 1:
                rep.violations.append(f"group {g.id!r}: min green/red must be >= 1")
            if g.min_green + g.min_red > k:
                rep.violations.append(f"group {g.id!r}: min green + min red exceeds k")
            if g.max_switches < 1:
                rep.violations.append(f"group {g.id!r}: max switches must be >= 1")
        for arc_id in ix.turning_arcs:
            if arc_id in owner:
                rep.violations.append(f"interior arc {arc_id!r} belongs to two intersections")
            owner[arc_id] = ix.id
            try:
                a = net.arc(arc_id)
            except KeyError:
                rep.violations.append(f"intersection {ix.id!r}: unknown arc {arc_id!r}")
                continue
            if a.kind != INTERIOR:
                rep.violations.append(f"arc {arc_id!r} listed as turning arc but not interior")
            if a.group not in gids:
                rep.violations.append(
                    f"interior arc {arc_id!r}: group {a.group!r} not in intersection {ix.id!r}"
                )
        for pair in ix.conflicts:
            if len(pair) != 2:
                rep.violations.append(f"intersection {ix.id!r}: group conflicts with itself")
            for gid in pair:
                if gid not in gids:
                    rep.violations.append(f"intersection {ix.id!r}: unknown group {gid!r}")
        for (a_, b_), c in ix.clearance.items():
            if a_ not in gids or b_ not in gids:
                rep.violations.append(f"intersection {ix.id!r}: clearance names unknown group")
            if c < 0:
                rep.violations.append(f"intersection {ix.id!r}: negative clearance")
        for pair in ix.coupled_on:
            for gid in pair:
                if gid not in gids:
                    rep.violations.append(f"intersection {ix.id!r}: unknown group {gid!r}")
        for a_, b_, _lag in ix.fixed_order:
            if a_ not in gids or b_ not in gids:
                rep.violations.append(f"intersection {ix.id!r}: fixed order names unknown group")
    for a in net.arcs:
        if a.kind == INTERIOR and a.group is not None and a.id not in owner:
            rep.violations.append(f"interior arc {a.id!r} belongs to no intersection")
    for v, cap in net.queue_caps.items():
        if v not in nodes:
            rep.violations.append(f"queue capacity for unknown node {v!r}")
        elif cap < 0:
            rep.violations.append(f"node {v!r}: negative queue capacity")
    return rep


@dataclass(frozen=True)
class Movement:
    """One turning movement through an intersection node."""

    from_leg: str
    to_leg: str
    group: str
    capacity: int | None = None
    transit: int = 0


@dataclass(frozen=True)
class IntersectionSpec:
    """How to split a base node into incoming/outgoing nodes and interior arcs.

    Legs are named by the neighbouring base node.  ``lanes`` optionally
    partitions the movements of an incoming leg into lane nodes, each lane a
    tuple of outgoing legs served by it.
    """

    node: str
    movements: tuple[Movement, ...]
    groups: tuple[SignalGroup, ...]
    id: str | None = None
    lanes: Mapping[str, tuple[tuple[str, ...], ...]] = field(default_factory=dict)
    conflicts: frozenset[frozenset[str]] = frozenset()
    clearance: Mapping[tuple[str, str], int] = field(default_factory=dict)
    coupled_on: frozenset[frozenset[str]] = frozenset()
    fixed_order: tuple[tuple[str, str, int], ...] = ()


def in_node(v: str, leg: str, lane: int | None = None) -> str:
    return f"{v}:in:{leg}" if lane is None else f"{v}:in:{leg}:{lane}"


def out_node(v: str, leg: str) -> str:
    return f"{v}:out:{leg}"


def split_intersection(net: Network, spec: IntersectionSpec) -> Network:
    v = spec.node
    if v not in net.nodes:
        raise NetworkError([f"intersection node {v!r} does not exist"])
    incoming = {a.tail: a for a in net.arcs if a.head == v}
    outgoing = {a.head: a for a in net.arcs if a.tail == v}
    if len(incoming) != len(net.in_arcs(v)) or len(outgoing) != len(net.out_arcs(v)):
        raise NetworkError([f"node {v!r} has parallel arcs to the same neighbour"])
    errors = []
    gids = {g.id for g in spec.groups}
    for m in spec.movements:
        if m.from_leg not in incoming:
            errors.append(f"movement {m.from_leg}->{m.to_leg}: {m.from_leg!r} is not an incoming leg of {v!r}")
        if m.to_leg not in outgoing:
            errors.append(f"movement {m.from_leg}->{m.to_leg}: {m.to_leg!r} is not an outgoing leg of {v!r}")
        if m.group not in gids:
            errors.append(f"movement {m.from_leg}->{m.to_leg}: unknown group {m.group!r}")
    lane_of: dict[tuple[str, str], int] = {}
    for leg, lanes in spec.lanes.items():
        if leg not in incoming:
            errors.append(f"lanes given for {leg!r}, which is not an incoming leg of {v!r}")
        for li, outs in enumerate(lanes):
            for w in outs:
                lane_of[(leg, w)] = li
    for m in spec.movements:
        if m.from_leg in spec.lanes and (m.from_leg, m.to_leg) not in lane_of:
            errors.append(f"movement {m.from_leg}->{m.to_leg} is not assigned to a lane")
    if errors:
        raise NetworkError(errors)

    ix_id = spec.id or v
    new_nodes: list[str] = []
    new_arcs: list[Arc] = []
    for leg in incoming:
        new_nodes.append(in_node(v, leg))
        for li in range(len(spec.lanes.get(leg, ()))):
            new_nodes.append(in_node(v, leg, li))
    for leg in outgoing:
        new_nodes.append(out_node(v, leg))

    arcs: list[Arc] = []
    for a in net.arcs:
        if a.head == v:
            arcs.append(replace(a, head=in_node(v, a.tail)))
        elif a.tail == v:
            arcs.append(replace(a, tail=out_node(v, a.head)))
        else:
            arcs.append(a)
    for leg, lanes in spec.lanes.items():
        road = incoming[leg]
        for li in range(len(lanes)):
            new_arcs.append(
                Arc(f"{ix_id}:lane:{leg}:{li}", in_node(v, leg), in_node(v, leg, li),
                    capacity=road.capacity, transit=0)
            )
    turning: list[str] = []
    for m in spec.movements:
        src = in_node(v, m.from_leg, lane_of.get((m.from_leg, m.to_leg)))
        cap = m.capacity if m.capacity is not None else incoming[m.from_leg].capacity
        aid = f"{ix_id}:{m.from_leg}>{m.to_leg}"
        new_arcs.append(
            Arc(aid, src, out_node(v, m.to_leg), capacity=cap, transit=m.transit,
                kind=INTERIOR, group=m.group)
        )
        turning.append(aid)

    ins = tuple(n for n in new_nodes if ":in:" in n)
    ix = Intersection(
        id=ix_id,
        incoming_nodes=ins,
        outgoing_nodes=tuple(out_node(v, leg) for leg in outgoing),
        turning_arcs=tuple(turning),
        groups=tuple(spec.groups),
        conflicts=frozenset(spec.conflicts),
        clearance=dict(spec.clearance),
        coupled_on=frozenset(spec.coupled_on),
        fixed_order=tuple(spec.fixed_order),
    )
    nodes = [n for n in net.nodes if n != v] + new_nodes
    caps = {n: c for n, c in net.queue_caps.items() if n != v}
    return replace(
        net,
        nodes=tuple(nodes),
        arcs=tuple(arcs + new_arcs),
        intersections=net.intersections + (ix,),
        queue_caps=caps,
    )


@dataclass(frozen=True, eq=False)
class ExpandedNetwork:
    """The cyclically time-expanded network as flat numpy arrays.

    Arc arrays cover transit copies first (``n_transit`` of them) followed by
    waiting arcs.  ``base`` indexes the base arc for transit copies and the
    base node for waiting arcs.
    """

    base: Network
    tail: np.ndarray
    head: np.ndarray
    capacity: np.ndarray
    cost: np.ndarray
    layer: np.ndarray
    base_index: np.ndarray
    n_transit: int

    @property
    def k(self) -> int:
        return self.base.steps

    @property
    def n_nodes(self) -> int:
        return len(self.base.nodes) * self.k

    @property
    def n_arcs(self) -> int:
        return len(self.tail)

    @property
    def n_waiting(self) -> int:
        return self.n_arcs - self.n_transit

    def node_index(self, v: str, t: int) -> int:
        return self.base.node_position(v) * self.k + (t % self.k)

    def node_label(self, idx: int) -> tuple[str, int]:
        return self.base.nodes[idx // self.k], idx % self.k

    def transit_index(self, arc_id: str, t: int) -> int:
        return self.base.arc_position(arc_id) * self.k + (t % self.k)

    def waiting_index(self, v: str, t: int) -> int:
        return self.n_transit + self.base.node_position(v) * self.k + (t % self.k)

    def is_waiting(self, a: int) -> bool:
        return a >= self.n_transit

    def arc_label(self, a: int) -> str:
        t = int(self.layer[a])
        if a < self.n_transit:
            return f"{self.base.arcs[self.base_index[a]].id}@{t}"
        return f"wait:{self.base.nodes[self.base_index[a]]}@{t}"

    def out_arcs(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for a, v in enumerate(self.tail):
            out[v].append(a)
        return out

    def in_arcs(self) -> list[list[int]]:
        inc: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for a, w in enumerate(self.head):
            inc[w].append(a)
        return inc

    def serialize(self) -> bytes:
        doc = {
            "k": self.k,
            "nodes": [f"{v}@{t}" for v in self.base.nodes for t in range(self.k)],
            "arcs": [
                [self.arc_label(a), int(self.tail[a]), int(self.head[a]),
                 None if math.isinf(self.capacity[a]) else float(self.capacity[a]),
                 float(self.cost[a])]
                for a in range(self.n_arcs)
            ],
        }
        return json.dumps(doc, separators=(",", ":")).encode()


def expand_cyclic(net: Network) -> ExpandedNetwork:
    rep = validate_network(net)
    if not rep.ok:
        raise NetworkError(rep.violations)
    k = net.steps
    dt = net.step_length
    n_arc = len(net.arcs)
    n_node = len(net.nodes)
    pos = {v: i for i, v in enumerate(net.nodes)}
    t = np.arange(k)

    tails, heads, caps, costs, layers, bases = [], [], [], [], [], []
    for i, a in enumerate(net.arcs):
        tails.append(pos[a.tail] * k + t)
        heads.append(pos[a.head] * k + (t + a.transit) % k)
        caps.append(np.full(k, float(a.capacity)))
        costs.append(np.full(k, a.transit * dt))
        layers.append(t)
        bases.append(np.full(k, i))
    for i, v in enumerate(net.nodes):
        tails.append(i * k + t)
        heads.append(i * k + (t + 1) % k)
        caps.append(np.full(k, net.queue_capacity(v)))
        costs.append(np.full(k, dt))
        layers.append(t)
        bases.append(np.full(k, i))

    def cat(parts, dtype):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)

    return ExpandedNetwork(
        base=net,
        tail=cat(tails, np.int64),
        head=cat(heads, np.int64),
        capacity=cat(caps, float),
        cost=cat(costs, float),
        layer=cat(layers, np.int64),
        base_index=cat(bases, np.int64),
        n_transit=n_arc * k,
    )


def make_network(
    nodes: Iterable[str],
    arcs: Iterable[Arc],
    cycle_time: float,
    steps: int,
    intersections: Iterable[Intersection] = (),
    queue_caps: Mapping[str, float] | None = None,
) -> Network:
    return Network(
        nodes=tuple(nodes),
        arcs=tuple(arcs),
        cycle_time=float(cycle_time),
        steps=int(steps),
        intersections=tuple(intersections),
        queue_caps=dict(queue_caps or {}),
    )


def signalize_arcs(
    net: Network,
    ix_id: str,
    arc_groups: Mapping[str, str],
    groups: Sequence[SignalGroup],
    **rules,
) -> Network:
    """Put existing arcs under signal control without splitting any node.

    Used for simple signalized links such as a single road with one light.
    """
    arcs = []
    for a in net.arcs:
        if a.id in arc_groups:
            arcs.append(replace(a, kind=INTERIOR, group=arc_groups[a.id]))
        else:
            arcs.append(a)
    controlled = [a for a in arcs if a.id in arc_groups]
    missing = set(arc_groups) - {a.id for a in controlled}
    if missing:
        raise NetworkError([f"unknown arc {m!r}" for m in sorted(missing)])
    ix = Intersection(
        id=ix_id,
        incoming_nodes=tuple(dict.fromkeys(a.tail for a in controlled)),
        outgoing_nodes=tuple(dict.fromkeys(a.head for a in controlled)),
        turning_arcs=tuple(a.id for a in controlled),
        groups=tuple(groups),
        conflicts=frozenset(frozenset(p) for p in rules.get("conflicts", ())),
        clearance=dict(rules.get("clearance", {})),
        coupled_on=frozenset(frozenset(p) for p in rules.get("coupled_on", ())),
        fixed_order=tuple(rules.get("fixed_order", ())),
    )
    return replace(net, arcs=tuple(arcs), intersections=net.intersections + (ix,))
