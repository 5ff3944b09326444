"""Queue propagation on a single signalized link and the travel-time curves it induces.

Flow arriving at the signal in step ``t`` may leave in the same step if the
light is green and the outgoing capacity is not used up; everything else
stays on the waiting arc into step ``t + 1``.  Starting from an empty queue
the cycle is iterated until the queue at cycle start repeats.

Inflow profiles count flow units arriving at the signal per step, on the
same clock as the red set, so free transit only adds a constant.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

TOL = 1e-12
MAX_CYCLES = 10_000


class OversaturatedError(ValueError):
    pass


@dataclass(frozen=True)
class LinkScenario:
    k: int
    step_length: float
    free_transit_steps: int
    in_capacity: float
    out_capacity: float
    red: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.in_capacity < 0 or self.out_capacity < 0:
            raise ValueError("capacities must be nonnegative")
        bad = [t for t in self.red if not 0 <= t < self.k]
        if bad:
            raise ValueError(f"red steps {sorted(bad)} outside [0, {self.k})")

    @classmethod
    def from_seconds(
        cls,
        cycle: float,
        steps: int,
        free_transit: float,
        red: tuple[float, float],
        in_rate: float,
        out_rate: float,
    ) -> "LinkScenario":
        """Build from seconds; ``red`` is a ``[start, end)`` window, rates are per second."""
        dt = cycle / steps
        a, b = red
        red_steps = frozenset(int(round(s / dt)) % steps for s in np.arange(a, b, dt)) if b > a else frozenset()
        return cls(steps, dt, int(round(free_transit / dt)), in_rate * dt, out_rate * dt, red_steps)

    @property
    def cycle_time(self) -> float:
        return self.k * self.step_length

    @property
    def free_transit(self) -> float:
        return self.free_transit_steps * self.step_length

    @property
    def green(self) -> np.ndarray:
        g = np.ones(self.k, dtype=bool)
        g[list(self.red)] = False
        return g

    @property
    def cycle_capacity(self) -> float:
        return float(self.out_capacity * self.green.sum())


@dataclass
class QueueTrace:
    scenario: LinkScenario
    inflow: np.ndarray
    queue: np.ndarray  # queue left after each step
    departures: np.ndarray
    start_queue: float
    cycles: int

    @property
    def total_inflow(self) -> float:
        return float(self.inflow.sum())

    @property
    def total_waiting_seconds(self) -> float:
        return float(self.queue.sum() * self.scenario.step_length)

    @property
    def average_travel_time(self) -> float:
        if self.total_inflow <= TOL:
            return self.scenario.free_transit
        return self.scenario.free_transit + self.total_waiting_seconds / self.total_inflow

    def individual_waits(self) -> list[tuple[int, int, int, float]]:
        """FIFO waits per arrival step: ``(step, min_wait, max_wait, mass)`` in steps."""
        k = self.scenario.k
        inflow, dep = self.inflow, self.departures
        # cumulative curves over three cycles, queue carried in from before step 0
        arr_cum = self.start_queue + np.cumsum(np.tile(inflow, 3))
        dep_cum = np.cumsum(np.tile(dep, 3))
        out = []
        for t in range(k):
            m = inflow[t]
            if m <= TOL:
                continue
            lo = arr_cum[t] - m
            hi = arr_cum[t]
            first = int(np.searchsorted(dep_cum, lo + TOL * max(1.0, hi), side="left"))
            last = int(np.searchsorted(dep_cum, hi - TOL * max(1.0, hi), side="left"))
            out.append((t, first - t, last - t, float(m)))
        return out

    def travel_time_range(self) -> tuple[float, float]:
        w = self.individual_waits()
        if not w:
            return (self.scenario.free_transit, self.scenario.free_transit)
        dt = self.scenario.step_length
        return (
            self.scenario.free_transit + min(x[1] for x in w) * dt,
            self.scenario.free_transit + max(x[2] for x in w) * dt,
        )


def _run_cycle(q0: float, inflow: np.ndarray, cap: np.ndarray):
    k = len(inflow)
    queue = np.empty(k)
    dep = np.empty(k)
    q = q0
    for t in range(k):
        avail = q + inflow[t]
        d = min(avail, cap[t])
        dep[t] = d
        q = avail - d
        if q < TOL * max(1.0, avail):
            q = 0.0
        queue[t] = q
    return queue, dep


def propagate_queue(sc: LinkScenario, inflow: Sequence[float]) -> QueueTrace:
    """Cyclic steady state of the greedy queue on one signalized link."""
    inflow = np.asarray(inflow, dtype=float)
    if inflow.shape != (sc.k,):
        raise ValueError(f"inflow needs {sc.k} entries, got {inflow.shape}")
    if np.any(inflow < 0):
        raise ValueError("inflow must be nonnegative")
    if np.any(inflow > sc.in_capacity + 1e-9):
        raise ValueError("inflow exceeds incoming capacity")
    cap = sc.out_capacity * sc.green.astype(float)
    q0 = 0.0
    increases = 0
    for cycle in range(1, MAX_CYCLES + 1):
        queue, dep = _run_cycle(q0, inflow, cap)
        q1 = queue[-1]
        if abs(q1 - q0) <= 1e-12 * max(1.0, q0):
            return QueueTrace(sc, inflow, queue, dep, q0, cycle)
        increases = increases + 1 if q1 > q0 else 0
        if increases >= 3 and inflow.sum() > cap.sum() + 1e-12:
            raise OversaturatedError("queue grows unboundedly")
        q0 = q1
    raise OversaturatedError("queue grows unboundedly")


def uniform_inflow(sc: LinkScenario, rate: float) -> np.ndarray:
    return np.full(sc.k, float(rate))


def uniform_curve(sc: LinkScenario, rates: Iterable[float]) -> list[tuple[float, float]]:
    """Average travel time for uniform arrivals at each rate (flow units per step)."""
    return [(float(r), propagate_queue(sc, uniform_inflow(sc, r)).average_travel_time) for r in rates]


def waiting_curve(sc: LinkScenario, rates: Iterable[float]) -> list[tuple[float, float]]:
    """Total waiting seconds per cycle for uniform arrivals at each rate."""
    return [(float(r), propagate_queue(sc, uniform_inflow(sc, r)).total_waiting_seconds) for r in rates]


def light_traffic_mean(sc: LinkScenario) -> float:
    """Average travel time as the uniform rate tends to zero.

    A unit arriving in a red step waits until the next green step; with a
    single contiguous red of ``R`` steps the waits are ``R, R-1, ..., 1``.
    """
    g = sc.green
    k = sc.k
    total = 0
    for t in range(k):
        w = 0
        while not g[(t + w) % k]:
            w += 1
            if w > k:
                raise OversaturatedError("signal is never green")
        total += w
    return sc.free_transit + total / k * sc.step_length


def platoon_profile(sc: LinkScenario, length_seconds: float, head_offset_seconds: float,
                    density: float | None = None) -> np.ndarray:
    """Rectangular arrival profile; head and tail steps are both included."""
    density = sc.in_capacity if density is None else density
    if density > sc.in_capacity + 1e-12:
        raise ValueError("platoon density exceeds incoming capacity")
    if density < 0 or length_seconds < 0:
        raise ValueError("platoon length and density must be nonnegative")
    n = int(round(length_seconds / sc.step_length)) + 1
    if n > sc.k:
        raise ValueError("platoon longer than one cycle")
    head = int(round(head_offset_seconds / sc.step_length))
    prof = np.zeros(sc.k)
    prof[(head + np.arange(n)) % sc.k] = density
    return prof


def platoon_travel_time(sc: LinkScenario, length_seconds: float, head_offset_seconds: float,
                        density: float | None = None) -> float:
    return propagate_queue(sc, platoon_profile(sc, length_seconds, head_offset_seconds, density)).average_travel_time


def platoon_surface(sc: LinkScenario, lengths: Sequence[float], offsets: Sequence[float],
                    density: float | None = None) -> np.ndarray:
    """Rows follow ``lengths``, columns follow ``offsets``."""
    out = np.empty((len(lengths), len(offsets)))
    for i, L in enumerate(lengths):
        for j, o in enumerate(offsets):
            out[i, j] = platoon_travel_time(sc, L, o, density)
    return out


def write_curve_csv(curve: Sequence[tuple[float, float]], path, header=("rate", "average_travel_time_s")) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for x, y in curve:
            w.writerow([f"{x:.9g}", f"{y:.9g}"])


def write_surface_csv(lengths: Sequence[float], offsets: Sequence[float], matrix: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["length_s"] + [f"{o:.9g}" for o in offsets])
        for L, row in zip(lengths, matrix):
            w.writerow([f"{L:.9g}"] + [f"{v:.9g}" for v in row])
