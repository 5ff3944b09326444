from __future__ import annotations

import pytest

from cyclenet.mip import Commodity
from cyclenet.network import Arc, SignalGroup, make_network, signalize_arcs
from cyclenet.signals import SignalSchedule


def fig1_network(steps: int = 8, cycle: float = 40.0, signal: bool = True, cap: int = 1):
    net = make_network(
        ["v1", "v2", "v3"],
        [Arc("e1", "v1", "v2", cap, 3), Arc("e2", "v2", "v3", cap, 1)],
        cycle,
        steps,
    )
    if signal:
        net = signalize_arcs(net, "I", {"e2": "G"}, [SignalGroup("G", 1, 3)])
    return net


def fig1_red_schedule() -> SignalSchedule:
    # red at steps 4, 5, 6
    return SignalSchedule.from_status(8, {"G": [1, 1, 1, 1, 0, 0, 0, 1]})


def pulse(k: int, t: int) -> tuple[float, ...]:
    return tuple(1.0 if i == t else 0.0 for i in range(k))


@pytest.fixture
def fig1():
    return fig1_network()


@pytest.fixture
def fig1_commodity():
    return Commodity("v1", "v3", 1.0, id="c1")


# acceptance criteria report one line each; the lines are printed when the test
# runs (visible with -s) and again in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
