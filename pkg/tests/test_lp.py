from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from cyclenet import lp as lpmod
from cyclenet.lp import LinearProgram, solve, tighten_singletons


def _lp(c, A, lo, hi, lb, ub):
    return LinearProgram(np.asarray(c, float), sp.csr_matrix(np.asarray(A, float)), np.asarray(lo, float),
                         np.asarray(hi, float), np.asarray(lb, float), np.asarray(ub, float))


def test_small_known_optimum():
    # min -x - y  s.t. x + 2y <= 4, 3x + y <= 6, 0 <= x, y
    p = _lp([-1, -1], [[1, 2], [3, 1]], [-np.inf, -np.inf], [4, 6], [0, 0], [np.inf, np.inf])
    for method in ("simplex", "highs"):
        sol = solve(p, method)
        assert sol.status == lpmod.OPTIMAL
        assert sol.objective == pytest.approx(-2.8)
        assert sol.x == pytest.approx([1.6, 1.2])


def test_infeasible_and_unbounded():
    inf = _lp([1], [[1]], [2], [np.inf], [0], [1])
    assert solve(inf, "simplex").status == lpmod.INFEASIBLE
    unb = _lp([-1, 0], [[1, -1]], [-np.inf], [0], [0, 0], [np.inf, np.inf])
    assert solve(unb, "simplex").status == lpmod.UNBOUNDED


def test_empty_program():
    p = _lp([], np.zeros((0, 0)), [], [], [], [])
    sol = solve(p)
    assert sol.status == lpmod.OPTIMAL and sol.objective == 0.0


def test_tighten_singletons():
    p = _lp([1, 1], [[2, 0], [1, 1]], [1, 0], [4, 5], [0, 0], [10, 10])
    lb, ub, keep = tighten_singletons(p)
    assert lb[0] == 0.5 and ub[0] == 2.0
    assert list(keep) == [False, True]


@st.composite
def random_lps(draw):
    n = draw(st.integers(1, 6))
    m = draw(st.integers(1, 5))
    rng = np.random.default_rng(draw(st.integers(0, 2**31)))
    A = rng.integers(-3, 4, size=(m, n)).astype(float)
    A[rng.random((m, n)) < 0.3] = 0.0
    c = rng.integers(-5, 6, size=n).astype(float)
    lo = np.where(rng.random(m) < 0.5, -np.inf, rng.integers(-5, 3, size=m))
    hi = np.where(rng.random(m) < 0.3, np.inf, rng.integers(0, 8, size=m))
    hi = np.where(np.isfinite(lo) & (hi < lo), lo, hi)
    lb = rng.integers(-2, 1, size=n).astype(float)
    ub = np.where(rng.random(n) < 0.3, np.inf, lb + rng.integers(0, 5, size=n))
    return _lp(c, A, lo, hi, lb, ub)


@settings(max_examples=150, deadline=None)
@given(random_lps())
def test_simplex_agrees_with_highs(p):
    ours = solve(p, "simplex")
    ref = solve(p, "highs")
    assert ours.status == ref.status
    if ours.status == lpmod.OPTIMAL:
        assert ours.objective == pytest.approx(ref.objective, rel=1e-7, abs=1e-7)
        assert p.residuals(ours.x) < 1e-6


@settings(max_examples=60, deadline=None)
@given(random_lps(), st.integers(0, 5), st.booleans())
def test_warm_start_after_bound_change(p, j, up):
    first = solve(p, "simplex")
    if first.status != lpmod.OPTIMAL:
        return
    j %= p.n
    lb, ub = p.lb.copy(), p.ub.copy()
    if up:
        lb[j] = min(np.floor(first.x[j]) + 1, ub[j])
    else:
        ub[j] = max(np.floor(first.x[j]), lb[j])
    child = p.with_bounds(lb, ub)
    warm = solve(child, "simplex", warm=first.basis)
    cold = solve(child, "highs")
    assert warm.status == cold.status
    if warm.status == lpmod.OPTIMAL:
        assert warm.objective == pytest.approx(cold.objective, rel=1e-7, abs=1e-7)
        assert warm.objective >= first.objective - 1e-7
