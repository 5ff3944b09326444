"""Linear programs in ranged-row form and a bounded-variable simplex solver.

Problems are stated as::

    minimize    c @ x
    subject to  row_lo <= A @ x <= row_hi
                lb <= x <= ub

The embedded solver appends one slack per row (``A x - s = 0`` with
``row_lo <= s <= row_hi``) so every row becomes an equality with zero
right-hand side and every variable carries its own bounds.  A dual simplex
pass restores primal feasibility starting from any dual-feasible basis (the
slack basis for a cold start, the parent basis inside branch-and-bound), and a
primal simplex pass with a Bland's-rule fallback finishes optimization.

Large models can be routed to HiGHS through :func:`scipy.optimize.linprog`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"

AT_LOWER, AT_UPPER, BASIC = 0, 1, 2

# method="auto" uses the dense simplex for warm-started solves below AUTO_DENSE_LIMIT
# (rows x columns) entries and for cold solves below AUTO_COLD_LIMIT; HiGHS otherwise
AUTO_DENSE_LIMIT = 400_000
AUTO_COLD_LIMIT = 20_000


class LpNumericalError(ArithmeticError):
    def __init__(self, message: str, condition: float | None = None):
        self.condition = condition
        super().__init__(f"{message} (basis condition number {condition:.3g})" if condition else message)


@dataclass
class LinearProgram:
    c: np.ndarray
    A: sp.csr_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    @property
    def n(self) -> int:
        return len(self.c)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def with_bounds(self, lb: np.ndarray, ub: np.ndarray) -> "LinearProgram":
        return LinearProgram(self.c, self.A, self.row_lo, self.row_hi, lb, ub)

    def residuals(self, x: np.ndarray) -> float:
        """Largest bound or row violation of ``x``."""
        ax = self.A @ x
        viol = [
            np.max(self.lb - x, initial=0.0),
            np.max(x - self.ub, initial=0.0),
            np.max(self.row_lo - ax, initial=0.0),
            np.max(ax - self.row_hi, initial=0.0),
        ]
        return float(max(viol))


@dataclass
class Basis:
    basic: np.ndarray
    status: np.ndarray  # per column of [x, s]: AT_LOWER / AT_UPPER / BASIC


@dataclass
class LpSolution:
    status: str
    x: np.ndarray | None = None
    objective: float = math.nan
    basis: Basis | None = None
    iterations: int = 0
    duals: np.ndarray | None = None
    certificate: np.ndarray | None = None
    method: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def tighten_singletons(lp: LinearProgram) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fold single-entry rows into variable bounds.

    Returns the new bounds and a mask of the rows that remain.  This is the
    only presolve step applied.
    """
    A = lp.A.tocsr()
    counts = np.diff(A.indptr)
    lb, ub = lp.lb.astype(float).copy(), lp.ub.astype(float).copy()
    keep = np.ones(lp.m, dtype=bool)
    for i in np.flatnonzero(counts == 1):
        j = A.indices[A.indptr[i]]
        a = A.data[A.indptr[i]]
        if a == 0:
            continue
        lo, hi = lp.row_lo[i] / a, lp.row_hi[i] / a
        if a < 0:
            lo, hi = hi, lo
        lb[j] = max(lb[j], lo)
        ub[j] = min(ub[j], hi)
        keep[i] = False
    for i in np.flatnonzero(counts == 0):
        keep[i] = False
    return lb, ub, keep


class _Simplex:
    """Dense bounded-variable simplex over ``[A | -I] z = 0``."""

    def __init__(self, lp: LinearProgram, feas_tol=1e-7, opt_tol=1e-9, max_iter=50_000,
                 refactor_every=64):
        A = lp.A.toarray() if sp.issparse(lp.A) else np.asarray(lp.A, dtype=float)
        self.m, self.n = A.shape
        self.M = np.hstack([A, -np.eye(self.m)])
        self.cost = np.concatenate([lp.c, np.zeros(self.m)]).astype(float)
        self.lo = np.concatenate([lp.lb, lp.row_lo]).astype(float)
        self.hi = np.concatenate([lp.ub, lp.row_hi]).astype(float)
        if np.any(np.isinf(self.lo) & np.isinf(self.hi)):
            raise ValueError("free variables are not supported by the dense simplex")
        self.feas_tol = feas_tol
        self.opt_tol = opt_tol
        self.max_iter = max_iter
        self.refactor_every = refactor_every
        self.iterations = 0

    # -- basis bookkeeping -------------------------------------------------
    def _set_basis(self, basic, status):
        self.basic = np.array(basic, dtype=np.int64)
        self.status = np.array(status, dtype=np.int8)
        self.status[self.basic] = BASIC
        self._refactor()
        self._place_nonbasic()

    def _refactor(self):
        B = self.M[:, self.basic]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            raise LpNumericalError("singular basis", float(np.linalg.cond(B))) from None
        self._since_refactor = 0
        if not np.all(np.isfinite(self.Binv)):
            raise LpNumericalError("non-finite basis inverse", float(np.linalg.cond(B)))

    def _place_nonbasic(self):
        z = np.zeros(self.n + self.m)
        nb = self.status != BASIC
        at_lo = nb & (self.status == AT_LOWER)
        at_hi = nb & (self.status == AT_UPPER)
        # an infinite bound cannot hold a nonbasic variable; use the finite one
        bad_lo = at_lo & np.isinf(self.lo)
        self.status[bad_lo] = AT_UPPER
        bad_hi = at_hi & np.isinf(self.hi)
        self.status[bad_hi] = AT_LOWER
        at_lo = nb & (self.status == AT_LOWER)
        at_hi = nb & (self.status == AT_UPPER)
        z[at_lo] = self.lo[at_lo]
        z[at_hi] = self.hi[at_hi]
        self.z = z
        self._update_basic_values()

    def _update_basic_values(self):
        nb = self.status != BASIC
        rhs = -(self.M[:, nb] @ self.z[nb])
        self.z[self.basic] = self.Binv @ rhs

    def _duals(self):
        y = self.cost[self.basic] @ self.Binv
        d = self.cost - y @ self.M
        d[self.basic] = 0.0
        return y, d

    def _pivot(self, r, q):
        """Replace basic variable at row ``r`` by column ``q``."""
        col = self.Binv @ self.M[:, q]
        piv = col[r]
        if abs(piv) < 1e-12:
            raise LpNumericalError("pivot element vanished", float(np.linalg.cond(self.M[:, self.basic])))
        row_r = self.Binv[r, :] / piv
        self.Binv -= np.outer(col, row_r)
        self.Binv[r, :] = row_r
        self.basic[r] = q
        self.status[q] = BASIC
        self._since_refactor += 1
        if self._since_refactor >= self.refactor_every:
            self._refactor()

    def _tick(self):
        self.iterations += 1
        if self.iterations > self.max_iter:
            raise _IterationLimit()

    # -- dual simplex ------------------------------------------------------
    def make_dual_feasible(self, d) -> bool:
        """Move boxed nonbasic columns to the bound matching their reduced cost."""
        ok = True
        nb = np.flatnonzero(self.status != BASIC)
        for j in nb:
            if d[j] < -self.opt_tol:
                if np.isfinite(self.hi[j]):
                    self.status[j] = AT_UPPER
                else:
                    ok = False
            elif d[j] > self.opt_tol:
                if np.isfinite(self.lo[j]):
                    self.status[j] = AT_LOWER
                else:
                    ok = False
        self._place_nonbasic()
        return ok

    def dual(self) -> str:
        while True:
            zb = self.z[self.basic]
            lo_b, hi_b = self.lo[self.basic], self.hi[self.basic]
            below = lo_b - zb
            above = zb - hi_b
            viol = np.maximum(below, above)
            r = int(np.argmax(viol))
            if viol[r] <= self.feas_tol:
                return OPTIMAL
            self._tick()
            _, d = self._duals()
            rho = self.Binv[r, :]
            alpha = rho @ self.M
            nb = self.status != BASIC
            fixed = self.lo == self.hi
            if below[r] > above[r]:
                # x_B[r] must increase
                cand = nb & ~fixed & (((self.status == AT_LOWER) & (alpha < -1e-9))
                                      | ((self.status == AT_UPPER) & (alpha > 1e-9)))
                leave_to = AT_LOWER
            else:
                cand = nb & ~fixed & (((self.status == AT_LOWER) & (alpha > 1e-9))
                                      | ((self.status == AT_UPPER) & (alpha < -1e-9)))
                leave_to = AT_UPPER
            idx = np.flatnonzero(cand)
            if len(idx) == 0:
                self.farkas_row = r
                return INFEASIBLE
            ratios = np.abs(d[idx]) / np.abs(alpha[idx])
            best = ratios.min()
            ties = idx[ratios <= best + 1e-12]
            q = int(ties[np.argmax(np.abs(alpha[ties]))])
            leaving = int(self.basic[r])
            self._pivot(r, q)
            self.status[leaving] = leave_to
            self._place_nonbasic()

    # -- primal simplex ----------------------------------------------------
    def primal(self) -> str:
        degenerate = 0
        bland = False
        while True:
            _, d = self._duals()
            nb = (self.status != BASIC) & (self.lo != self.hi)
            inc = nb & (self.status == AT_LOWER) & (d < -self.opt_tol)
            dec = nb & (self.status == AT_UPPER) & (d > self.opt_tol)
            elig = np.flatnonzero(inc | dec)
            if len(elig) == 0:
                return OPTIMAL
            self._tick()
            q = int(elig[0]) if bland else int(elig[np.argmax(np.abs(d[elig]))])
            direction = 1.0 if inc[q] else -1.0
            col = self.Binv @ self.M[:, q]
            zb = self.z[self.basic]
            lo_b, hi_b = self.lo[self.basic], self.hi[self.basic]
            # x_B changes by -direction * theta * col
            step = direction * col
            theta = np.full(self.m, np.inf)
            dec_rows = step > 1e-9
            inc_rows = step < -1e-9
            theta[dec_rows] = (zb[dec_rows] - lo_b[dec_rows]) / step[dec_rows]
            theta[inc_rows] = (hi_b[inc_rows] - zb[inc_rows]) / -step[inc_rows]
            theta = np.maximum(theta, 0.0)
            flip = self.hi[q] - self.lo[q]
            t_min = theta.min() if self.m else np.inf
            if not np.isfinite(t_min) and not np.isfinite(flip):
                return UNBOUNDED
            if flip <= t_min:
                self.status[q] = AT_UPPER if direction > 0 else AT_LOWER
                self._place_nonbasic()
                degenerate = 0
                continue
            ties = np.flatnonzero(theta <= t_min + 1e-12)
            if bland:
                r = int(ties[np.argmin(self.basic[ties])])
            else:
                r = int(ties[np.argmax(np.abs(step[ties]))])
            leaving = int(self.basic[r])
            leave_to = AT_LOWER if step[r] > 0 else AT_UPPER
            self._pivot(r, q)
            self.status[leaving] = leave_to
            self._place_nonbasic()
            if t_min <= 1e-12:
                degenerate += 1
                if degenerate > 50:
                    bland = True
            else:
                degenerate = 0
                bland = False


class _IterationLimit(Exception):
    pass


def _solve_dense(lp: LinearProgram, warm: Basis | None, feas_tol: float, max_iter: int) -> LpSolution:
    s = _Simplex(lp, feas_tol=feas_tol, max_iter=max_iter)
    m, n = s.m, s.n
    started = False
    if warm is not None and len(warm.basic) == m and len(warm.status) == n + m:
        try:
            s._set_basis(warm.basic, warm.status)
            started = True
        except LpNumericalError:
            started = False
    if not started:
        status = np.full(n + m, AT_LOWER, dtype=np.int8)
        status[n:] = BASIC
        s._set_basis(np.arange(n, n + m), status)
    try:
        _, d = s._duals()
        if s.make_dual_feasible(d):
            res = s.dual()
        else:
            # phase one: dual simplex on the zero objective finds a feasible basis
            cost = s.cost
            s.cost = np.zeros_like(cost)
            res = s.dual()
            s.cost = cost
        if res == INFEASIBLE:
            rho = s.Binv[s.farkas_row, :]
            return LpSolution(INFEASIBLE, iterations=s.iterations, certificate=rho, method="simplex")
        res = s.primal()
        if res == UNBOUNDED:
            return LpSolution(UNBOUNDED, iterations=s.iterations, method="simplex")
        # primal steps can drift; one more dual pass repairs small infeasibilities
        s._refactor()
        s._place_nonbasic()
        if s.dual() == INFEASIBLE:
            rho = s.Binv[s.farkas_row, :]
            return LpSolution(INFEASIBLE, iterations=s.iterations, certificate=rho, method="simplex")
        if s.primal() == UNBOUNDED:
            return LpSolution(UNBOUNDED, iterations=s.iterations, method="simplex")
    except _IterationLimit:
        return LpSolution(ITERATION_LIMIT, iterations=s.iterations, method="simplex")
    x = s.z[:n].copy()
    y, _ = s._duals()
    return LpSolution(
        OPTIMAL,
        x=x,
        objective=float(lp.c @ x),
        basis=Basis(s.basic.copy(), s.status.copy()),
        iterations=s.iterations,
        duals=-y,
        method="simplex",
    )


def _solve_highs(lp: LinearProgram) -> LpSolution:
    A = lp.A.tocsr()
    lo, hi = lp.row_lo, lp.row_hi
    eq = np.isfinite(lo) & np.isfinite(hi) & (lo == hi)
    up = np.isfinite(hi) & ~eq
    dn = np.isfinite(lo) & ~eq
    A_ub = sp.vstack([A[up], -A[dn]]).tocsr() if (up.any() or dn.any()) else None
    b_ub = np.concatenate([hi[up], -lo[dn]]) if A_ub is not None else None
    A_eq = A[eq] if eq.any() else None
    b_eq = lo[eq] if eq.any() else None
    bounds = np.column_stack([
        np.where(np.isfinite(lp.lb), lp.lb, -np.inf),
        np.where(np.isfinite(lp.ub), lp.ub, np.inf),
    ])
    bounds = [(None if math.isinf(a) else a, None if math.isinf(b) else b) for a, b in bounds]
    if lp.n == 0:
        ok = A.shape[0] == 0 or (np.all(lo <= 0) and np.all(hi >= 0))
        return LpSolution(OPTIMAL if ok else INFEASIBLE, x=np.zeros(0), objective=0.0, method="highs")
    res = linprog(lp.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status == 0:
        return LpSolution(OPTIMAL, x=res.x, objective=float(res.fun), iterations=int(res.nit), method="highs")
    if res.status == 2:
        return LpSolution(INFEASIBLE, method="highs")
    if res.status == 3:
        return LpSolution(UNBOUNDED, method="highs")
    if res.status == 1:
        return LpSolution(ITERATION_LIMIT, method="highs")
    raise LpNumericalError(f"HiGHS failed: {res.message}")


def solve(
    lp: LinearProgram,
    method: str = "auto",
    warm: Basis | None = None,
    feas_tol: float = 1e-7,
    max_iter: int = 100_000,
) -> LpSolution:
    """Solve ``lp``.  ``method`` is ``"simplex"``, ``"highs"`` or ``"auto"``."""
    if np.any(lp.lb > lp.ub + feas_tol) or np.any(lp.row_lo > lp.row_hi + feas_tol):
        return LpSolution(INFEASIBLE, method=method)
    if lp.n == 0:
        # nothing to choose: feasible iff every row admits zero activity
        ok = np.all(lp.row_lo <= feas_tol) and np.all(lp.row_hi >= -feas_tol)
        return LpSolution(OPTIMAL, np.zeros(0), 0.0, method=method) if ok else LpSolution(INFEASIBLE, method=method)
    free = np.isinf(lp.row_lo) & np.isinf(lp.row_hi)
    if free.any():
        # rows without bounds never bind
        keep = ~free
        sol = solve(LinearProgram(lp.c, sp.csr_matrix(lp.A)[keep], lp.row_lo[keep], lp.row_hi[keep], lp.lb, lp.ub),
                    method, warm, feas_tol, max_iter)
        if sol.duals is not None:
            duals = np.zeros(lp.m)
            duals[keep] = sol.duals
            sol.duals = duals
        return sol
    if lp.m == 0:
        # bounds only: each variable sits at its cheaper bound
        x = np.where(lp.c > 0, lp.lb, np.where(lp.c < 0, lp.ub, np.clip(0.0, lp.lb, lp.ub)))
        if np.any(np.isinf(x)):
            return LpSolution(UNBOUNDED, method=method)
        return LpSolution(OPTIMAL, x, float(lp.c @ x), method=method)
    if method == "auto":
        size = lp.m * (lp.n + lp.m)
        method = "simplex" if size <= (AUTO_COLD_LIMIT if warm is None else AUTO_DENSE_LIMIT) else "highs"
    if method == "highs":
        return _solve_highs(lp)
    if method != "simplex":
        raise ValueError(f"unknown LP method {method!r}")
    return _solve_dense(lp, warm, feas_tol, max_iter)
