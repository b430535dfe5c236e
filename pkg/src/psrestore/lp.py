"""Dense bounded-variable primal simplex.

Problems are stated as::

    minimize    c @ x
    subject to  A[i] @ x  (<=, =, >=)  b[i]
                lower <= x <= upper

Every row gets a slack column so the working form is ``[A I] [x; s] = b``
with the row sense carried by the slack bounds. Phase one minimizes the sum
of artificial variables placed only on rows whose slack cannot start feasible.
Pricing is Dantzig's rule; after a streak of degenerate pivots the solver
switches to Bland's rule until progress resumes, so it terminates.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

LE, EQ, GE = "<=", "=", ">="
_SENSES = (LE, EQ, GE)

# nonbasic states
_AT_LOWER, _AT_UPPER, _FREE, _BASIC = 0, 1, 2, -1


class LPError(Exception):
    """Base class for solver errors."""


class DimensionError(LPError, ValueError):
    pass


class IterationLimitError(LPError):
    """Raised when the pivot budget is exhausted (distinct from infeasibility)."""


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass
class LinearProgram:
    c: np.ndarray
    A: np.ndarray
    senses: list
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A = np.asarray(self.A, dtype=float)
        if self.A.size == 0:
            self.A = self.A.reshape(0, n)
        if self.A.ndim != 2 or self.A.shape[1] != n:
            raise DimensionError(f"A has shape {self.A.shape}, expected (m, {n})")
        m = self.A.shape[0]
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.senses = list(self.senses)
        if self.b.size != m or len(self.senses) != m:
            raise DimensionError(
                f"{m} rows but {self.b.size} right-hand sides and {len(self.senses)} senses")
        bad = [s for s in self.senses if s not in _SENSES]
        if bad:
            raise DimensionError(f"unknown row sense {bad[0]!r}")
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (n,)).copy()
        if np.any(self.lower > self.upper):
            j = int(np.argmax(self.lower > self.upper))
            raise DimensionError(f"variable {j}: lower bound exceeds upper bound")

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @classmethod
    def build(cls, c, rows=(), lower=0.0, upper=np.inf):
        """Assemble from ``rows`` given as ``(coefficients, sense, rhs)`` triples."""
        c = np.asarray(c, dtype=float)
        rows = list(rows)
        A = np.array([r[0] for r in rows], dtype=float).reshape(len(rows), c.size)
        return cls(c, A, [r[1] for r in rows], [r[2] for r in rows], lower, upper)

    def with_rows(self, A_new, senses, b_new) -> "LinearProgram":
        """Copy of this program with extra rows appended (for row generation)."""
        A_new = np.atleast_2d(np.asarray(A_new, dtype=float))
        return LinearProgram(self.c, np.vstack([self.A, A_new]), self.senses + list(senses),
                             np.concatenate([self.b, np.asarray(b_new, dtype=float).ravel()]),
                             self.lower, self.upper)


@dataclass
class Basis:
    """Warm-start information: basic columns over ``[x; slacks]`` and nonbasic states."""

    basic: np.ndarray
    state: np.ndarray


@dataclass
class LpSolution:
    status: Status
    x: np.ndarray | None
    objective: float
    iterations: int = 0
    basis: Basis | None = None
    duals: np.ndarray | None = None
    pivots: list = field(default_factory=list, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


class _Tableau:
    """Working state of one solve. Columns: structurals, slacks, artificials."""

    def __init__(self, lp: LinearProgram, tol: float, max_iter: int, basis: Basis | None):
        self.tol = tol
        self.opt_tol = 1e-9
        self.piv_tol = 1e-9
        self.max_iter = max_iter
        self.iterations = 0
        self.pivots = []
        n, m = lp.n, lp.m
        self.n, self.m = n, m
        self.b = lp.b.copy()
        slack_lo = np.array([-np.inf if s == GE else 0.0 for s in lp.senses])
        slack_up = np.array([np.inf if s == LE else 0.0 for s in lp.senses])
        lo = np.concatenate([lp.lower, slack_lo])
        up = np.concatenate([lp.upper, slack_up])
        A = np.hstack([lp.A, np.eye(m)])

        state = np.full(n + m, _AT_LOWER, dtype=int)
        if basis is not None:
            m_old = basis.basic.size
            if basis.state.size != n + m_old:
                raise DimensionError("warm-start basis does not match the program")
            state[:n + m_old] = basis.state
            basic = np.concatenate([basis.basic, np.arange(n + m_old, n + m)]).astype(int)
        else:
            m_old = 0
            basic = np.arange(n, n + m)
        state[basic] = _BASIC
        x = np.zeros(n + m)
        for j in np.where(state != _BASIC)[0]:
            if state[j] == _AT_UPPER and np.isfinite(up[j]):
                x[j] = up[j]
            elif np.isfinite(lo[j]):
                state[j], x[j] = _AT_LOWER, lo[j]
            elif np.isfinite(up[j]):
                state[j], x[j] = _AT_UPPER, up[j]
            else:
                state[j], x[j] = _FREE, 0.0

        xN = x.copy()
        xN[basic] = 0.0
        try:
            xB = np.linalg.solve(A[:, basic], self.b - A @ xN) if m else np.zeros(0)
        except np.linalg.LinAlgError:
            if basis is None:
                raise
            self.__init__(lp, tol, max_iter, None)
            return
        # Rows whose basic slack starts out of bounds get an artificial. Those
        # slacks are unit columns sitting in their own basis position, so the
        # swap leaves every other basic value unchanged.
        art = []
        for r in range(m):
            j = basic[r]
            v = xB[r]
            if lo[j] - tol <= v <= up[j] + tol:
                continue
            if j != n + r or r < m_old:
                if basis is None:
                    raise LPError("initial slack basis inconsistent")
                self.__init__(lp, tol, max_iter, None)
                return
            park = lo[j] if v < lo[j] else up[j]
            state[j] = _AT_LOWER if v < lo[j] else _AT_UPPER
            x[j] = park
            art.append((r, v - park))
        n_art = len(art)
        if n_art:
            cols = np.zeros((m, n_art))
            for k, (r, v) in enumerate(art):
                cols[r, k] = 1.0 if v > 0 else -1.0
                basic[r] = n + m + k
            A = np.hstack([A, cols])
            lo = np.concatenate([lo, np.zeros(n_art)])
            up = np.concatenate([up, np.full(n_art, np.inf)])
            state = np.concatenate([state, np.full(n_art, _BASIC)])
            x = np.concatenate([x, np.zeros(n_art)])
        self.A = A
        self.lo, self.up = lo, up
        self.state = state
        self.x = x
        self.basic = basic
        self.n_art = n_art
        self.refactor()

    # -- linear algebra ---------------------------------------------------
    def refactor(self):
        m = self.m
        if m == 0:
            self.Binv = np.zeros((0, 0))
            return
        B = self.A[:, self.basic]
        self.Binv = np.linalg.inv(B)
        xN = self.x.copy()
        xN[self.basic] = 0.0
        self.x[self.basic] = self.Binv @ (self.b - self.A @ xN)

    def _eligible(self, d):
        st = self.state
        tol = self.opt_tol
        fixed = self.lo == self.up
        up_ok = (st == _AT_LOWER) & (d < -tol) & ~fixed
        dn_ok = (st == _AT_UPPER) & (d > tol) & ~fixed
        fr = (st == _FREE) & (np.abs(d) > tol)
        return up_ok, dn_ok, fr

    def run(self, cost):
        """Primal simplex from the current (primal feasible) basis."""
        degenerate = 0
        bland = False
        since_refactor = 0
        while True:
            if since_refactor >= 40:
                self.refactor()
                since_refactor = 0
            if self.iterations >= self.max_iter:
                raise IterationLimitError(f"simplex exceeded {self.max_iter} iterations")
            y = cost[self.basic] @ self.Binv if self.m else np.zeros(0)
            d = cost - y @ self.A
            d[self.basic] = 0.0
            up_ok, dn_ok, fr = self._eligible(d)
            cand = up_ok | dn_ok | fr
            if not cand.any():
                return Status.OPTIMAL, y
            if bland:
                q = int(np.argmax(cand))
            else:
                score = np.where(cand, np.abs(d), -1.0)
                q = int(np.argmax(score))
            direction = 1.0 if (up_ok[q] or (fr[q] and d[q] < 0)) else -1.0
            alpha = self.Binv @ self.A[:, q] if self.m else np.zeros(0)
            step = direction * alpha   # basic values move by -theta * step
            theta = np.inf
            leave = -1
            to_upper = False
            xB = self.x[self.basic]
            loB = self.lo[self.basic]
            upB = self.up[self.basic]
            for r in range(self.m):
                s = step[r]
                if abs(s) <= self.piv_tol:
                    continue
                if s > 0:
                    if not np.isfinite(loB[r]):
                        continue
                    t = max(xB[r] - loB[r], 0.0) / s
                    hit_upper = False
                else:
                    if not np.isfinite(upB[r]):
                        continue
                    t = max(upB[r] - xB[r], 0.0) / -s
                    hit_upper = True
                if t < theta - 1e-12:
                    theta, leave, to_upper = t, r, hit_upper
                elif t <= theta + 1e-12 and leave >= 0:
                    # ties: prefer the larger pivot, Bland prefers the smaller index
                    if bland:
                        if self.basic[r] < self.basic[leave]:
                            theta, leave, to_upper = min(t, theta), r, hit_upper
                    elif abs(s) > abs(step[leave]):
                        theta, leave, to_upper = min(t, theta), r, hit_upper
            span = self.up[q] - self.lo[q]
            if span < theta:
                # bound flip of the entering variable
                theta = span
                self.x[self.basic] = xB - theta * step
                if self.state[q] == _AT_LOWER:
                    self.state[q] = _AT_UPPER
                    self.x[q] = self.up[q]
                else:
                    self.state[q] = _AT_LOWER
                    self.x[q] = self.lo[q]
                self.iterations += 1
                self.pivots.append((q, -1))
                continue
            if leave < 0:
                return Status.UNBOUNDED, y
            self.iterations += 1
            self.pivots.append((q, int(self.basic[leave])))
            if theta <= 1e-12:
                degenerate += 1
                if degenerate > 50:
                    bland = True
            else:
                degenerate = 0
                bland = False
            self.x[self.basic] = xB - theta * step
            self.x[q] = self.x[q] + direction * theta
            out = self.basic[leave]
            if to_upper:
                self.state[out] = _AT_UPPER
                self.x[out] = self.up[out]
            else:
                self.state[out] = _AT_LOWER
                self.x[out] = self.lo[out]
            self.state[q] = _BASIC
            self.basic[leave] = q
            piv = alpha[leave]
            row = self.Binv[leave] / piv
            self.Binv -= np.outer(alpha, row)
            self.Binv[leave] = row
            since_refactor += 1

    # -- phases -----------------------------------------------------------
    def phase_one(self) -> bool:
        if self.n_art == 0:
            return self._primal_feasible()
        cost = np.zeros(self.A.shape[1])
        first_art = self.n + self.m
        cost[first_art:] = 1.0
        self.run(cost)
        infeas = float(self.x[first_art:].sum())
        scale = max(1.0, float(np.abs(self.b).max(initial=0.0)))
        if infeas > self.tol * scale:
            return False
        self._drive_out_artificials()
        return True

    def _primal_feasible(self) -> bool:
        xB = self.x[self.basic]
        return bool(np.all(xB >= self.lo[self.basic] - self.tol)
                    and np.all(xB <= self.up[self.basic] + self.tol))

    def _drive_out_artificials(self):
        first_art = self.n + self.m
        for r in range(self.m):
            if self.basic[r] < first_art:
                continue
            row = self.Binv[r] @ self.A[:, :first_art]
            row[self.basic[self.basic < first_art]] = 0.0
            cands = np.where((np.abs(row) > 1e-7) & (self.lo[:first_art] < self.up[:first_art]))[0]
            if cands.size == 0:
                continue   # redundant row, artificial stays basic at zero
            q = int(cands[np.argmax(np.abs(row[cands]))])
            alpha = self.Binv @ self.A[:, q]
            out = self.basic[r]
            self.state[out] = _AT_LOWER
            self.x[out] = 0.0
            self.state[q] = _BASIC
            self.basic[r] = q
            piv = alpha[r]
            prow = self.Binv[r] / piv
            self.Binv -= np.outer(alpha, prow)
            self.Binv[r] = prow
            self.refactor()
        self.lo[first_art:] = 0.0
        self.up[first_art:] = 0.0
        self.x[first_art:] = np.where(self.state[first_art:] == _BASIC, self.x[first_art:], 0.0)

    def export_basis(self) -> Basis:
        nm = self.n + self.m
        basic = self.basic.copy()
        for r in range(self.m):
            if basic[r] >= nm:
                basic[r] = self.n + r    # artificial stands in for the row's slack
        state = self.state[:nm].copy()
        state[basic] = _BASIC
        return Basis(basic, state)


def solve(lp: LinearProgram, tol: float = 1e-7, max_iter: int = 10_000,
          warm: Basis | None = None) -> LpSolution:
    """Solve ``lp``; ``warm`` is a basis from a previous solve of a row-prefix of it."""
    if warm is not None and warm.basic.size > lp.m:
        raise DimensionError("warm-start basis has more rows than the program")
    tab = _Tableau(lp, tol, max_iter, warm)
    if not tab.phase_one():
        return LpSolution(Status.INFEASIBLE, None, np.nan, tab.iterations, pivots=tab.pivots)
    cost = np.zeros(tab.A.shape[1])
    cost[:lp.n] = lp.c
    status, y = tab.run(cost)
    x = tab.x[:lp.n].copy()
    if status is Status.UNBOUNDED:
        return LpSolution(status, x, -np.inf, tab.iterations, pivots=tab.pivots)
    return LpSolution(status, x, float(lp.c @ x), tab.iterations, tab.export_basis(),
                      duals=y, pivots=tab.pivots)


def check_feasible(lp: LinearProgram, tol: float = 1e-7,
                   max_iter: int = 10_000) -> tuple[bool, np.ndarray | None]:
    """Phase-one feasibility test. Returns ``(feasible, certificate point)``."""
    tab = _Tableau(lp, tol, max_iter, None)
    if not tab.phase_one():
        return False, None
    return True, tab.x[:lp.n].copy()


def max_violation(lp: LinearProgram, x: np.ndarray) -> float:
    """Largest absolute constraint or bound violation of point ``x``."""
    x = np.asarray(x, dtype=float)
    viol = 0.0
    if lp.m:
        ax = lp.A @ x
        for i, s in enumerate(lp.senses):
            if s == LE:
                viol = max(viol, ax[i] - lp.b[i])
            elif s == GE:
                viol = max(viol, lp.b[i] - ax[i])
            else:
                viol = max(viol, abs(ax[i] - lp.b[i]))
    viol = max(viol, float(np.max(lp.lower - x, initial=0.0)), float(np.max(x - lp.upper, initial=0.0)))
    return viol
