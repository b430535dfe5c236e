"""Dynamic validation LP: setpoint feasibility and penalty minimization.

For a fixed schedule every trajectory quantity is affine in the setpoint
vector ``r``, e.g. ``dw[t, g] = a[t, g] + U[t, g] @ r``. The LP has the
setpoints plus one epigraph variable ``z`` for the penalty
``s * sum |dw|``. Band, synchronization and P_m rows are generated lazily
from the most violated entries, and the convex penalty is approximated from
below by subgradient cuts on ``z`` until the cut model is tight (Kelley's
method). Both loops are finite because the penalty is polyhedral.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import lp as lpmod
from .dynamics import (DynScheduleConfig, Trajectory, _trajectory, find_violations,
                       penalty_scale, propagate)
from .network import PowerNetwork

REF_BOX = 1e3  # rad/s; setpoints are bounded so every LP is bounded


@dataclass
class ResponseBasis:
    """Base trajectory (zero setpoints) plus the linear response per generator."""

    net: PowerNetwork
    cfg: DynScheduleConfig
    omega0: np.ndarray   # n x G
    omegaU: np.ndarray   # n x G x G
    pm0: np.ndarray
    pmU: np.ndarray
    connected: np.ndarray
    sync: dict       # gen id -> (gap0, gapU)
    pickups: dict
    out: dict = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.omega0.shape[0]

    def omega(self, refs) -> np.ndarray:
        return self.omega0 + self.omegaU @ np.asarray(refs, dtype=float)

    def p_m(self, refs) -> np.ndarray:
        return self.pm0 + self.pmU @ np.asarray(refs, dtype=float)

    def trajectory(self, refs) -> Trajectory:
        """Trajectory for ``refs`` reconstructed by superposition."""
        refs = np.asarray(refs, dtype=float)
        o = self.out
        G = refs.size

        def comb(a):
            return a[..., 0] + a[..., 1:1 + G] @ refs

        rec = dict(W=comb(o["W"])[..., None], PM=comb(o["PM"])[..., None], PS=comb(o["PS"])[..., None],
                   PE=comb(o["PE"])[..., None], TH=comb(o["TH"])[..., None], CON=o["CON"],
                   SERVED=o["SERVED"], FLOWS={k: comb(v)[:, None] for k, v in o["FLOWS"].items()},
                   pickups=o["pickups"], sync={k: np.array([v[0] + v[1:1 + G] @ refs])
                                               for k, v in o["sync"].items()}, n=o["n"])
        traj = _trajectory(self.net, self.cfg, rec, 0)
        traj.setpoints = refs.copy()
        traj.violations = find_violations(self.net, self.cfg, traj)
        return traj


def build_response_basis(net: PowerNetwork, sched, cfg: DynScheduleConfig, n_steps: int | None = None,
                         model=None) -> ResponseBasis:
    G = len(net.generators)
    refs = np.hstack([np.zeros((G, 1)), np.eye(G)])
    wgt = np.zeros(G + 1)
    wgt[0] = 1.0
    out = propagate(net, sched, cfg, refs, wgt, n_steps, model)
    W, PM = out["W"], out["PM"]
    return ResponseBasis(net, cfg, W[:, :, 0].copy(), W[:, :, 1:].copy(), PM[:, :, 0].copy(),
                         PM[:, :, 1:].copy(), out["CON"].copy(),
                         {k: (float(v[0]), v[1:].copy()) for k, v in out["sync"].items()},
                         dict(out["pickups"]), out)


@dataclass
class DvlpResult:
    status: str                 # feasible | infeasible | not_converged
    setpoints: np.ndarray | None
    penalty: float              # beta * dt * sum |dw| / w_nom at the setpoints
    minimized: bool = False
    binding: list = field(default_factory=list)
    min_peak: float | None = None   # smallest achievable max |dw| when infeasible
    reason: str = ""
    penalty_lower: float = math.nan   # certified lower bound on the minimal penalty
    rounds: int = 0
    rows: int = 0
    lp_iterations: int = 0

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"

    def to_dict(self) -> dict:
        return {"status": self.status,
                "setpoints_rad_s": None if self.setpoints is None else [float(v) for v in self.setpoints],
                "penalty": self.penalty, "penalty_minimized": self.minimized,
                "penalty_lower_bound": self.penalty_lower,
                "binding": self.binding, "min_peak_rad_s": self.min_peak, "reason": self.reason,
                "rounds": self.rounds, "rows": self.rows, "lp_iterations": self.lp_iterations}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class _Rows:
    def __init__(self, nv):
        self.nv = nv
        self.A, self.s, self.b = [], [], []
        self.keys = set()

    def add(self, key, coef, sense, rhs):
        if key is not None:
            if key in self.keys:
                return False
            self.keys.add(key)
        self.A.append(np.asarray(coef, dtype=float))
        self.s.append(sense)
        self.b.append(float(rhs))
        return True


def _pen(basis: ResponseBasis, scale: float, r) -> tuple[float, np.ndarray]:
    """Penalty value and a subgradient at ``r``."""
    w = basis.omega(r)
    sg = np.sign(w)
    val = scale * float(np.abs(w).sum())
    grad = scale * np.einsum("tg,tgk->k", sg, basis.omegaU)
    return val, grad


def solve_dvlp(net: PowerNetwork, sched, cfg: DynScheduleConfig = DynScheduleConfig(),
               minimize_penalty: bool = True, basis: ResponseBasis | None = None,
               n_steps: int | None = None, max_rounds: int = 500, report: bool = True) -> DvlpResult:
    """Feasibility of the frequency band for a fixed schedule, optionally with minimal penalty.

    With ``n_steps`` the problem covers only the first ``n_steps`` fine steps,
    which relaxes the full-horizon problem.
    """
    if basis is None:
        basis = build_response_basis(net, sched, cfg, n_steps)
    G = len(net.generators)
    nv = G + 1
    wmax = cfg.omega_max
    tol = cfg.lp_tol
    con = basis.connected
    scale = penalty_scale(net.omega_nom, cfg)
    lower = np.full(nv, -REF_BOX)
    upper = np.full(nv, REF_BOX)
    lower[G] = 0.0
    upper[G] = np.inf if minimize_penalty else 0.0
    c = np.zeros(nv)
    c[G] = 1.0 if minimize_penalty else 0.0
    rows = _Rows(nv)
    gens = net.generators
    pmin = np.array([g.p_min for g in gens])
    pmax = np.array([g.p_max for g in gens])

    def band_row(t, g, upper_side):
        u = np.append(basis.omegaU[t, g], 0.0)
        if upper_side:
            return rows.add(("w+", t, g), u, lpmod.LE, wmax - basis.omega0[t, g])
        return rows.add(("w-", t, g), u, lpmod.GE, -wmax - basis.omega0[t, g])

    def pm_row(t, g, upper_side):
        u = np.append(basis.pmU[t, g], 0.0)
        if upper_side:
            return rows.add(("p+", t, g), u, lpmod.LE, pmax[g] - basis.pm0[t, g])
        return rows.add(("p-", t, g), u, lpmod.GE, pmin[g] - basis.pm0[t, g])

    # seed rows: extremes of the base trajectory plus every sync pair
    for g in range(G):
        idx = np.nonzero(con[:, g])[0]
        if idx.size == 0:
            continue
        w = basis.omega0[idx, g]
        band_row(int(idx[np.argmax(w)]), g, True)
        band_row(int(idx[np.argmin(w)]), g, False)
    for gid, (gap0, gapU) in sorted(basis.sync.items()):
        u = np.append(gapU, 0.0)
        rows.add(("s+", gid), u, lpmod.LE, cfg.epsilon_rad_s - gap0)
        rows.add(("s-", gid), u, lpmod.GE, -cfg.epsilon_rad_s - gap0)

    warm = None
    iters = 0
    res = None
    best = (math.inf, None)
    gap_tol = 1e-6
    for rnd in range(1, max_rounds + 1):
        prog = lpmod.LinearProgram(c, np.array(rows.A).reshape(len(rows.A), nv), rows.s, rows.b,
                                   lower, upper)
        sol = lpmod.solve(prog, tol=tol, warm=warm)
        iters += sol.iterations
        if sol.status is lpmod.Status.INFEASIBLE:
            res = DvlpResult("infeasible", None, math.nan, minimize_penalty, rounds=rnd,
                             rows=len(rows.A), lp_iterations=iters)
            break
        warm = sol.basis
        r = sol.x[:G]
        added = 0
        w = basis.omega(r)
        pm = basis.p_m(r)
        for g in range(G):
            idx = np.nonzero(con[:, g])[0]
            if idx.size == 0:
                continue
            wg = w[idx, g]
            k = int(np.argmax(wg))
            if wg[k] > wmax + tol:
                added += band_row(int(idx[k]), g, True)
            k = int(np.argmin(wg))
            if wg[k] < -wmax - tol:
                added += band_row(int(idx[k]), g, False)
            pg = pm[idx, g]
            k = int(np.argmax(pg))
            if pg[k] > pmax[g] + tol:
                added += pm_row(int(idx[k]), g, True)
            k = int(np.argmin(pg))
            if pg[k] < pmin[g] - tol:
                added += pm_row(int(idx[k]), g, False)
        val, grad = _pen(basis, scale, r)
        if not added and val < best[0]:
            best = (val, r.copy())
        lower_bound = float(sol.x[G]) if minimize_penalty else 0.0
        if not added and (not minimize_penalty or best[0] - lower_bound <= gap_tol * max(1.0, best[0])):
            res = DvlpResult("feasible", best[1], best[0], minimize_penalty,
                             penalty_lower=lower_bound, rounds=rnd, rows=len(rows.A),
                             lp_iterations=iters)
            break
        if minimize_penalty and val > sol.x[G] + 1e-12:
            added += rows.add(None, np.append(-grad, 1.0), lpmod.GE, val - grad @ r)
        if not added:
            # cut model cannot improve further; accept the incumbent
            res = DvlpResult("feasible", best[1], best[0], minimize_penalty,
                             penalty_lower=lower_bound, rounds=rnd, rows=len(rows.A),
                             lp_iterations=iters)
            break
    if res is None:
        res = DvlpResult("not_converged", best[1], best[0], minimize_penalty, rounds=max_rounds,
                         rows=len(rows.A), lp_iterations=iters)
    if report:
        if res.feasible:
            w = basis.omega(res.setpoints)
            hit = np.nonzero(con & (np.abs(w) >= wmax - 1e-6))
            res.binding = [{"step": int(t), "t_s": float(t * cfg.dt_s), "gen": gens[g].id,
                            "delta_omega_rad_s": float(w[t, g])} for t, g in zip(*hit)]
            for gid, (gap0, gapU) in sorted(basis.sync.items()):
                gap = gap0 + gapU @ res.setpoints
                if abs(gap) >= cfg.epsilon_rad_s - 1e-6:
                    res.binding.append({"step": int(basis.pickups[gid]), "gen": gid, "kind": "sync",
                                        "gap_rad_s": float(gap)})
        elif res.status == "infeasible":
            res.min_peak = min_peak(basis, cfg.lp_tol)
            res.reason = ("frequency band" if res.min_peak > wmax + tol
                          else "synchronization or P_m limits")
    return res


def min_peak(basis: ResponseBasis, tol: float = 1e-7, max_rounds: int = 500) -> float:
    """Smallest achievable ``max |dw|`` over connected steps (Chebyshev LP)."""
    G = basis.omegaU.shape[2]
    con = basis.connected
    if not con.any():
        return 0.0
    nv = G + 1
    c = np.zeros(nv)
    c[G] = 1.0
    lower = np.append(np.full(G, -REF_BOX), 0.0)
    upper = np.full(nv, np.inf)
    upper[:G] = REF_BOX
    rows = _Rows(nv)

    def add(t, g):
        u = basis.omegaU[t, g]
        a = basis.omega0[t, g]
        n = rows.add(("+", t, g), np.append(u, -1.0), lpmod.LE, -a)
        return n + rows.add(("-", t, g), np.append(-u, -1.0), lpmod.LE, a)

    for g in range(G):
        idx = np.nonzero(con[:, g])[0]
        if idx.size:
            add(int(idx[np.argmax(np.abs(basis.omega0[idx, g]))]), g)
    warm = None
    for _ in range(max_rounds):
        prog = lpmod.LinearProgram(c, np.array(rows.A), rows.s, rows.b, lower, upper)
        sol = lpmod.solve(prog, tol=tol, warm=warm)
        warm = sol.basis
        r, s = sol.x[:G], sol.x[G]
        w = np.where(con, np.abs(basis.omega(r)), -np.inf)
        t, g = np.unravel_index(int(np.argmax(w)), w.shape)
        if w[t, g] <= s + tol or not add(int(t), int(g)):
            return float(max(s, w[t, g]))
    return float(np.max(np.where(con, np.abs(basis.omega(r)), 0.0)))


def truncate_basis(basis: ResponseBasis, n: int) -> ResponseBasis:
    """The same basis restricted to the first ``n`` fine steps."""
    n = min(n, basis.n)
    sync = {k: v for k, v in basis.sync.items() if basis.pickups[k] < n}
    pick = {k: v for k, v in basis.pickups.items() if v < n}
    return ResponseBasis(basis.net, basis.cfg, basis.omega0[:n], basis.omegaU[:n], basis.pm0[:n],
                         basis.pmU[:n], basis.connected[:n], sync, pick, None)
