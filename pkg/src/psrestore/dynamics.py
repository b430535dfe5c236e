"""Island frequency dynamics for a condensed switching schedule.

Each generator carries a swing equation, a first-order turbine and an
integrating governor with permanent droop::

    d(dw)/dt   = (P_m - P_e - D dw) / (J w_nom)
    d(P_m)/dt  = (K P_set - P_m) / T_m
    d(P_set)/dt = -(dw - dw_ref + sigma P_set) / T_gov
    d(theta)/dt = dw            (angles relative to a frame rotating at w_nom)

Connected machines are coupled through the DC network. Passive buses are
eliminated by Kron reduction, so ``P_e = B_red theta_G + c`` per
configuration. The whole recursion is linear in the setpoints, so several
setpoint columns are propagated together; this is what the DVLP builds on.

Two discretizations are offered. ``"euler"`` is the explicit update of the
discretized model, term for term. It is unstable once two machines share the
network, because the synchronizing mode has ``Omega * dt`` near 5 at
``dt = 0.5 s``. ``"trapezoidal"`` (the default) applies the trapezoidal rule
to the same continuous system and stays stable for any step size.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .network import Generator, PowerNetwork

SCHEMES = ("trapezoidal", "euler")
_TOL = 1e-6


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class DynScheduleConfig:
    dt_s: float = 0.5
    t_max_s: float = 712.5
    kappa_s: float = 45.0
    df_max_hz: float = 1.5
    epsilon_rad_s: float = 0.05
    alpha: float = 1.0
    beta: float = 1.0
    big_m: float = 1e8  # kept for provenance; pickup logic is structural
    scheme: str = "trapezoidal"
    lp_tol: float = 1e-7

    def __post_init__(self):
        if not self.dt_s > 0:
            raise ValueError("dt_s must be positive")
        if self.kappa_s < self.dt_s:
            raise ValueError("kappa_s must be at least dt_s")
        if not self.df_max_hz > 0:
            raise ValueError("df_max_hz must be positive")
        if self.t_max_s < self.dt_s:
            raise ValueError("t_max_s must cover at least one step")
        if self.epsilon_rad_s < 0:
            raise ValueError("epsilon_rad_s must be non-negative")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @property
    def n_t(self) -> int:
        return int(round(self.t_max_s / self.dt_s))

    @property
    def n_r(self) -> int:
        return int(math.floor(self.n_t * self.dt_s / self.kappa_s + 1e-9)) + 1

    @property
    def omega_max(self) -> float:
        return 2.0 * math.pi * self.df_max_hz

    def slot_start_step(self, r: int) -> int:
        """First fine step mapped to condensed slot ``r`` (slots start at 1)."""
        return int(math.ceil((r - 1) * self.kappa_s / self.dt_s - 1e-9))

    def slot_of_step(self, t: int) -> int:
        return int(math.floor(t * self.dt_s / self.kappa_s + 1e-9)) + 1

    def with_(self, **kw) -> "DynScheduleConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class CondensedSchedule:
    """Switch slots on the condensed grid; slot 1 is the BSU-only start."""

    items: tuple  # ((slot, component id), ...), slots increasing

    @classmethod
    def consecutive(cls, ids, start: int = 2) -> "CondensedSchedule":
        return cls(tuple((start + k, cid) for k, cid in enumerate(ids)))

    @property
    def ids(self) -> list[str]:
        return [cid for _, cid in self.items]

    def validate(self, net: PowerNetwork, cfg: DynScheduleConfig):
        from .switching import check_sequence
        slots = [s for s, _ in self.items]
        if any(s < 2 or s > cfg.n_r for s in slots):
            raise SimulationError(f"switch slots must lie in 2..{cfg.n_r}")
        if any(b <= a for a, b in zip(slots, slots[1:])):
            raise SimulationError("at most one switch per slot, in increasing slot order")
        try:
            check_sequence(net, self.ids)
        except ValueError as exc:
            raise SimulationError(str(exc)) from exc


@dataclass
class GenState:
    delta_omega: float
    p_set: float
    p_m: float
    connected: bool


def init_state(gen: Generator, ref: float, p_e0: float) -> GenState:
    """Steady-state initialization of one machine for setpoint ``ref`` and load ``p_e0``."""
    d = gen.dynamics
    den = d.D * d.sigma + d.K
    if not den > 0:
        raise SimulationError(f"{gen.id}: non-positive initialization denominator")
    p_set = (d.D * ref + p_e0) / den
    return GenState(-d.sigma * p_set + ref, p_set, d.K * p_set, False)


def droop_split(gens, load: float) -> np.ndarray:
    """Share of ``load`` among ``gens`` in proportion to ``1 / sigma``."""
    inv = np.array([1.0 / g.dynamics.sigma for g in gens])
    return load * inv / inv.sum()


def init_states(net: PowerNetwork, refs, p_e0=None) -> list[GenState]:
    """Initial states for every generator; BSUs start connected.

    ``p_e0`` defaults to zero, which is the black-start condition.
    """
    refs = np.asarray(refs, dtype=float)
    if p_e0 is None:
        p_e0 = np.zeros(len(net.generators))
    out = []
    for k, g in enumerate(net.generators):
        s = init_state(g, float(refs[k]), float(p_e0[k]))
        s.connected = g.black_start
        out.append(s)
    return out


# -- network reduction ------------------------------------------------------

@dataclass
class _Reduced:
    mask: frozenset
    connected: np.ndarray          # bool per generator
    live: list                     # live bus ids
    gbus: list                     # bus of each connected generator, gen order
    B_red: np.ndarray              # G x G, zero rows/cols for unconnected
    c: np.ndarray                  # G, MW, zero for unconnected
    theta_map: np.ndarray          # nbus x G, bus angle from generator angles
    theta_const: np.ndarray        # nbus, MW-driven part (times load weight)
    flow_map: list                 # (branch, from idx, to idx, coeff)
    served: float
    Phi: np.ndarray | None = None
    Gam: np.ndarray | None = None


class _Model:
    def __init__(self, net: PowerNetwork, cfg: DynScheduleConfig):
        self.net = net
        self.cfg = cfg
        self.G = len(net.generators)
        self.bidx = net.bus_index
        self.nbus = len(net.buses)
        self.cache: dict[frozenset, _Reduced] = {}
        G = self.G
        dyn = [g.dynamics for g in net.generators]
        wn = net.omega_nom
        self.inv_m = np.array([1.0 / (d.J * wn) for d in dyn])
        self.D = np.array([d.D for d in dyn])
        self.K = np.array([d.K for d in dyn])
        self.Tm = np.array([d.T_m for d in dyn])
        self.Tg = np.array([d.T_gov for d in dyn])
        self.sig = np.array([d.sigma for d in dyn])
        self.n_state = 4 * G

    def reduce(self, on: frozenset) -> _Reduced:
        red = self.cache.get(on)
        if red is not None:
            return red
        net = self.net
        G = self.G
        connected = np.array([g.id in on for g in net.generators])
        live = set()
        for cid in on:
            live.update(net.components[cid].buses)
        live = [b.id for b in net.buses if b.id in live]
        gens = [k for k in range(G) if connected[k]]
        gbus = [net.generators[k].bus for k in gens]
        if len(set(gbus)) != len(gbus):
            raise SimulationError("two connected generators share a bus")
        nb = [b for b in live if b not in gbus]
        pos = {b: i for i, b in enumerate(live)}
        L = np.zeros((len(live), len(live)))
        flows = []
        for br in net.branches:
            if br.id in on:
                y = br.admittance * net.base_mva
                i, j = pos[br.from_bus], pos[br.to_bus]
                L[i, i] += y
                L[j, j] += y
                L[i, j] -= y
                L[j, i] -= y
                flows.append((br, self.bidx[br.from_bus], self.bidx[br.to_bus], y))
        pload = np.zeros(len(live))
        for d in net.loads:
            if d.id in on:
                pload[pos[d.bus]] += d.p_nominal
        gi = [pos[b] for b in gbus]
        ni = [pos[b] for b in nb]
        LGG = L[np.ix_(gi, gi)]
        LGN = L[np.ix_(gi, ni)]
        LNG = L[np.ix_(ni, gi)]
        LNN = L[np.ix_(ni, ni)]
        if ni:
            if not gi:
                raise SimulationError("energized island without a connected generator")
            try:
                M1 = -np.linalg.solve(LNN, LNG)
                m0 = -np.linalg.solve(LNN, pload[ni])
            except np.linalg.LinAlgError as exc:
                raise SimulationError("singular network matrix: isolated energized bus") from exc
            if np.linalg.cond(LNN) > 1e12:
                raise SimulationError("singular network matrix: isolated energized bus")
        else:
            M1 = np.zeros((0, len(gi)))
            m0 = np.zeros(0)
        Bsub = LGG + LGN @ M1
        csub = pload[gi] + LGN @ m0
        B_red = np.zeros((G, G))
        B_red[np.ix_(gens, gens)] = Bsub
        c = np.zeros(G)
        c[gens] = csub
        theta_map = np.zeros((self.nbus, G))
        theta_const = np.full(self.nbus, np.nan)
        for k, g in enumerate(gens):
            theta_map[self.bidx[gbus[k]], g] = 1.0
            theta_const[self.bidx[gbus[k]]] = 0.0
        for k, b in enumerate(nb):
            theta_map[self.bidx[b], gens] = M1[k]
            theta_const[self.bidx[b]] = m0[k]
        red = _Reduced(on, connected, live, gbus, B_red, c, theta_map, theta_const, flows,
                       float(pload.sum()))
        self._discretize(red)
        self.cache[on] = red
        return red

    def _discretize(self, red: _Reduced):
        G, h = self.G, self.cfg.dt_s
        n = self.n_state
        w, pm, ps, th = slice(0, G), slice(G, 2 * G), slice(2 * G, 3 * G), slice(3 * G, 4 * G)
        A = np.zeros((n, n))
        A[w, w] = np.diag(-self.D * self.inv_m)
        # unconnected machines have P_e = 0 but their rotor still follows P_m
        A[w, pm] = np.diag(self.inv_m)
        A[w, th] = -self.inv_m[:, None] * red.B_red
        A[pm, pm] = np.diag(-1.0 / self.Tm)
        A[pm, ps] = np.diag(self.K / self.Tm)
        A[ps, w] = np.diag(-1.0 / self.Tg)
        A[ps, ps] = np.diag(-self.sig / self.Tg)
        A[th, w] = np.diag(red.connected.astype(float))
        E = np.zeros((n, G + 1))
        E[ps, :G] = np.diag(1.0 / self.Tg)
        E[w, G] = -self.inv_m * red.c
        if self.cfg.scheme == "euler":
            red.Phi = np.eye(n) + h * A
            red.Gam = h * E
        else:
            lhs = np.eye(n) - 0.5 * h * A
            red.Phi = np.linalg.solve(lhs, np.eye(n) + 0.5 * h * A)
            red.Gam = np.linalg.solve(lhs, h * E)


# -- trajectories -----------------------------------------------------------

@dataclass
class Trajectory:
    """Simulated time series. Arrays carry a trailing column axis when batched."""

    t_s: np.ndarray
    gen_ids: list
    bus_ids: list
    delta_omega: np.ndarray    # n_t x G
    p_set: np.ndarray
    p_m: np.ndarray
    p_e: np.ndarray
    theta: np.ndarray          # n_t x nbus (NaN for dead buses)
    served_mw: np.ndarray      # n_t
    connected: np.ndarray      # n_t x G bool
    flows: dict = field(default_factory=dict)   # branch id -> n_t MW (NaN when off)
    pickups: dict = field(default_factory=dict)  # gen id -> step
    sync_gap: dict = field(default_factory=dict)  # gen id -> dw_gen - dw_leader at pickup
    violations: list = field(default_factory=list)
    base_mva: float = 100.0
    omega_nom: float = 2.0 * math.pi * 50.0
    setpoints: np.ndarray | None = None

    @property
    def n_t(self) -> int:
        return self.t_s.size

    def max_abs_omega(self) -> float:
        w = np.where(self.connected, np.abs(self.delta_omega), 0.0)
        return float(w.max(initial=0.0))

    def step_flags(self) -> list[list[str]]:
        flags = [[] for _ in range(self.n_t)]
        for v in self.violations:
            tag = v["kind"] + (f":{v['id']}" if v.get("id") else "")
            if tag not in flags[v["step"]]:
                flags[v["step"]].append(tag)
        return flags

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_s", "gen_id", "delta_omega_rad_s", "p_set", "p_m_mw", "p_e_mw",
                    "served_mw", "violation_flags"])
        gen_flags = [[[] for _ in self.gen_ids] for _ in range(self.n_t)]
        gpos = {g: k for k, g in enumerate(self.gen_ids)}
        for v in self.violations:
            if v.get("gen") in gpos:
                gen_flags[v["step"]][gpos[v["gen"]]].append(v["kind"])
        step_flags = self.step_flags()
        f = _fmt
        for t in range(self.n_t):
            for k, g in enumerate(self.gen_ids):
                w.writerow([f(self.t_s[t]), g, f(self.delta_omega[t, k]), f(self.p_set[t, k]),
                            f(self.p_m[t, k]), f(self.p_e[t, k]), f(self.served_mw[t]),
                            "|".join(gen_flags[t][k])])
            conn = self.connected[t]
            w.writerow([f(self.t_s[t]), "total",
                        f(float(np.max(np.abs(self.delta_omega[t][conn]), initial=0.0))), "",
                        f(float(self.p_m[t][conn].sum())), f(float(self.p_e[t].sum())),
                        f(self.served_mw[t]), "|".join(step_flags[t])])
        return buf.getvalue()


def _fmt(x) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class FineSchedule:
    """Switching on the fine grid: ``initial`` ids are on at t = 0 (in switching
    order), ``events`` are ``(step, id)`` pairs."""

    initial: tuple = ()
    events: tuple = ()

    @property
    def ids(self) -> list[str]:
        return list(self.initial) + [cid for _, cid in sorted(self.events)]

    def validate(self, net: PowerNetwork, cfg: DynScheduleConfig):
        from .switching import check_sequence
        steps = [t for t, _ in self.events]
        if any(t < 1 for t in steps):
            raise SimulationError("event steps must be positive")
        if len(set(steps)) != len(steps):
            raise SimulationError("at most one switch per step")
        try:
            check_sequence(net, self.ids)
        except ValueError as exc:
            raise SimulationError(str(exc)) from exc


def to_fine(sched, cfg: DynScheduleConfig) -> FineSchedule:
    if isinstance(sched, FineSchedule):
        return sched
    return FineSchedule((), tuple((cfg.slot_start_step(s), cid) for s, cid in sched.items))


def energized_timeline(net: PowerNetwork, sched, cfg: DynScheduleConfig, n_steps: int | None = None):
    """Segments ``(t_start, t_end, energized set)`` over the fine grid."""
    fine = to_fine(sched, cfg)
    n = cfg.n_t if n_steps is None else n_steps
    on = frozenset(g.id for g in net.bsus) | frozenset(fine.initial)
    segs = []
    t0 = 0
    for ts, cid in sorted(fine.events):
        ts = min(ts, n)
        if ts > t0:
            segs.append((t0, ts, on))
            t0 = ts
        on = on | {cid}
    if n > t0 or not segs:
        segs.append((t0, max(n, t0), on))
    return segs


def propagate(net: PowerNetwork, sched, cfg: DynScheduleConfig,
              refs: np.ndarray, load_weight: np.ndarray, n_steps: int | None = None,
              model: _Model | None = None):
    """Propagate setpoint columns through the schedule.

    ``refs`` is ``G x ncol`` and ``load_weight`` has ``ncol`` entries; column
    ``k`` is the trajectory for setpoints ``refs[:, k]`` with all loads and
    initial injections scaled by ``load_weight[k]``. With weight 1 this is a
    plain simulation; with weight 0 it is the linear response to the setpoints.
    """
    model = model or _Model(net, cfg)
    G = model.G
    refs = np.asarray(refs, dtype=float).reshape(G, -1)
    wgt = np.asarray(load_weight, dtype=float).ravel()
    ncol = refs.shape[1]
    n = cfg.n_t if n_steps is None else n_steps
    segs = energized_timeline(net, sched, cfg, n)
    leader = net.gen_index[net.leader.id]

    # steady-state start; several initially connected machines share the
    # initial load by droop and get angles that realize that split
    red0 = model.reduce(segs[0][2])
    x = np.zeros((model.n_state, ncol))
    on0 = [k for k in range(G) if red0.connected[k]]
    pe0 = np.zeros((G, ncol))
    if len(on0) == 1:
        pe0[on0[0]] = red0.c[on0[0]] * wgt
    else:
        share = droop_split([net.generators[k] for k in on0], red0.served)
        pe0[on0] = share[:, None] * wgt[None, :]
        keep = [k for k in on0 if k != leader]
        if keep:
            rhs = pe0[keep] - red0.c[keep, None] * wgt[None, :]
            x[3 * G + np.array(keep)] = np.linalg.solve(red0.B_red[np.ix_(keep, keep)], rhs)
    for k, g in enumerate(net.generators):
        for col in range(ncol):
            s = init_state(g, refs[k, col], pe0[k, col])
            x[k, col], x[G + k, col], x[2 * G + k, col] = s.delta_omega, s.p_m, s.p_set

    W = np.zeros((n, G, ncol))
    PM = np.zeros((n, G, ncol))
    PS = np.zeros((n, G, ncol))
    PE = np.zeros((n, G, ncol))
    TH = np.full((n, model.nbus, ncol), np.nan)
    CON = np.zeros((n, G), dtype=bool)
    SERVED = np.zeros(n)
    FLOWS = {br.id: np.full((n, ncol), np.nan) for br in net.branches}
    pickups, sync = {}, {}
    inp = np.vstack([refs, wgt[None, :]])
    prev = None
    for (t0, t1, on) in segs:
        red = model.reduce(on)
        if prev is not None:
            for k in np.nonzero(red.connected & ~prev.connected)[0]:
                # pickup: bus angle at the zero-transfer value of the previous network
                b = model.bidx[net.generators[k].bus]
                th_g = x[3 * G:4 * G]
                x[3 * G + k] = prev.theta_map[b] @ th_g + prev.theta_const[b] * wgt
                pickups[net.generators[k].id] = t0
                sync[net.generators[k].id] = x[k] - x[leader]
        Bc = red.c[:, None] * wgt[None, :]
        tc = np.nan_to_num(red.theta_const)[:, None] * wgt[None, :]
        dead = np.isnan(red.theta_const)
        Phi, Gam = red.Phi, red.Gam
        GI = Gam @ inp
        for t in range(t0, t1):
            th_g = x[3 * G:4 * G]
            W[t] = x[:G]
            PM[t] = x[G:2 * G]
            PS[t] = x[2 * G:3 * G]
            PE[t] = red.B_red @ th_g + Bc
            th = red.theta_map @ th_g + tc
            th[dead] = np.nan
            TH[t] = th
            x = Phi @ x + GI
        CON[t0:t1] = red.connected
        SERVED[t0:t1] = red.served
        for br, i, j, y in red.flow_map:
            FLOWS[br.id][t0:t1] = y * (TH[t0:t1, i] - TH[t0:t1, j])
        prev = red
    return dict(W=W, PM=PM, PS=PS, PE=PE, TH=TH, CON=CON, SERVED=SERVED, FLOWS=FLOWS,
                pickups=pickups, sync=sync, n=n)


def simulate(net: PowerNetwork, sched, refs, cfg: DynScheduleConfig = DynScheduleConfig(),
             n_steps: int | None = None, validate: bool = True) -> Trajectory:
    """Simulate one setpoint vector and record constraint violations."""
    if validate:
        sched.validate(net, cfg)
    refs = np.asarray(refs, dtype=float).ravel()
    if refs.size != len(net.generators):
        raise SimulationError(f"expected {len(net.generators)} setpoints, got {refs.size}")
    out = propagate(net, sched, cfg, refs[:, None], np.ones(1), n_steps)
    traj = _trajectory(net, cfg, out, 0)
    traj.setpoints = refs.copy()
    traj.violations = find_violations(net, cfg, traj)
    return traj


def _trajectory(net, cfg, out, col) -> Trajectory:
    n = out["n"]
    return Trajectory(
        t_s=np.arange(n) * cfg.dt_s,
        gen_ids=[g.id for g in net.generators],
        bus_ids=[b.id for b in net.buses],
        delta_omega=out["W"][:, :, col].copy(),
        p_set=out["PS"][:, :, col].copy(),
        p_m=out["PM"][:, :, col].copy(),
        p_e=out["PE"][:, :, col].copy(),
        theta=out["TH"][:, :, col].copy(),
        served_mw=out["SERVED"].copy(),
        connected=out["CON"].copy(),
        flows={k: v[:, col].copy() for k, v in out["FLOWS"].items()},
        pickups=dict(out["pickups"]),
        sync_gap={k: float(v[col]) for k, v in out["sync"].items()},
        base_mva=net.base_mva,
        omega_nom=net.omega_nom,
    )


def find_violations(net: PowerNetwork, cfg: DynScheduleConfig, traj: Trajectory) -> list[dict]:
    """Frequency band, P_m limit, branch limit and synchronization violations."""
    out = []
    wmax = cfg.omega_max
    for k, g in enumerate(net.generators):
        con = traj.connected[:, k]
        w = traj.delta_omega[:, k]
        for t in np.nonzero(con & (np.abs(w) > wmax + _TOL))[0]:
            out.append({"step": int(t), "kind": "freq", "gen": g.id, "id": g.id,
                        "magnitude": float(abs(w[t]) - wmax)})
        pm = traj.p_m[:, k]
        bad = con & ((pm < g.p_min - _TOL) | (pm > g.p_max + _TOL))
        for t in np.nonzero(bad)[0]:
            out.append({"step": int(t), "kind": "pm", "gen": g.id, "id": g.id,
                        "magnitude": float(max(g.p_min - pm[t], pm[t] - g.p_max))})
        if g.id in traj.pickups:
            gap = traj.sync_gap[g.id]
            if abs(gap) > cfg.epsilon_rad_s + _TOL:
                out.append({"step": int(traj.pickups[g.id]), "kind": "sync", "gen": g.id, "id": g.id,
                            "magnitude": float(abs(gap) - cfg.epsilon_rad_s)})
    for br in net.branches:
        f = traj.flows.get(br.id)
        if f is None:
            continue
        with np.errstate(invalid="ignore"):
            bad = (f < br.flow_min - _TOL) | (f > br.flow_max + _TOL)
        for t in np.nonzero(bad)[0]:
            out.append({"step": int(t), "kind": "branch", "id": br.id,
                        "magnitude": float(max(br.flow_min - f[t], f[t] - br.flow_max))})
    out.sort(key=lambda v: (v["step"], v["kind"], v.get("id", "")))
    return out


@dataclass
class ObjectiveTerms:
    energy_term: float
    penalty_term: float
    total: float

    def to_dict(self):
        return {"energy_term": self.energy_term, "penalty_term": self.penalty_term, "total": self.total}


def energy_term(traj: Trajectory, cfg: DynScheduleConfig) -> float:
    return cfg.alpha * cfg.dt_s * float(np.sum(traj.served_mw)) / traj.base_mva


def penalty_scale(omega_nom: float, cfg: DynScheduleConfig) -> float:
    """Weight of one rad/s of deviation for one step in the penalty."""
    return cfg.beta * cfg.dt_s / omega_nom


def objective(traj: Trajectory, cfg: DynScheduleConfig) -> ObjectiveTerms:
    """Energy bonus minus frequency-deviation penalty.

    Powers are per-unit on the base power and frequency deviations per-unit on
    the nominal angular frequency, both integrated over seconds.
    """
    e = energy_term(traj, cfg)
    p = penalty_scale(traj.omega_nom, cfg) * float(np.sum(np.abs(traj.delta_omega)))
    return ObjectiveTerms(e, p, e - p)
