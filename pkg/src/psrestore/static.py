"""Static restoration sequencing with DC power-flow feasibility.

A schedule switches one component per slot. A load switched at slot ``s`` of
an ``n``-slot horizon serves ``P_d * (n - s + 1)`` MW-step. The search is a
depth-first branch-and-bound over energized sets. Feasibility depends only on
the set, and the slot index of the next switch equals the set size, so the best
completion is memoized by set.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import lp as lpmod
from .network import Load, PowerNetwork
from .switching import RADIAL, Configuration, Rules, SwitchModel

FULL, NO_FLOW, CAPACITY = "full", "no-flow", "capacity"


@dataclass
class Dispatch:
    feasible: bool
    p_gen: dict = field(default_factory=dict)   # MW
    theta: dict = field(default_factory=dict)   # rad
    flows: dict = field(default_factory=dict)   # MW, from -> to

    def to_dict(self):
        return {"feasible": self.feasible, "p_gen_mw": self.p_gen,
                "theta_rad": {str(k): v for k, v in self.theta.items()}, "flows_mw": self.flows}


def feasibility_lp(net: PowerNetwork, cfg: Configuration, limits: str = FULL):
    """Per-unit DC feasibility LP of one configuration.

    Returns ``(lp, gens, buses, branches)`` with the variable blocks in that order.
    """
    on = cfg.energized
    gens = [g for g in net.generators if g.id in on]
    branches = [b for b in net.branches if b.id in on]
    live = cfg.live_buses(net)
    buses = [b.id for b in net.buses if b.id in live]
    ng, nb, nl = len(gens), len(buses), len(branches)
    n = ng + nb + nl
    col = {b: ng + k for k, b in enumerate(buses)}
    base = net.base_mva

    lower = np.empty(n)
    upper = np.empty(n)
    for k, g in enumerate(gens):
        lower[k], upper[k] = g.p_min / base, g.p_max / base
    ang = math.pi if limits != CAPACITY else math.inf
    lower[ng:ng + nb], upper[ng:ng + nb] = -ang, ang
    for k, br in enumerate(branches):
        j = ng + nb + k
        if limits == FULL:
            lower[j], upper[j] = br.flow_min / base, br.flow_max / base
        else:
            lower[j], upper[j] = -math.inf, math.inf
    slack = net.slack_bus
    lower[col[slack]] = upper[col[slack]] = 0.0

    A = np.zeros((nb + nl, n))
    b = np.zeros(nb + nl)
    row = {bus: k for k, bus in enumerate(buses)}
    for k, g in enumerate(gens):
        A[row[g.bus], k] += 1.0
    for d in net.loads:
        if d.id in on:
            b[row[d.bus]] += d.p_nominal / base
    for k, br in enumerate(branches):
        j = ng + nb + k
        A[row[br.from_bus], j] -= 1.0
        A[row[br.to_bus], j] += 1.0
        r = nb + k
        A[r, j] = 1.0
        A[r, col[br.from_bus]] = -br.admittance
        A[r, col[br.to_bus]] = br.admittance
    prog = lpmod.LinearProgram(np.zeros(n), A, [lpmod.EQ] * (nb + nl), b, lower, upper)
    return prog, gens, buses, branches


def config_feasible(net: PowerNetwork, cfg: Configuration, limits: str = FULL,
                    tol: float = 1e-7) -> tuple[bool, Dispatch]:
    """DC feasibility of an energized set, with a certificate dispatch when feasible."""
    prog, gens, buses, branches = feasibility_lp(net, cfg, limits)
    ok, x = lpmod.check_feasible(prog, tol=tol)
    if not ok:
        return False, Dispatch(False)
    base = net.base_mva
    ng, nb = len(gens), len(buses)
    return True, Dispatch(
        True,
        {g.id: float(x[k] * base) for k, g in enumerate(gens)},
        {bus: float(x[ng + k]) for k, bus in enumerate(buses)},
        {br.id: float(x[ng + nb + k] * base) for k, br in enumerate(branches)},
    )


def infeasibility_reason(net: PowerNetwork, cfg: Configuration) -> str:
    """Classify why a configuration fails, by relaxing limits in turn."""
    if not config_feasible(net, cfg, CAPACITY)[0]:
        return "generation capacity"
    if config_feasible(net, cfg, NO_FLOW)[0]:
        return "branch flow limit"
    return "angle limit"


class FeasibilityCache:
    """Memo of configuration verdicts by energized mask.

    A plain dict: concurrent writers may duplicate work but always store the
    same verdict for a key.
    """

    def __init__(self, model: SwitchModel, limits: str = FULL, enabled: bool = True):
        self.model = model
        self.limits = limits
        self.enabled = enabled
        self.table: dict[int, bool] = {}
        self.lps = 0
        self.hits = 0

    def __call__(self, mask: int) -> bool:
        if self.enabled and mask in self.table:
            self.hits += 1
            return self.table[mask]
        self.lps += 1
        ok = config_feasible(self.model.net, self.model.config(mask), self.limits)[0]
        if self.enabled:
            self.table[mask] = ok
        return ok


# -- schedules --------------------------------------------------------------

def schedule_energy(net: PowerNetwork, ids, n_slots: int) -> float:
    """Energy served in MW-step by a schedule switching ``ids`` at slots 1, 2, ..."""
    total = []
    for s, cid in enumerate(ids, start=1):
        c = net.components[cid]
        if isinstance(c, Load):
            total.append(c.p_nominal * (n_slots - s + 1))
    return math.fsum(total)


def schedule_csv(net: PowerNetwork, ids, times=None) -> str:
    """``step,component_kind,component_id,bus_a,bus_b`` rows, plus ``time_s`` when given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["step", "component_kind", "component_id", "bus_a", "bus_b"]
    if times is not None:
        head.append("time_s")
    w.writerow(head)
    for k, cid in enumerate(ids):
        c = net.components[cid]
        bus = c.buses
        row = [k + 1, net.kind_of(cid), cid, bus[0], bus[1] if len(bus) > 1 else ""]
        if times is not None:
            row.append(repr(float(times[k])))
        w.writerow(row)
    return buf.getvalue()


def read_schedule_csv(text: str) -> list[str]:
    rows = list(csv.DictReader(io.StringIO(text)))
    rows.sort(key=lambda r: int(r["step"]))
    return [r["component_id"] for r in rows]


@dataclass
class StaticResult:
    schedule: list[str]
    energy: float
    n_slots: int
    status: str = "optimal"
    dispatch: list[Dispatch] = field(default_factory=list)
    nodes: int = 0
    lps: int = 0
    cache_hits: int = 0
    seconds: float = 0.0

    def summary(self) -> dict:
        return {"status": self.status, "n_slots": self.n_slots, "energy_mw_step": self.energy,
                "schedule": self.schedule, "nodes_expanded": self.nodes, "lps_solved": self.lps,
                "cache_hits": self.cache_hits, "seconds": self.seconds}


class _Cap(Exception):
    pass


def _upper_bound(model: SwitchModel, mask: int, rem: int) -> float:
    loads = model.remaining_loads(mask)
    return math.fsum(p * (rem - k) for k, p in enumerate(loads[:rem]))


def solve_opfr(net: PowerNetwork, n_slots: int, rules: Rules = Rules(), node_cap: int | None = None,
               memo: bool = True, bound: bool = True) -> StaticResult:
    """Globally optimal static schedule over ``n_slots`` switching slots.

    Ties are broken towards the lexicographically smallest (slot, id) list:
    children are explored in id order and only strict gains replace a
    candidate, so stopping early wins over an equal-value continuation.
    """
    if n_slots < 1:
        raise ValueError("n_slots must be at least 1")
    t0 = time.perf_counter()
    model = SwitchModel(net, rules)
    feas = FeasibilityCache(model, enabled=memo)
    eps = 1e-9 * max(1.0, net.total_load * n_slots)
    best_of: dict[int, tuple[float, tuple[int, ...]]] = {}
    stats = {"nodes": 0}
    incumbent = [0.0, ()]

    def note(prefix_val, prefix, val, tail):
        if prefix_val + val > incumbent[0] + eps:
            incumbent[0], incumbent[1] = prefix_val + val, prefix + tail

    def visit(mask, live, k, prefix_val, prefix):
        # returns (value of best completion, its index tuple)
        if memo and mask in best_of:
            v, tail = best_of[mask]
            note(prefix_val, prefix, v, tail)
            return v, tail
        stats["nodes"] += 1
        if node_cap is not None and stats["nodes"] > node_cap:
            raise _Cap
        best, tail = 0.0, ()
        rem = n_slots - k
        if rem > 0:
            for i in model.children(mask, live):
                gain = model.load_p[i] * rem
                m2, l2 = model.apply(i, mask, live)
                if bound and gain + _upper_bound(model, m2, rem - 1) <= best + eps:
                    continue
                if not feas(m2):
                    continue
                note(prefix_val, prefix, gain, (i,))
                v, t = visit(m2, l2, k + 1, prefix_val + gain, prefix + (i,))
                if gain + v > best + eps:
                    best, tail = gain + v, (i,) + t
        if memo:
            best_of[mask] = (best, tail)
        return best, tail

    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 10 * model.n + 100))
    status = "optimal"
    try:
        energy, idx = visit(0, model.root_live, 0, 0.0, ())
    except _Cap:
        status = "cap_reached"
        energy, idx = incumbent
    finally:
        sys.setrecursionlimit(limit)
    ids = [model.ids[i] for i in idx]
    dispatch = []
    mask = 0
    for i in idx:
        mask |= 1 << i
        dispatch.append(config_feasible(net, model.config(mask))[1])
    return StaticResult(ids, schedule_energy(net, ids, n_slots), n_slots, status, dispatch,
                        stats["nodes"], feas.lps, feas.hits, time.perf_counter() - t0)


# -- exhaustive oracle ------------------------------------------------------

@dataclass
class OracleResult:
    status: str
    connectivity_count: int
    feasible_count: int
    best_energy: float
    best_schedule: list[str]
    lps: int = 0
    seconds: float = 0.0
    infeasible_examples: list = field(default_factory=list)
    relaxation_diff: list = field(default_factory=list)
    relaxed_feasible_count: int = 0

    def to_dict(self) -> dict:
        return {"status": self.status, "connectivity_count": self.connectivity_count,
                "feasible_count": self.feasible_count, "best_energy_mw_step": self.best_energy,
                "best_schedule": self.best_schedule, "lps_solved": self.lps, "seconds": self.seconds,
                "relaxed_feasible_count": self.relaxed_feasible_count,
                "infeasible_examples": self.infeasible_examples,
                "relaxation_diff": self.relaxation_diff}


def brute_force_oracle(net: PowerNetwork, n_slots: int, rules: Rules = RADIAL, cap: int | None = None,
                       audit: int = 10, relaxation: str = CAPACITY) -> OracleResult:
    """Enumerate every maximal switching sequence of at most ``n_slots`` switches.

    A sequence is terminal when it has ``n_slots`` switches or no component can
    be switched. It is feasible when every prefix configuration passes the DC
    check. Each sequence is also checked against the ``relaxation`` limits; the
    first ``audit`` sequences whose verdict differs are reported, together with
    the first ``audit`` infeasible sequences and their failing slot.
    """
    t0 = time.perf_counter()
    model = SwitchModel(net, rules)
    feas = FeasibilityCache(model)
    relaxed = FeasibilityCache(model, relaxation)
    eps = 1e-9 * max(1.0, net.total_load * n_slots)
    st = {"conn": 0, "feas": 0, "relaxed": 0, "best": 0.0, "best_seq": ()}
    infeasible, diff = [], []
    names = model.ids

    def record(seq, fail_at, rfail_at):
        if fail_at is not None and len(infeasible) < audit:
            m = 0
            for i in seq[:fail_at]:
                m |= 1 << i
            infeasible.append({"sequence": [names[i] for i in seq], "failing_slot": fail_at,
                               "reason": infeasibility_reason(net, model.config(m))})
        if (fail_at is None) != (rfail_at is None) and len(diff) < audit:
            diff.append({"sequence": [names[i] for i in seq],
                         "verdict": "feasible" if fail_at is None else "infeasible",
                         f"{relaxation}_verdict": "feasible" if rfail_at is None else "infeasible",
                         "failing_slot": fail_at if fail_at is not None else rfail_at})

    def visit(mask, live, seq, val, fail_at, rfail_at):
        k = len(seq)
        kids = model.children(mask, live) if k < n_slots else []
        if not kids:
            st["conn"] += 1
            if cap is not None and st["conn"] > cap:
                raise _Cap
            if fail_at is None:
                st["feas"] += 1
            if rfail_at is None:
                st["relaxed"] += 1
            if fail_at is not None or (fail_at is None) != (rfail_at is None):
                record(seq, fail_at, rfail_at)
            return
        rem = n_slots - k
        for i in kids:
            m2, l2 = model.apply(i, mask, live)
            s2 = seq + (i,)
            f2 = fail_at
            if f2 is None and not feas(m2):
                f2 = k + 1
            r2 = rfail_at
            if r2 is None and not relaxed(m2):
                r2 = k + 1
            v2 = val + model.load_p[i] * rem
            if f2 is None and v2 > st["best"] + eps:
                st["best"], st["best_seq"] = v2, s2
            visit(m2, l2, s2, v2, f2, r2)

    status = "complete"
    try:
        visit(0, model.root_live, (), 0.0, None, None)
    except _Cap:
        status = "cap_reached"
        st["conn"] = cap
    best_ids = [names[i] for i in st["best_seq"]]
    return OracleResult(status, st["conn"], st["feas"], schedule_energy(net, best_ids, n_slots), best_ids,
                        feas.lps + relaxed.lps, time.perf_counter() - t0, infeasible, diff, st["relaxed"])


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")
