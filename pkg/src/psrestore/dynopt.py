"""Dynamic restoration search over condensed switching schedules.

Every node of the search tree is a complete candidate: the schedule that stops
after its last switch. A node is kept when each slot configuration passes the
static DC check and the DVLP restricted to the steps before the next slot is
feasible. Fixing a prefix fixes the trajectory up to the next slot start for
every completion, so a prefix that fails there fails for all completions, and
its windowed minimal penalty bounds every completion's penalty from below.
That gives the node bound::

    energy(prefix) + energy(remaining loads at the earliest free slots)
        - windowed minimal penalty

Exact mode is depth-first branch-and-bound with that bound. Beam mode keeps
the best ``width`` nodes per depth and is a heuristic.
"""

from __future__ import annotations

import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dvlp import build_response_basis, solve_dvlp, truncate_basis
from .dynamics import CondensedSchedule, DynScheduleConfig, ObjectiveTerms, Trajectory, _Model, objective, simulate
from .network import PowerNetwork
from .static import FeasibilityCache, solve_opfr
from .switching import Rules, SwitchModel

_PRUNE_SLACK = 1e-7
# totals closer than this are ties and the earlier node in DFS order wins;
# it absorbs LP round-off so near-zero penalties do not decide the schedule
_TIE = 1e-7


def _better(a, b) -> bool:
    """True when feasible node ``a`` should replace incumbent ``b``."""
    return b is None or a.total > b.total + _TIE


@dataclass
class NodeEval:
    ids: tuple
    static_ok: bool
    window_ok: bool = False
    window_lower: float = math.nan
    feasible: bool = False
    setpoints: np.ndarray | None = None
    energy: float = 0.0
    penalty: float = math.nan
    bound: float = -math.inf

    @property
    def total(self) -> float:
        return self.energy - self.penalty if self.feasible else -math.inf


@dataclass
class DynResult:
    schedule: CondensedSchedule
    setpoints: np.ndarray
    terms: ObjectiveTerms
    mode: str
    status: str = "optimal"
    trajectory: Trajectory | None = field(default=None, repr=False)
    nodes: int = 0
    dvlp_calls: int = 0
    static_lps: int = 0
    pruned_static: int = 0
    pruned_dynamic: int = 0
    pruned_bound: int = 0
    seconds: float = 0.0
    kappa_s: float = 45.0

    @property
    def heuristic(self) -> bool:
        return not self.mode.startswith("exact") and not self.mode.startswith("exhaustive")

    def times_s(self) -> list[float]:
        return [float((s - 1) * self.kappa_s) for s, _ in self.schedule.items]

    def summary(self) -> dict:
        return {"mode": self.mode, "heuristic": self.heuristic, "status": self.status,
                "schedule": [{"slot": s, "time_s": (s - 1) * self.kappa_s, "component_id": c}
                             for s, c in self.schedule.items],
                "setpoints_rad_s": [float(v) for v in self.setpoints],
                "objective": {**self.terms.to_dict(), "minimization_form": -self.terms.total},
                "nodes": self.nodes, "dvlp_calls": self.dvlp_calls, "static_lps": self.static_lps,
                "pruned": {"static": self.pruned_static, "dynamic": self.pruned_dynamic,
                           "bound": self.pruned_bound},
                "seconds": self.seconds}


class _Evaluator:
    """Evaluates nodes; safe to share between threads (caches are memo tables)."""

    def __init__(self, net: PowerNetwork, cfg: DynScheduleConfig, rules: Rules):
        self.net = net
        self.cfg = cfg
        self.model = SwitchModel(net, rules)
        self.static = FeasibilityCache(self.model)
        self.dyn_model = _Model(net, cfg)
        self.lock = threading.Lock()
        self.dvlp_calls = 0
        scale = cfg.alpha * cfg.dt_s / net.base_mva
        self.slot_value = [0.0] + [scale * max(0, cfg.n_t - cfg.slot_start_step(r))
                                   for r in range(1, cfg.n_r + 1)]

    def energy(self, ids) -> float:
        terms = []
        for k, cid in enumerate(ids):
            i = self.model.index[cid]
            if self.model.load_p[i] > 0:
                terms.append(self.model.load_p[i] * self.slot_value[k + 2])
        return math.fsum(terms)

    def energy_bound(self, ids, mask) -> float:
        k = len(ids)
        rest = self.model.remaining_loads(mask)
        extra = [p * self.slot_value[k + 2 + j] for j, p in enumerate(rest) if k + 2 + j <= self.cfg.n_r]
        return self.energy(ids) + math.fsum(extra)

    def evaluate(self, ids, mask) -> NodeEval:
        node = NodeEval(tuple(ids), self.static(mask) if ids else True)
        if not node.static_ok:
            return node
        sched = CondensedSchedule.consecutive(ids)
        basis = build_response_basis(self.net, sched, self.cfg, model=self.dyn_model)
        with self.lock:
            self.dvlp_calls += 1
        node.energy = self.energy(ids)
        nxt = len(ids) + 2
        if nxt <= self.cfg.n_r:
            win = truncate_basis(basis, self.cfg.slot_start_step(nxt))
            wres = solve_dvlp(self.net, sched, self.cfg, True, basis=win, report=False)
            with self.lock:
                self.dvlp_calls += 1
            node.window_ok = wres.feasible
            node.window_lower = wres.penalty_lower if wres.feasible else math.inf
        if nxt > self.cfg.n_r or node.window_ok:
            full = solve_dvlp(self.net, sched, self.cfg, True, basis=basis, report=False)
            node.feasible = full.feasible
            if full.feasible:
                node.setpoints = full.setpoints
                node.penalty = full.penalty
            if nxt > self.cfg.n_r:
                node.window_ok = full.feasible
                node.window_lower = full.penalty_lower if full.feasible else math.inf
        if node.window_ok:
            node.bound = self.energy_bound(ids, mask) - node.window_lower
        return node


class _Cap(Exception):
    pass


class _Search:
    def __init__(self, net, cfg, rules, node_cap, threads, prune=True):
        self.ev = _Evaluator(net, cfg, rules)
        self.node_cap = node_cap
        self.threads = max(1, threads)
        self.prune = prune
        self.lock = threading.Lock()
        self.nodes = 0
        self.pruned = {"static": 0, "dynamic": 0, "bound": 0}
        self.incumbent = -math.inf   # shared value for pruning only

    def count(self):
        with self.lock:
            self.nodes += 1
            if self.node_cap is not None and self.nodes > self.node_cap:
                raise _Cap

    def offer(self, value):
        with self.lock:
            if value > self.incumbent:
                self.incumbent = value

    def root(self) -> NodeEval:
        self.count()
        node = self.ev.evaluate((), 0)
        if node.feasible:
            self.offer(node.total)
        return node

    def dfs(self, ids, mask, live, node) -> NodeEval | None:
        """Best node (first in DFS order among equal totals) in the subtree below ``node``."""
        model = self.ev.model
        best = node if node.feasible else None
        if len(ids) + 2 > self.ev.cfg.n_r:
            return best
        for i in model.children(mask, live):
            m2, l2 = model.apply(i, mask, live)
            cid = (*ids, model.ids[i])
            self.count()
            child = self.ev.evaluate(cid, m2)
            if not child.static_ok:
                self.pruned["static"] += 1
                continue
            if not child.window_ok:
                self.pruned["dynamic"] += 1
                continue
            if child.feasible:
                self.offer(child.total)
            if self.prune and child.bound < self.incumbent - _PRUNE_SLACK:
                self.pruned["bound"] += 1
                continue
            sub = self.dfs(cid, m2, l2, child)
            if sub is not None and _better(sub, best):
                best = sub
        return best

    def exact(self, split_depth: int = 2) -> NodeEval | None:
        root = self.root()
        model = self.ev.model
        if self.threads == 1:
            return self.dfs((), 0, model.root_live, root)
        # walk the top of the tree in DFS order, hand subtrees at split_depth
        # to the pool, then merge in the same order with the same strict rule
        tasks = []

        def collect(ids, mask, live, node, depth):
            if depth == split_depth:
                tasks.append(("sub", (ids, mask, live, node)))
                return
            tasks.append(("node", node))
            if len(ids) + 2 > self.ev.cfg.n_r:
                return
            for i in model.children(mask, live):
                m2, l2 = model.apply(i, mask, live)
                cid = (*ids, model.ids[i])
                self.count()
                child = self.ev.evaluate(cid, m2)
                if not child.static_ok:
                    self.pruned["static"] += 1
                elif not child.window_ok:
                    self.pruned["dynamic"] += 1
                else:
                    if child.feasible:
                        self.offer(child.total)
                    collect(cid, m2, l2, child, depth + 1)

        collect((), 0, model.root_live, root, 0)
        subs = [t[1] for t in tasks if t[0] == "sub"]
        with ThreadPoolExecutor(self.threads) as pool:
            found = iter(list(pool.map(lambda f: self.dfs(*f), subs)))
        best = None
        for kind, item in tasks:
            cand = item if kind == "node" else next(found)
            if cand is not None and cand.feasible and _better(cand, best):
                best = cand
        return best

    def beam(self, width: int) -> NodeEval | None:
        model = self.ev.model
        root = self.root()
        best = root if root.feasible else None
        layer = [((), 0, model.root_live, root)]
        depth = 0
        pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None
        try:
            while layer and depth + 2 <= self.ev.cfg.n_r:
                cands = []
                for ids, mask, live, _ in layer:
                    for i in model.children(mask, live):
                        m2, l2 = model.apply(i, mask, live)
                        cands.append(((*ids, model.ids[i]), m2, l2))
                if pool is not None:
                    evals = list(pool.map(lambda c: self._eval_counted(c[0], c[1]), cands))
                else:
                    evals = [self._eval_counted(c[0], c[1]) for c in cands]
                kept = []
                for (cid, m2, l2), node in zip(cands, evals):
                    if not node.static_ok:
                        self.pruned["static"] += 1
                        continue
                    if not node.window_ok:
                        self.pruned["dynamic"] += 1
                        continue
                    if node.feasible and _better(node, best):
                        best = node
                    kept.append((cid, m2, l2, node))
                # stable sort keeps lexicographic order among equal scores
                kept.sort(key=lambda k: -_score(k[3]))
                if width is not None:
                    kept = kept[:width]
                layer = kept
                depth += 1
        finally:
            if pool is not None:
                pool.shutdown()
        return best

    def _eval_counted(self, ids, mask):
        self.count()
        return self.ev.evaluate(ids, mask)


def _score(node: NodeEval) -> float:
    return node.total if node.feasible else node.bound - 1e6


def solve_dynopfr(net: PowerNetwork, cfg: DynScheduleConfig = DynScheduleConfig(), mode: str = "exact",
                  width: int | None = 8, rules: Rules = Rules(), node_cap: int | None = None,
                  threads: int = 1) -> DynResult:
    """Best condensed schedule for energy served minus frequency penalty.

    ``mode`` is ``"exact"`` (branch-and-bound, optimal over the condensed
    grid) or ``"beam"`` (heuristic; ``width=None`` keeps every node).
    """
    if mode not in ("exact", "beam"):
        raise ValueError(f"unknown mode {mode!r}")
    t0 = time.perf_counter()
    search = _Search(net, cfg, rules, node_cap, threads)
    status = "optimal" if mode == "exact" else "heuristic"
    try:
        best = search.exact() if mode == "exact" else search.beam(width)
    except _Cap:
        status = "cap_reached"
        best = None
    label = "exact" if mode == "exact" else f"beam({'inf' if width is None else width}) heuristic"
    return _finish(net, cfg, search, best, label, status, t0)


def exhaustive_dynopfr(net: PowerNetwork, cfg: DynScheduleConfig = DynScheduleConfig(),
                       rules: Rules = Rules(), node_cap: int | None = None) -> DynResult:
    """Evaluate every connectivity-feasible condensed schedule (no bound pruning).

    Each schedule must pass the static check in every slot and the full-horizon
    DVLP. Serves as the oracle for exact mode.
    """
    t0 = time.perf_counter()
    ev = _Evaluator(net, cfg, rules)
    model = ev.model
    stats = {"nodes": 0}
    best = [None]

    def full(ids, mask):
        node = NodeEval(tuple(ids), ev.static(mask) if ids else True)
        if node.static_ok:
            sched = CondensedSchedule.consecutive(ids)
            res = solve_dvlp(net, sched, cfg, True, report=False)
            ev.dvlp_calls += 1
            node.energy = ev.energy(ids)
            node.feasible = res.feasible
            if res.feasible:
                node.setpoints, node.penalty = res.setpoints, res.penalty
        return node

    def visit(ids, mask, live, static_ok):
        stats["nodes"] += 1
        if node_cap is not None and stats["nodes"] > node_cap:
            raise _Cap
        node = full(ids, mask) if static_ok else NodeEval(tuple(ids), False)
        if node.feasible and _better(node, best[0]):
            best[0] = node
        if len(ids) + 2 > cfg.n_r:
            return
        for i in model.children(mask, live):
            m2, l2 = model.apply(i, mask, live)
            visit((*ids, model.ids[i]), m2, l2, node.static_ok and ev.static(m2))

    status = "optimal"
    try:
        visit((), 0, model.root_live, True)
    except _Cap:
        status = "cap_reached"
    search = _Search.__new__(_Search)
    search.ev, search.nodes = ev, stats["nodes"]
    search.pruned = {"static": 0, "dynamic": 0, "bound": 0}
    return _finish(net, cfg, search, best[0], "exhaustive", status, t0)


def _finish(net, cfg, search, best, label, status, t0) -> DynResult:
    if best is None:
        ids, refs = (), np.zeros(len(net.generators))
    else:
        ids, refs = best.ids, best.setpoints
    sched = CondensedSchedule.consecutive(ids)
    traj = simulate(net, sched, refs, cfg)
    terms = objective(traj, cfg)
    return DynResult(sched, np.asarray(refs, dtype=float), terms, label, status, traj, search.nodes,
                     search.ev.dvlp_calls, search.ev.static.lps, search.pruned["static"],
                     search.pruned["dynamic"], search.pruned["bound"], time.perf_counter() - t0,
                     cfg.kappa_s)


@dataclass
class CompareReport:
    static_schedule: list
    static_energy_mw_step: float
    static_dynamic_status: str
    static_terms: ObjectiveTerms | None
    static_min_peak: float | None
    dynamic: DynResult

    @property
    def static_feasible(self) -> bool:
        return self.static_dynamic_status == "feasible"

    def to_dict(self) -> dict:
        return {"static": {"schedule": self.static_schedule, "energy_mw_step": self.static_energy_mw_step,
                           "dynamic_verdict": self.static_dynamic_status,
                           "objective": None if self.static_terms is None else self.static_terms.to_dict(),
                           "min_peak_rad_s": self.static_min_peak},
                "dynamic": self.dynamic.summary()}


def compare_static_dynamic(net: PowerNetwork, cfg: DynScheduleConfig = DynScheduleConfig(),
                           mode: str = "beam", width: int | None = 8, rules: Rules = Rules(),
                           threads: int = 1, dynamic: DynResult | None = None) -> CompareReport:
    """Check the static optimum against the dynamics and set it beside the dynamic optimum."""
    n_switch = cfg.n_r - 1
    st = solve_opfr(net, max(1, n_switch), rules)
    ids = st.schedule[:n_switch]
    sched = CondensedSchedule.consecutive(ids)
    res = solve_dvlp(net, sched, cfg, True)
    terms = None
    if res.feasible:
        terms = objective(simulate(net, sched, res.setpoints, cfg), cfg)
    dyn = dynamic or solve_dynopfr(net, cfg, mode, width, rules, threads=threads)
    return CompareReport(list(ids), st.energy, res.status, terms, res.min_peak, dyn)
