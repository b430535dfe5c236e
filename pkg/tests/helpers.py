"""Small case builders and independent reference computations for tests."""

from __future__ import annotations

import math

from psrestore.network import builtin_ieee9, load_case


def single_machine(dyn: dict, loads=(), p_max: float = 1e4, base: float = 200.0):
    """One bus, one black-start unit, optional loads on the same bus."""
    doc = {
        "name": "single", "base_mva": base, "f_nominal_hz": 50.0,
        "buses": [{"id": 1, "is_slack": True}],
        "branches": [],
        "generators": [{"id": "G1", "bus": 1, "kind": "BSU", "p_min": -p_max, "p_max": p_max,
                        "dynamics": dict(dyn)}],
        "loads": [{"id": f"D{k + 1}", "bus": 1, "p_nominal": p} for k, p in enumerate(loads)],
    }
    return load_case(doc)


def table_dynamics() -> dict:
    net = builtin_ieee9()
    return {g.id: {"J": g.dynamics.J, "D": g.dynamics.D, "K": g.dynamics.K, "T_m": g.dynamics.T_m,
                   "T_gov": g.dynamics.T_gov, "sigma": g.dynamics.sigma} for g in net.generators}


def droop_settle(dyn: dict, ref: float, p: float) -> float:
    return (dyn["K"] * ref - dyn["sigma"] * p) / (dyn["K"] + dyn["sigma"] * dyn["D"])


REF_SCHEDULE = ("T1-4", "L4-6", "D6a", "D6b", "D6c", "L4-5", "L5-7", "T2-7", "G2",
          "D5a", "D5b", "D5c", "L7-8", "D8a", "D8b")
REF_SETPOINTS = (5.330, 1.565, 0.0)
BUS5_FIRST = ("T1-4", "L4-5", "D5a", "D5b", "D5c")


def ref_energy_by_hand() -> float:
    """Energy term of the reference schedule from load sizes and switch times alone.

    Component k (0-based) is switched at (k + 1) * 45 s and a load switched at
    time t is served for (712.5 - t) seconds; powers are per-unit on 200 MVA.
    """
    sizes = {"D5": 125.0 / 3.0, "D6": 30.0, "D8": 100.0 / 3.0}
    terms = []
    for k, cid in enumerate(REF_SCHEDULE):
        if cid.startswith("D"):
            t_on = (k + 1) * 45.0
            terms.append(sizes[cid[:2]] / 200.0 * (712.5 - t_on))
    return math.fsum(terms)
