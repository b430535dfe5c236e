"""Acceptance suite. Each test is tagged with the criterion it checks and a
one-line verdict per criterion is printed in the terminal summary."""

import math
import time

import numpy as np
import pytest

from psrestore.dvlp import build_response_basis, solve_dvlp
from psrestore.dynamics import CondensedSchedule, DynScheduleConfig, FineSchedule, objective, simulate
from psrestore.dynopt import compare_static_dynamic, exhaustive_dynopfr, solve_dynopfr
from psrestore.network import builtin_ieee9, load_case
from psrestore.static import brute_force_oracle, schedule_energy, solve_opfr
from psrestore.switching import check_sequence

from helpers import (BUS5_FIRST, REF_SETPOINTS, REF_SCHEDULE, droop_settle, single_machine, ref_energy_by_hand,
                     table_dynamics)

# energy of a known hand-built 20-slot schedule under the same counting
HAND_SCHEDULE_ENERGY = 3535.0


@pytest.fixture(scope="module")
def two():
    return builtin_ieee9("two-loads")


@pytest.fixture(scope="module")
def three():
    return builtin_ieee9("three-loads")


@pytest.fixture(scope="module")
def ref_basis(three):
    return build_response_basis(three, CondensedSchedule.consecutive(REF_SCHEDULE), DynScheduleConfig())


def note(record_property, text):
    record_property("detail", text)
    print(text)


@pytest.mark.criterion(1)
def test_c1_two_loads_static_optimum(two, record_property):
    t0 = time.perf_counter()
    res = solve_opfr(two, 10)
    dt = time.perf_counter() - t0
    note(record_property, f"energy {res.energy} MW.step in {dt:.1f} s")
    assert res.energy == 1207.5
    assert dt < 60


@pytest.mark.criterion(2)
def test_c2_enumeration_counts(two, record_property):
    t0 = time.perf_counter()
    res = brute_force_oracle(two, 10)
    dt = time.perf_counter() - t0
    note(record_property, f"connectivity {res.connectivity_count} (target 240800), LP-feasible "
                          f"{res.feasible_count} (target 183317), capacity-only relaxation "
                          f"{res.relaxed_feasible_count}, {dt:.0f} s")
    if res.feasible_count != 183317:
        print("first divergent sequences (connected but LP-infeasible):")
        for ex in res.infeasible_examples[:10]:
            print("   ", ex)
        print("sequences whose verdict changes when only capacity limits are kept:")
        for ex in res.relaxation_diff[:10]:
            print("   ", ex)
    assert len(res.infeasible_examples) == 10
    assert dt < 30 * 60
    assert res.connectivity_count == 240800
    assert res.feasible_count == 183317


@pytest.mark.criterion(3)
def test_c3_reduced_instance_matches_oracle(three, record_property):
    res = solve_opfr(three, 12)
    oracle = brute_force_oracle(three, 12)
    note(record_property, f"12 slots: search {res.energy}, oracle {oracle.best_energy}")
    assert res.energy == oracle.best_energy


@pytest.mark.criterion(3)
def test_c3_three_loads_full_instance(three, record_property):
    t0 = time.perf_counter()
    res = solve_opfr(three, 20)
    dt = time.perf_counter() - t0
    before_g2 = res.schedule[:res.schedule.index("G2")]
    n_bus5 = sum(c.startswith("D5") for c in before_g2)
    note(record_property, f"energy {res.energy} (>= {HAND_SCHEDULE_ENERGY}), {n_bus5} bus-5 loads before G2, "
                          f"{dt:.0f} s")
    check_sequence(three, res.schedule)
    assert res.status == "optimal"
    assert schedule_energy(three, res.schedule, 20) == res.energy
    assert res.energy >= HAND_SCHEDULE_ENERGY
    assert n_bus5 == 3
    assert dt < 600


def _two_bus(dyn, p):
    """Black-start unit on bus 1 feeding a load on bus 2 through one line."""
    net = single_machine(dyn)
    doc = net.to_dict()
    doc["buses"].append({"id": 2})
    doc["branches"] = [{"id": "L1-2", "kind": "line", "from_bus": 1, "to_bus": 2, "admittance": 10.0,
                        "flow_min": -1e4, "flow_max": 1e4}]
    doc["loads"] = [{"id": "D1", "bus": 2, "p_nominal": p}]
    return load_case(doc)


@pytest.mark.criterion(4)
def test_c4_fixed_point(record_property):
    rng = np.random.default_rng(2024)
    cfg = DynScheduleConfig(t_max_s=110.0)
    worst = 0.0
    for _ in range(50):
        dyn = {"J": rng.uniform(0.005, 0.05), "D": rng.uniform(0.0, 3.0), "K": rng.uniform(0.3, 1.5),
               "T_m": rng.uniform(0.1, 2.0), "T_gov": rng.uniform(0.3, 5.0), "sigma": rng.uniform(0.01, 0.1)}
        ref, p = rng.uniform(-5, 5), rng.uniform(1, 150)
        traj = simulate(_two_bus(dyn, p), FineSchedule(("L1-2", "D1")), [ref], cfg)
        assert traj.n_t > 200
        # angles rotate together at the steady frequency offset; the state is the angle difference
        rel = traj.theta[:, 1:] - traj.theta[:, :1]
        for arr in (traj.delta_omega, traj.p_set, traj.p_m, traj.p_e, rel, traj.flows["L1-2"]):
            worst = max(worst, float(np.max(np.abs(arr[:201] - arr[0]))))
    note(record_property, f"max drift over 200 steps and 50 draws {worst:.2e}")
    assert worst < 1e-9


def _continuous_step(dyn, ref, p, t_s):
    """Exact solution of the linear machine after a load step from the unloaded equilibrium."""
    J, D, K, Tm, Tg, s = (dyn[k] for k in ("J", "D", "K", "T_m", "T_gov", "sigma"))
    M = J * 2 * math.pi * 50
    A = np.array([[-D / M, 1 / M, 0], [0, -1 / Tm, K / Tm], [-1 / Tg, 0, -s / Tg]])
    den = K + s * D

    def eq(load):
        ps = (D * ref + load) / den
        return np.array([ref - s * ps, K * ps, ps])

    x_inf = eq(p)
    lam, V = np.linalg.eig(A)
    coef = np.linalg.solve(V, eq(0.0) - x_inf)
    return x_inf[0] + float((V @ (coef * np.exp(lam * t_s))).real[0]), float(-1.0 / lam.real.max())


@pytest.mark.criterion(5)
def test_c5_droop_steady_state(record_property):
    cfg = DynScheduleConfig(t_max_s=125.0)
    rng = np.random.default_rng(5)
    lines = []
    worst = 0.0
    for gid, dyn in table_dynamics().items():
        err_sim = err_exact = 0.0
        for _ in range(20):
            ref, p = rng.uniform(-5, 5), rng.uniform(0, 200)
            traj = simulate(single_machine(dyn, [p]), FineSchedule((), ((1, "D1"),)), [ref], cfg)
            # the load closes at step 1
            k = 1 + int(round(120.0 / cfg.dt_s))
            settle = droop_settle(dyn, ref, p)
            exact, tau = _continuous_step(dyn, ref, p, 120.0)
            err_sim = max(err_sim, abs(traj.delta_omega[k, 0] - settle))
            err_exact = max(err_exact, abs(exact - settle))
        worst = max(worst, err_sim)
        lines.append(f"{gid} sim err {err_sim:.1e}, exact-ODE err {err_exact:.1e}, slowest tau {tau:.1f} s")
    note(record_property, "at 120 s after the load step: " + " | ".join(lines))
    assert worst < 1e-4


@pytest.mark.criterion(6)
def test_c6_affinity(three, ref_basis, record_property):
    rng = np.random.default_rng(6)
    sched = CondensedSchedule.consecutive(REF_SCHEDULE)
    worst = 0.0
    for _ in range(20):
        r = rng.uniform(-6, 6, 3)
        direct = simulate(three, sched, r, DynScheduleConfig())
        worst = max(worst, float(np.max(np.abs(ref_basis.omega(r) - direct.delta_omega))))
    note(record_property, f"max reconstruction error {worst:.1e} rad/s")
    assert worst < 1e-8


@pytest.mark.criterion(7)
def test_c7_bus5_first(three, record_property):
    sched = CondensedSchedule.consecutive(BUS5_FIRST)
    cfg = DynScheduleConfig()
    tight = solve_dvlp(three, sched, cfg)
    wide = solve_dvlp(three, sched, cfg.with_(df_max_hz=2.0))
    note(record_property, f"1.5 Hz {tight.status} (min peak {tight.min_peak:.3f} > {cfg.omega_max:.3f}), "
                          f"2.0 Hz {wide.status}")
    assert tight.status == "infeasible"
    assert wide.feasible


@pytest.mark.criterion(7)
def test_c7_reference_setpoints(three, ref_basis, record_property):
    cfg = DynScheduleConfig()
    t0 = time.perf_counter()
    res = solve_dvlp(three, CondensedSchedule.consecutive(REF_SCHEDULE), cfg, basis=ref_basis)
    dt = time.perf_counter() - t0
    assert res.feasible
    r = res.setpoints
    traj = simulate(three, CondensedSchedule.consecutive(REF_SCHEDULE), r, cfg)
    given = ref_basis.trajectory(np.array(REF_SETPOINTS))
    note(record_property, f"setpoints [{r[0]:.3f}, {r[1]:.3f}, {r[2]:.3f}] vs [5.330, 1.565, 0], "
                          f"penalty {res.penalty:.3f}, peak {traj.max_abs_omega():.3f}, {dt:.0f} s; "
                          f"the reference setpoints give G2 sync gap {given.sync_gap['G2']:.3f} rad/s")
    assert traj.max_abs_omega() <= cfg.omega_max + 1e-6
    assert abs(r[2]) < 0.1
    assert dt < 300
    assert r[0] == pytest.approx(REF_SETPOINTS[0], rel=0.1)
    assert r[1] == pytest.approx(REF_SETPOINTS[1], rel=0.1)


@pytest.mark.criterion(8)
def test_c8_objective_consistency(three, ref_basis, record_property):
    cfg = DynScheduleConfig()
    by_hand = ref_energy_by_hand()
    given = objective(simulate(three, CondensedSchedule.consecutive(REF_SCHEDULE), REF_SETPOINTS, cfg), cfg)
    opt = solve_dvlp(three, CondensedSchedule.consecutive(REF_SCHEDULE), cfg, basis=ref_basis)
    best = objective(simulate(three, CondensedSchedule.consecutive(REF_SCHEDULE), opt.setpoints, cfg), cfg)
    note(record_property, f"energy {given.energy_term} (by hand {by_hand}), minimization form "
                          f"{-given.total:.3f} at the reference setpoints, {-best.total:.3f} at the DVLP optimum")
    assert by_hand == pytest.approx(395.5, abs=1.0)
    assert given.energy_term == pytest.approx(by_hand, abs=1e-9)
    for terms in (given, best):
        assert -405.0 <= -terms.total <= -375.0


@pytest.mark.criterion(9)
def test_c9_exact_equals_exhaustive(two, record_property):
    cfg = DynScheduleConfig(t_max_s=352.5)
    assert cfg.n_r == 8
    t0 = time.perf_counter()
    exact = solve_dynopfr(two, cfg, "exact")
    t_exact = time.perf_counter() - t0
    oracle = exhaustive_dynopfr(two, cfg)
    note(record_property, f"n_r 8: exact {exact.schedule.ids} total {exact.terms.total:.6f} "
                          f"({exact.nodes} nodes, {t_exact:.0f} s); exhaustive {oracle.terms.total:.6f} "
                          f"({oracle.nodes} nodes)")
    assert exact.status == oracle.status == "optimal"
    assert exact.schedule.ids == oracle.schedule.ids
    assert exact.terms.total == oracle.terms.total
    assert t_exact < 30 * 60


@pytest.mark.criterion(9)
def test_c9_beam_within_five_percent(three, record_property):
    cfg = DynScheduleConfig()
    reference = -objective(simulate(three, CondensedSchedule.consecutive(REF_SCHEDULE), REF_SETPOINTS, cfg), cfg).total
    res = solve_dynopfr(three, cfg, "beam", width=4)
    traj = simulate(three, res.schedule, res.setpoints, cfg)
    gap = (-res.terms.total - reference) / abs(reference)
    note(record_property, f"beam total {-res.terms.total:.3f} vs reference schedule {reference:.3f}, "
                          f"gap {100 * gap:+.2f}% (negative is better)")
    assert res.heuristic
    assert solve_dvlp(three, res.schedule, cfg).feasible
    assert traj.max_abs_omega() <= cfg.omega_max + 1e-6
    assert abs(gap) <= 0.05


@pytest.mark.criterion(10)
def test_c10_static_vs_dynamic(three, record_property):
    cfg = DynScheduleConfig()
    rep = compare_static_dynamic(three, cfg, "beam", width=4)
    dyn = rep.dynamic
    traj = simulate(three, dyn.schedule, dyn.setpoints, cfg)
    note(record_property, f"static prefix {rep.static_dynamic_status} (min peak {rep.static_min_peak:.3f}), "
                          f"dynamic {dyn.status} with total {dyn.terms.total:.3f}")
    assert not rep.static_feasible
    assert dyn.status == "heuristic"
    assert solve_dvlp(three, dyn.schedule, cfg).feasible
    assert traj.max_abs_omega() <= cfg.omega_max + 1e-6
