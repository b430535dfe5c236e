import copy

import pytest

from psrestore.network import builtin_ieee9, load_case
from psrestore.static import (CAPACITY, FeasibilityCache, brute_force_oracle, config_feasible,
                              infeasibility_reason, read_schedule_csv, schedule_csv, schedule_energy,
                              solve_opfr)
from psrestore.switching import RADIAL, Configuration, Rules, SwitchModel, check_sequence

from test_network import MINIMAL

TEN_SLOT_OPTIMUM = ["T1-4", "L4-5", "D5a", "D5b", "L4-6", "D6a", "L5-7", "T2-7", "G2", "D6b"]


@pytest.fixture(scope="module")
def two():
    return builtin_ieee9("two-loads")


@pytest.fixture(scope="module")
def three():
    return builtin_ieee9("three-loads")


# -- switching rules --------------------------------------------------------

def test_configuration_counts(three):
    cfg = Configuration.of(three, ["T1-4", "L4-5", "D5a"])
    counts = cfg.bus_counts(three)
    assert counts[1] == 2 and counts[4] == 2 and counts[5] == 2 and counts[6] == 0
    assert cfg.live_buses(three) == frozenset({1, 4, 5})
    assert "G1" in cfg.energized


def test_children_follow_adjacency(three):
    model = SwitchModel(three, Rules())
    assert [model.ids[i] for i in model.children(0, model.root_live)] == ["T1-4"]
    m, live = model.apply(model.index["T1-4"], 0, model.root_live)
    assert [model.ids[i] for i in model.children(m, live)] == ["L4-5", "L4-6"]


def test_symmetry_offers_lowest_load_first(three):
    model = SwitchModel(three, Rules())
    mask = model.mask_of(["T1-4", "L4-5"])
    kids = [model.ids[i] for i in model.children(mask, model.live_of(mask))]
    assert "D5a" in kids and "D5b" not in kids
    free = SwitchModel(three, Rules(symmetry=False))
    kids = [free.ids[i] for i in free.children(mask, free.live_of(mask))]
    assert {"D5a", "D5b", "D5c"} <= set(kids)


def test_loop_rule(three):
    ids = ["T1-4", "L4-5", "L4-6", "L5-7", "L6-9", "L7-8"]
    model = SwitchModel(three, RADIAL)
    mask = model.mask_of(ids)
    kids = [model.ids[i] for i in model.children(mask, model.live_of(mask))]
    assert "L8-9" not in kids
    loopy = SwitchModel(three, Rules())
    kids = [loopy.ids[i] for i in loopy.children(mask, loopy.live_of(mask))]
    assert "L8-9" in kids


def test_check_sequence_errors(three):
    check_sequence(three, ["T1-4", "L4-5", "D5a"])
    with pytest.raises(ValueError, match="not adjacent"):
        check_sequence(three, ["L4-5"])
    with pytest.raises(ValueError, match="twice"):
        check_sequence(three, ["T1-4", "T1-4"])
    with pytest.raises(ValueError, match="not a switchable"):
        check_sequence(three, ["G1"])


# -- configuration LP -------------------------------------------------------

def test_bsu_only_feasible(three):
    ok, disp = config_feasible(three, Configuration.of(three))
    assert ok and disp.p_gen == {"G1": 0.0}


def test_bus5_loads_feasible(three):
    ok, disp = config_feasible(three, Configuration.of(three, ["T1-4", "L4-5", "D5a", "D5b", "D5c"]))
    assert ok
    assert disp.p_gen["G1"] == pytest.approx(125.0)
    assert disp.flows["L4-5"] == pytest.approx(125.0)


def test_all_loads_one_generator_infeasible(three):
    ids = [c for c in three.switchable() if c not in ("G2", "G3")]
    cfg = Configuration.of(three, ids)
    ok, _ = config_feasible(three, cfg)
    assert not ok
    assert infeasibility_reason(three, cfg) == "generation capacity"


def test_fully_energized_feasible(three):
    cfg = Configuration.of(three, three.switchable())
    ok, disp = config_feasible(three, cfg)
    assert ok
    assert sum(disp.p_gen.values()) == pytest.approx(315.0)
    for br in three.branches:
        assert br.flow_min - 1e-6 <= disp.flows[br.id] <= br.flow_max + 1e-6


def test_flow_limit_reason():
    doc = copy.deepcopy(MINIMAL)
    doc["buses"].append({"id": 2})
    doc["branches"] = [{"id": "L1-2", "kind": "line", "from_bus": 1, "to_bus": 2, "admittance": 5.0,
                        "flow_min": -1.0, "flow_max": 1.0}]
    doc["loads"] = [{"id": "D1", "bus": 2, "p_nominal": 3.0}]
    net = load_case(doc)
    cfg = Configuration.of(net, ["L1-2", "D1"])
    assert not config_feasible(net, cfg)[0]
    assert config_feasible(net, cfg, CAPACITY)[0]
    assert infeasibility_reason(net, cfg) == "branch flow limit"


def test_cache_counts(three):
    model = SwitchModel(three)
    cache = FeasibilityCache(model)
    m = model.mask_of(["T1-4"])
    assert cache(m) and cache(m)
    assert cache.lps == 1 and cache.hits == 1
    off = FeasibilityCache(model, enabled=False)
    off(m)
    off(m)
    assert off.lps == 2


# -- search -----------------------------------------------------------------

def test_ten_slot_energy(two):
    assert schedule_energy(two, TEN_SLOT_OPTIMUM, 10) == 1207.5
    assert 62.5 * (8 + 7) + 45 * 5 + 45 * 1 == 1207.5


def test_two_loads_ten_slots(two):
    res = solve_opfr(two, 10)
    assert res.energy == 1207.5
    assert res.status == "optimal"
    assert res.schedule == ["T1-4", "L4-5", "D5a", "D5b", "L4-6", "D6a", "L5-7", "T2-7", "G2", "D6b"]


def test_one_slot_is_empty(three):
    res = solve_opfr(three, 1)
    assert res.energy == 0.0


def test_invalid_slots(three):
    with pytest.raises(ValueError):
        solve_opfr(three, 0)


@pytest.mark.parametrize("n_slots", range(1, 9))
@pytest.mark.parametrize("rules", [RADIAL, Rules(), Rules(allow_loops=False, symmetry=False)])
def test_oracle_equivalence(two, n_slots, rules):
    assert solve_opfr(two, n_slots, rules).energy == brute_force_oracle(two, n_slots, rules).best_energy


@pytest.mark.parametrize("n_slots", [5, 7])
def test_memo_and_bound_do_not_change_result(three, n_slots):
    ref = solve_opfr(three, n_slots)
    for memo, bound in ((False, True), (True, False), (False, False)):
        other = solve_opfr(three, n_slots, memo=memo, bound=bound)
        assert (other.energy, other.schedule) == (ref.energy, ref.schedule)


@pytest.mark.parametrize("n_slots", [6, 10, 14])
def test_energy_formula_and_prefix_feasibility(three, n_slots):
    res = solve_opfr(three, n_slots)
    check_sequence(three, res.schedule)
    expected = 0.0
    for s, cid in enumerate(res.schedule, start=1):
        for d in three.loads:
            if d.id == cid:
                expected += d.p_nominal * (n_slots - s + 1)
    assert res.energy == pytest.approx(expected, abs=1e-9)
    assert len(res.dispatch) == len(res.schedule)
    for k in range(1, len(res.schedule) + 1):
        assert config_feasible(three, Configuration.of(three, res.schedule[:k]))[0]


def test_twenty_one_slot_pattern(three):
    res = solve_opfr(three, 21)
    before = res.schedule[:res.schedule.index("G2")]
    assert sum(c.startswith("D5") for c in before) == 3
    assert sum(c.startswith("D6") for c in before) == 2


def test_node_cap(three):
    res = solve_opfr(three, 20, node_cap=5)
    assert res.status == "cap_reached"
    check_sequence(three, res.schedule)


def test_oracle_bsu_only_case():
    net = load_case(MINIMAL)
    res = brute_force_oracle(net, 3)
    assert res.connectivity_count == 1 and res.feasible_count == 1
    assert res.best_energy == 0.0


def test_oracle_single_component_case():
    doc = copy.deepcopy(MINIMAL)
    doc["loads"] = [{"id": "D1", "bus": 1, "p_nominal": 5.0}]
    res = brute_force_oracle(load_case(doc), 1)
    # sequences are counted at their maximal length
    assert res.connectivity_count == 1 and res.best_energy == 5.0


def test_oracle_cap(two):
    res = brute_force_oracle(two, 10, cap=10)
    assert res.status == "cap_reached"


def test_oracle_three_slots_matches_search(two):
    assert brute_force_oracle(two, 3).best_energy == solve_opfr(two, 3).energy


def test_oracle_audit_lists(two):
    res = brute_force_oracle(two, 10)
    assert len(res.infeasible_examples) == 10
    for ex in res.infeasible_examples:
        assert ex["reason"] in ("generation capacity", "branch flow limit", "angle limit")
    assert len(res.relaxation_diff) <= 10


def test_schedule_csv_round_trip(two):
    text = schedule_csv(two, TEN_SLOT_OPTIMUM)
    assert text.splitlines()[0] == "step,component_kind,component_id,bus_a,bus_b"
    assert text.splitlines()[1] == "1,transformer,T1-4,1,4"
    assert read_schedule_csv(text) == TEN_SLOT_OPTIMUM
    timed = schedule_csv(two, TEN_SLOT_OPTIMUM[:2], [45.0, 90.0])
    assert timed.splitlines()[0].endswith(",time_s")
    assert timed.splitlines()[2].endswith(",90.0")
