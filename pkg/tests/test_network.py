import copy
import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psrestore.network import (CaseError, builtin_ieee9, from_per_unit, load_case, to_per_unit)

MINIMAL = {
    "base_mva": 100.0, "f_nominal_hz": 50.0,
    "buses": [{"id": 1, "is_slack": True}],
    "branches": [],
    "generators": [{"id": "G1", "bus": 1, "kind": "BSU", "p_min": 0.0, "p_max": 10.0,
                    "dynamics": {"J": 0.02, "D": 1.0, "K": 1.0, "T_m": 0.5, "T_gov": 1.0, "sigma": 0.05}}],
    "loads": [],
}


def test_minimal_case():
    net = load_case(MINIMAL)
    assert len(net.bsus) == 1 and len(net.nbsus) == 0
    assert net.slack_bus == 1
    assert net.switchable() == ()


@pytest.mark.parametrize("variant,n_loads", [("three-loads", 9), ("two-loads", 6)])
def test_builtin_variants(variant, n_loads):
    net = builtin_ieee9(variant)
    assert len(net.buses) == 9
    assert len(net.loads) == n_loads
    assert math.isclose(net.total_load, 315.0, rel_tol=0, abs_tol=1e-9)
    assert [g.id for g in net.generators] == ["G1", "G2", "G3"]
    assert net.generators[0].black_start and net.slack_bus == 1
    assert {b.id for b in net.branches if b.kind == "transformer"} == {"T1-4", "T2-7", "T3-9"}
    assert {b.id for b in net.branches if b.kind == "line"} == {
        "L4-5", "L4-6", "L5-7", "L6-9", "L7-8", "L8-9"}
    assert all(g.p_min == 0.0 and g.p_max == 200.0 for g in net.generators)
    assert net.base_mva == 200.0
    assert net.omega_nom == pytest.approx(2 * math.pi * 50)


def test_three_loads_has_twenty_switchable_components():
    net = builtin_ieee9("three-loads")
    assert len(net.switchable()) == 20
    by_bus = {}
    for d in net.loads:
        by_bus.setdefault(d.bus, set()).add(d.p_nominal)
    assert by_bus == {5: {125.0 / 3}, 6: {30.0}, 8: {100.0 / 3}}


def test_table_dynamics():
    net = builtin_ieee9()
    g1 = net.generators[0].dynamics
    assert (g1.J, g1.D, g1.K, g1.T_m, g1.T_gov, g1.sigma) == (0.0203, 1.5, 0.75, 0.6, 1.0, 0.02)


def test_inertia_consistent_with_megawatt_units():
    # J * w_nom should be close to 2 H S / w_nom for H = 5 s on a 200 MVA machine
    net = builtin_ieee9()
    w = net.omega_nom
    assert net.generators[0].dynamics.J * w == pytest.approx(2 * 5 * 200 / w, rel=0.01)


@pytest.mark.parametrize("variant", ["three-loads", "two-loads"])
def test_round_trip(variant):
    net = builtin_ieee9(variant)
    again = load_case(net.dumps())
    assert again == net
    assert again.dumps() == net.dumps()


def test_builtin_graph_connected_to_slack():
    net = builtin_ieee9()
    adj = {b.id: set() for b in net.buses}
    for br in net.branches:
        adj[br.from_bus].add(br.to_bus)
        adj[br.to_bus].add(br.from_bus)
    seen, todo = {1}, [1]
    while todo:
        for nb in adj[todo.pop()]:
            if nb not in seen:
                seen.add(nb)
                todo.append(nb)
    assert seen == {b.id for b in net.buses}


def _error(doc):
    with pytest.raises(CaseError) as info:
        load_case(doc)
    return info.value


def test_dangling_bus_reference():
    doc = copy.deepcopy(MINIMAL)
    doc["loads"] = [{"id": "D1", "bus": 99, "p_nominal": 5.0}]
    err = _error(doc)
    assert "dangling bus reference" in str(err)
    assert err.path == "loads[0].bus"


def test_no_bsu():
    doc = copy.deepcopy(MINIMAL)
    doc["generators"][0]["kind"] = "NBSU"
    assert "no black-start unit" in str(_error(doc))


def test_duplicate_ids():
    doc = copy.deepcopy(MINIMAL)
    doc["loads"] = [{"id": "G1", "bus": 1, "p_nominal": 5.0}]
    err = _error(doc)
    assert "duplicate id" in str(err) and err.path == "loads[0].id"


def test_schema_violations():
    doc = copy.deepcopy(MINIMAL)
    del doc["buses"]
    assert _error(doc).path == "buses"
    doc = copy.deepcopy(MINIMAL)
    doc["generators"][0]["dynamics"]["T_m"] = 0.0
    assert _error(doc).path == "generators[0].dynamics.T_m"
    doc = copy.deepcopy(MINIMAL)
    doc["generators"][0]["p_min"] = "low"
    assert _error(doc).path.startswith("generators[0]")
    assert _error("{not json").path == ""


def test_disconnected_graph_rejected():
    doc = copy.deepcopy(MINIMAL)
    doc["buses"].append({"id": 2})
    with pytest.raises(CaseError):
        load_case(doc)


def test_per_unit_examples():
    net = builtin_ieee9()
    assert to_per_unit(200.0, net) == 1.0
    assert to_per_unit(0.0, net) == 0.0
    assert to_per_unit(41.67, net) == pytest.approx(0.20835, abs=1e-15)


@settings(max_examples=200)
@given(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False))
def test_per_unit_round_trip(p):
    net = builtin_ieee9()
    assert from_per_unit(to_per_unit(p, net), net) == pytest.approx(p, rel=1e-12, abs=1e-300)


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_round_trip_random_cases(data):
    n = data.draw(st.integers(1, 5))
    buses = [{"id": i + 1, "is_slack": i == 0} for i in range(n)]
    branches = [{"id": f"L{i}", "kind": "line", "from_bus": i, "to_bus": i + 1,
                 "admittance": data.draw(st.floats(0.1, 50)), "flow_min": -100.0, "flow_max": 100.0}
                for i in range(1, n)]
    dyn = {"J": 0.02, "D": 1.0, "K": 1.0, "T_m": 0.5, "T_gov": 1.0, "sigma": 0.05}
    gens = [{"id": "G1", "bus": 1, "kind": "BSU", "p_min": 0.0, "p_max": 50.0, "dynamics": dyn}]
    loads = [{"id": f"D{k}", "bus": data.draw(st.integers(1, n)), "p_nominal": data.draw(st.floats(0.5, 40))}
             for k in range(data.draw(st.integers(0, 4)))]
    doc = {"name": "rand", "base_mva": 100.0, "f_nominal_hz": 60.0, "buses": buses, "branches": branches,
           "generators": gens, "loads": loads}
    net = load_case(json.dumps(doc))
    assert load_case(net.dumps()) == net
