import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dlme.baselines import (
    MeritOrder,
    MeritOrderError,
    carbon_emission_flow,
    compute_dlae,
    compute_rodm,
    merit_order,
    mix_intensity,
)
from dlme.emissions import solve_case
from dlme.grid import ScenarioSet, case_from_dict
from cases import chain, nominal, single_bus


def test_mixing_two_sources():
    assert mix_intensity([1.0, 1.0], [0.875, 0.520]) == pytest.approx(0.6975, abs=1e-12)
    assert mix_intensity([2.0], [0.52]) == pytest.approx(0.52)
    assert mix_intensity([0.0, 0.0], [0.875, 0.52]) == 0.0


def test_single_source_everywhere():
    case = chain(4)
    sc = nominal(case)
    _, _, sol = solve_case(case, sc)
    np.testing.assert_allclose(compute_dlae(case, sol, sc), 0.875, atol=1e-12)


def sharing_oracle(case, sol, scenario, t):
    """Proportional sharing written as one linear system per hour (no storage, no EVs)."""
    nb, base = case.n_bus, case.base_mva
    pos = case.bus_position()
    root = pos[case.substation.bus]
    gen_p = np.zeros(nb)
    gen_c = np.zeros(nb)
    # a unit with negative or noise-level output injects nothing
    p_sub = sol["p_sub"][t] if sol["p_sub"][t] > 1e-9 else 0.0
    gen_p[root] += p_sub
    gen_c[root] += p_sub * case.substation.emission_rate
    for k, g in enumerate(case.sync_dg):
        p = sol["p_sync"][k, t] if sol["p_sync"][k, t] > 1e-9 else 0.0
        gen_p[pos[g.bus]] += p
        gen_c[pos[g.bus]] += p * g.emission_rate
    for k, u in enumerate(case.inverter_dg):
        gen_p[pos[u.bus]] += max(sol["p_inv"][k, t], 0.0)
    W = np.zeros((nb, nb))
    for k, (_, i, j) in enumerate(case.oriented_branches()):
        P = sol["p_branch"][k, t]
        recv = P - case.closed_branches[k].r * sol["l_branch"][k, t] * base
        if P > 0 and recv > 0:
            W[j, i] += recv
        elif P < 0 and recv < 0:
            W[i, j] += -P
    # only buses reachable from a source carry power; other flows are solver noise
    fed = gen_p > 1e-12
    for _ in range(nb):
        fed = fed | ((W[:, fed] > 0).any(axis=1))
    W[:, ~fed] = 0.0
    total = gen_p + W.sum(axis=1)
    M = np.diag(total) - W
    dead = total <= 1e-12
    M[dead] = 0.0
    M[dead, dead] = 1.0
    rhs = np.where(dead, 0.0, gen_c)
    return np.linalg.solve(M, rhs)


def test_dlae_matches_linear_sharing_on_shipped_feeder(ieee33_case, ieee33_scenarios, ieee33_dlme):
    # the 33-bus case has storage, so compare only hours where it is idle
    sc = ieee33_scenarios[0]
    sol = ieee33_dlme[sc.label].dispatch
    dlae = compute_dlae(ieee33_case, sol, sc)
    idle = [t for t in range(ieee33_case.horizon)
            if np.all(sol["p_dis"][:, t] < 1e-9) and np.all(sol["p_cha"][:, t] < 1e-9) and not ieee33_case.ev]
    for t in idle:
        np.testing.assert_allclose(dlae[:, t], sharing_oracle(ieee33_case, sol, sc, t), atol=1e-9)


@st.composite
def random_feeders(draw):
    n = draw(st.integers(2, 6))
    parents = [draw(st.integers(0, j - 1)) for j in range(1, n)]
    T = draw(st.integers(1, 2))
    buses = [{"id": j + 1, "v_min": 0.9, "v_max": 1.1, "is_substation": j == 0} for j in range(n)]
    branches = [{"from": p + 1, "to": j + 1, "r": draw(st.floats(0.001, 0.03)), "x": draw(st.floats(0.001, 0.05)),
                 "i_max": 5.0} for j, p in enumerate(parents, start=1)]
    n_gas = draw(st.integers(0, 2))
    gas = [{"id": f"G{k}", "bus": draw(st.integers(2, n)), "p_min_mw": 0.0, "p_max_mw": draw(st.floats(0.2, 2.0)),
            "q_min_mvar": -1.0, "q_max_mvar": 1.0, "ramp_down_mw": -5.0, "ramp_up_mw": 5.0, "fuel": "gas",
            "price_p": draw(st.floats(30.0, 80.0))} for k in range(n_gas)]
    pv = [{"id": "PV", "bus": draw(st.integers(2, n)), "capacity_mw": 1.0, "price_p": 0.0}] if draw(st.booleans()) else []
    data = {
        "name": "random",
        "base": {"mva": 10.0, "horizon": T},
        "buses": buses,
        "branches": branches,
        "substation": {"bus": 1, "emission_rate": 0.875, "p_max_mw": 100.0, "q_max_mvar": 100.0},
        "prices": {"substation_p": [60.0] * T},
        "sync_dg": gas,
        "inverter_dg": pv,
    }
    case = case_from_dict(data)
    # loads are zero or well above the dispatch tolerance
    load = st.one_of(st.just(0.0), st.floats(0.01, 1.0))
    p = np.array([[0.0] * T] + [[draw(load) for _ in range(T)] for _ in range(n - 1)])
    a = np.array([[draw(st.floats(0.0, 1.0)) for _ in range(T)] for _ in pv]).reshape(len(pv), T)
    return case, ScenarioSet("r", p, 0.3 * p, a)


@settings(max_examples=25, deadline=None)
@given(random_feeders())
def test_carbon_flow_on_random_feeders(feeder):
    case, sc = feeder
    _, _, sol = solve_case(case, sc)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cef = carbon_emission_flow(case, sol, sc)
    np.testing.assert_allclose(cef.audit(), 0.0, atol=1e-6)
    for t in range(case.horizon):
        np.testing.assert_allclose(cef.node[:, t], sharing_oracle(case, sol, sc, t), atol=1e-9)
        served = sc.p_demand[:, t] > 1e-9
        assert np.all(cef.node[served, t] >= cef.source_min[t] - 1e-12)
        assert np.all(cef.node[served, t] <= cef.source_max[t] + 1e-12)


@pytest.mark.parametrize("which", ["tutorial", "ieee33"])
def test_conservation_and_bounds_on_shipped_cases(which, request):
    case = request.getfixturevalue(f"{which}_case")
    dl = request.getfixturevalue(f"{which}_dlme")
    for sc in request.getfixturevalue(f"{which}_scenarios"):
        cef = carbon_emission_flow(case, dl[sc.label].dispatch, sc)
        assert np.abs(cef.audit()).max() <= 1e-6
        loaded = sc.p_demand > 1e-9
        lo = np.broadcast_to(cef.source_min, cef.node.shape)
        hi = np.broadcast_to(cef.source_max, cef.node.shape)
        assert np.all(cef.node[loaded] >= lo[loaded] - 1e-12)
        assert np.all(cef.node[loaded] <= hi[loaded] + 1e-12)


def _merit_case(pv_mw=2.0):
    data = {
        "name": "merit",
        "base": {"mva": 10.0, "horizon": 1},
        "buses": [{"id": 1, "is_substation": True}],
        "substation": {"bus": 1, "emission_rate": 0.875},
        "prices": {"substation_p": [60.0]},
        "inverter_dg": [{"id": "PV", "bus": 1, "capacity_mw": pv_mw}],
        "sync_dg": [{"id": "G", "bus": 1, "p_min_mw": 0.0, "p_max_mw": 1.5, "q_min_mvar": -1.0, "q_max_mvar": 1.0,
                     "ramp_down_mw": -2.0, "ramp_up_mw": 2.0, "fuel": "gas", "price_p": 50.0}],
    }
    return case_from_dict(data)


@pytest.mark.parametrize("demand, rate", [(1.0, 0.0), (2.0, 0.52), (3.0, 0.52), (3.5, 0.875), (10.0, 0.875)])
def test_merit_order_marginal_unit(demand, rate):
    case = _merit_case()
    sc = ScenarioSet("m", np.array([[demand]]), np.zeros((1, 1)), np.ones((1, 1)))
    assert compute_rodm(case, sc)[0, 0] == rate


def test_merit_order_stacking():
    case = _merit_case()
    sc = ScenarioSet("m", np.array([[1.0]]), np.zeros((1, 1)), np.full((1, 1), 0.5))
    stack = merit_order(case, sc, 0)
    assert stack.names == ("PV", "G", "substation")
    np.testing.assert_allclose(stack.cumulative, [1.0, 2.5, 1002.5])
    # a demand on a block boundary is served by the next unit
    assert stack.marginal(1.0) == 1


def test_merit_order_overload():
    stack = MeritOrder(("a",), np.array([1.0]), np.array([2.0]), np.array([0.5]))
    with pytest.raises(MeritOrderError):
        stack.marginal(2.0)
    assert stack.marginal(1.9) == 0


def test_rodm_is_uniform_across_buses(ieee33_case, ieee33_scenarios):
    r = compute_rodm(ieee33_case, ieee33_scenarios[0])
    assert r.shape == (33, ieee33_case.horizon)
    assert np.all(r == r[0])


def test_single_bus_signals_agree():
    case = single_bus()
    sc = nominal(case)
    _, _, sol = solve_case(case, sc)
    np.testing.assert_allclose(compute_dlae(case, sol, sc), 0.875)
    np.testing.assert_allclose(compute_rodm(case, sc), 0.875)
