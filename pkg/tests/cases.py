"""Small hand-built cases shared by the tests."""

import numpy as np

from dlme.grid import ScenarioSet, case_from_dict


def single_bus(horizon=3, price=40.0, demand=5.0):
    data = {
        "name": "single",
        "base": {"mva": 10.0, "horizon": horizon},
        "buses": [{"id": 1, "v_min": 0.9, "v_max": 1.1, "p_demand_mw": demand, "q_demand_mvar": 1.0,
                   "is_substation": True}],
        "branches": [],
        "substation": {"bus": 1, "emission_rate": 0.875, "p_max_mw": 100.0, "q_max_mvar": 100.0},
        "prices": {"substation_p": [price] * horizon},
    }
    return case_from_dict(data)


def two_bus(horizon=2, r=0.02, x=0.04, demand=3.0):
    data = {
        "name": "two",
        "base": {"mva": 10.0, "horizon": horizon},
        "buses": [
            {"id": 1, "v_min": 0.9, "v_max": 1.1, "is_substation": True},
            {"id": 2, "v_min": 0.9, "v_max": 1.1, "p_demand_mw": demand, "q_demand_mvar": 1.0},
        ],
        "branches": [{"from": 1, "to": 2, "r": r, "x": x, "i_max": 2.0}],
        "substation": {"bus": 1, "emission_rate": 0.875, "p_max_mw": 100.0, "q_max_mvar": 100.0},
        "prices": {"substation_p": [40.0 + 5 * t for t in range(horizon)]},
    }
    return case_from_dict(data)


def chain(n_bus=4, horizon=2, gas_bus=None, demand=1.0):
    """Chain feeder 1-2-...-n with equal loads and an optional gas unit."""
    data = {
        "name": f"chain{n_bus}",
        "base": {"mva": 10.0, "horizon": horizon},
        "buses": [{"id": i + 1, "v_min": 0.9, "v_max": 1.1, "p_demand_mw": 0.0 if i == 0 else demand,
                   "q_demand_mvar": 0.0 if i == 0 else 0.3 * demand, "is_substation": i == 0}
                  for i in range(n_bus)],
        "branches": [{"from": i + 1, "to": i + 2, "r": 0.01, "x": 0.02, "i_max": 3.0} for i in range(n_bus - 1)],
        "substation": {"bus": 1, "emission_rate": 0.875, "p_max_mw": 100.0, "q_max_mvar": 100.0},
        "prices": {"substation_p": [60.0] * horizon},
    }
    if gas_bus is not None:
        data["sync_dg"] = [{"id": "G", "bus": gas_bus, "p_min_mw": 0.0, "p_max_mw": 1.5, "q_min_mvar": -1.0,
                            "q_max_mvar": 1.0, "ramp_down_mw": -2.0, "ramp_up_mw": 2.0, "fuel": "gas",
                            "price_p": 50.0}]
    return case_from_dict(data)


def nominal(case, label="nominal"):
    T = case.horizon
    p = np.array([[b.p_demand_mw] * T for b in case.buses])
    q = np.array([[b.q_demand_mvar] * T for b in case.buses])
    a = np.zeros((len(case.inverter_dg), T))
    return ScenarioSet(label, p, q, a)
