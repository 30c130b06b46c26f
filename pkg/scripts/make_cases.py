"""Regenerate the case and scenario files shipped in ``src/dlme/data``.

    python3 scripts/make_cases.py [--out src/dlme/data]

Everything is derived from fixed seeds, so rerunning reproduces the shipped
files byte for byte.
"""

from __future__ import annotations

import argparse
import json
import math
from pathlib import Path

import numpy as np

from dlme.clustering import cluster_scenarios
from dlme.grid import ScenarioSet, case_from_dict, case_to_dict, write_scenarios

# textbook IEEE 33-bus feeder: from, to, r [ohm], x [ohm], P [kW], Q [kvar] at "to"
IEEE33 = [
    (1, 2, 0.0922, 0.0470, 100, 60), (2, 3, 0.4930, 0.2511, 90, 40),
    (3, 4, 0.3660, 0.1864, 120, 80), (4, 5, 0.3811, 0.1941, 60, 30),
    (5, 6, 0.8190, 0.7070, 60, 20), (6, 7, 0.1872, 0.6188, 200, 100),
    (7, 8, 0.7114, 0.2351, 200, 100), (8, 9, 1.0300, 0.7400, 60, 20),
    (9, 10, 1.0440, 0.7400, 60, 20), (10, 11, 0.1966, 0.0650, 45, 30),
    (11, 12, 0.3744, 0.1238, 60, 35), (12, 13, 1.4680, 1.1550, 60, 35),
    (13, 14, 0.5416, 0.7129, 120, 80), (14, 15, 0.5910, 0.5260, 60, 10),
    (15, 16, 0.7463, 0.5450, 60, 20), (16, 17, 1.2890, 1.7210, 60, 20),
    (17, 18, 0.7320, 0.5740, 90, 40), (2, 19, 0.1640, 0.1565, 90, 40),
    (19, 20, 1.5042, 1.3554, 90, 40), (20, 21, 0.4095, 0.4784, 90, 40),
    (21, 22, 0.7089, 0.9373, 90, 40), (3, 23, 0.4512, 0.3083, 90, 50),
    (23, 24, 0.8980, 0.7091, 420, 200), (24, 25, 0.8960, 0.7011, 420, 200),
    (6, 26, 0.2030, 0.1034, 60, 25), (26, 27, 0.2842, 0.1447, 60, 25),
    (27, 28, 1.0590, 0.9337, 60, 20), (28, 29, 0.8042, 0.7006, 120, 70),
    (29, 30, 0.5075, 0.2585, 200, 600), (30, 31, 0.9744, 0.9630, 150, 70),
    (31, 32, 0.3105, 0.3619, 210, 100), (32, 33, 0.3410, 0.5302, 60, 40),
]

T = 24
HOURS = np.arange(T)

# normalised daily shapes
LOAD_SHAPE = np.array(
    [0.62, 0.58, 0.555, 0.545, 0.56, 0.61, 0.70, 0.80, 0.86, 0.89, 0.905, 0.91,
     0.895, 0.885, 0.88, 0.89, 0.92, 0.97, 1.00, 0.985, 0.95, 0.88, 0.78, 0.69]
)
SUB_PRICE = np.array(
    [38.2, 35.6, 34.1, 33.7, 34.9, 39.3, 47.8, 58.4, 63.1, 61.7, 59.2, 56.6,
     54.3, 53.1, 55.8, 60.4, 69.5, 82.7, 91.3, 88.6, 79.4, 66.2, 52.7, 43.5]
)


def pv_shape(sunrise=6.0, sunset=18.5, peak=1.0):
    h = HOURS + 0.5
    x = (h - sunrise) / (sunset - sunrise)
    out = np.where((x > 0) & (x < 1), np.sin(np.pi * np.clip(x, 0, 1)) ** 1.5, 0.0)
    out[out < 1e-3] = 0.0
    return peak * out


def ev_window(p_max, energy, lead=0.15):
    """Cumulative energy window of a fleet that may charge at any hour."""
    p_ub = np.full(T, p_max)
    # demand accrues with the fleet's plug-in pattern: most energy needed by morning and evening
    weight = 0.4 + 0.6 * np.exp(-0.5 * ((HOURS - 7.5) / 2.5) ** 2) + 0.8 * np.exp(-0.5 * ((HOURS - 20.0) / 2.0) ** 2)
    need = np.cumsum(weight) / weight.sum() * energy
    e_lb = np.maximum(need - lead * energy, 0.0) * np.linspace(0.7, 1.0, T)
    e_lb[-1] = energy
    e_ub = np.minimum(need + 0.25 * energy + 0.5 * p_max, energy + 0.05 * energy)
    e_ub = np.maximum.accumulate(np.maximum(e_ub, e_lb + 0.05 * energy))
    e_lb = np.maximum.accumulate(e_lb)
    return p_ub, e_lb, e_ub


def ieee33_case() -> dict:
    kv, mva_z = 12.66, 10.0
    zb = kv**2 / mva_z
    imp = 0.2  # conductor upgrade factor applied to the textbook impedances
    load_scale = 25.0
    buses = [{"id": 1, "v_min": 0.95, "v_max": 1.05, "p_demand_mw": 0.0, "q_demand_mvar": 0.0, "is_substation": True}]
    branches = []
    for f, t, r, x, p, q in IEEE33:
        buses.append({"id": t, "v_min": 0.95, "v_max": 1.05,
                      "p_demand_mw": round(p * load_scale / 1000, 6),
                      "q_demand_mvar": round(q * load_scale / 1000, 6),
                      "is_substation": False})
        branches.append({"from": f, "to": t, "r": round(r / zb * imp, 8), "x": round(x / zb * imp, 8),
                         "i_max": 1.2, "status": "closed"})
    buses.sort(key=lambda b: b["id"])
    # tie switches of the textbook feeder, kept open
    for f, t in [(8, 21), (9, 15), (12, 22), (18, 33), (25, 29)]:
        branches.append({"from": f, "to": t, "r": 0.05, "x": 0.05, "i_max": 1.0, "status": "open"})
    pv_buses = [7, 14, 22, 25, 31]
    inverter = [
        {"id": f"PV{k + 1}", "bus": b, "capacity_mw": 50.0, "kappa_min": 0.9, "p_min_mw": 0.0,
         "price_p": round(1.0 + 0.15 * k, 2)}
        for k, b in enumerate(pv_buses)
    ]
    sync = [
        {"id": "GAS18", "bus": 18, "fuel": "gas", "p_min_mw": 1.5, "p_max_mw": 14.0, "q_min_mvar": -6.0,
         "q_max_mvar": 8.0, "ramp_down_mw": -4.3, "ramp_up_mw": 3.7, "price_p": 57.5},
        {"id": "GAS33", "bus": 33, "fuel": "gas", "p_min_mw": 1.0, "p_max_mw": 9.0, "q_min_mvar": -4.0,
         "q_max_mvar": 5.0, "ramp_down_mw": -3.1, "ramp_up_mw": 2.6, "price_p": 64.9},
    ]
    storage = [
        {"id": "ES30", "bus": 30, "p_cha_max_mw": 6.0, "p_dis_max_mw": 6.0, "e_min_mwh": 1.2,
         "e_max_mwh": 12.0, "e_init_mwh": 5.1, "eta_cha": 0.90, "eta_dis": 0.92, "price": 0.4},
    ]
    p_ub, e_lb, e_ub = ev_window(7.5, 62.0)
    ev = [{"id": "EV24", "bus": 24, "p_lb_mw": [0.0] * T, "p_ub_mw": _r(p_ub), "e_lb_mwh": _r(e_lb), "e_ub_mwh": _r(e_ub)}]
    return {
        "name": "ieee33",
        "notes": (
            "IEEE 33-bus feeder with textbook loads x25 and impedances x0.2 on a 12.66 kV / 10 MVA "
            "impedance base, expressed on a 100 MVA power base. Five 50 MW PV units on buses 7, 14, 22, "
            "25, 31 (placement is an assumption). Substation imports at the coal rate."
        ),
        "base": {"mva": 100.0, "kv": kv, "dt_hours": 1.0, "horizon": T},
        "buses": buses,
        "branches": branches,
        "inverter_dg": inverter,
        "sync_dg": sync,
        "storage": storage,
        "ev": ev,
        "substation": {"bus": 1, "fuel": "coal", "p_max_mw": 400.0, "q_max_mvar": 300.0, "v_set": 1.0},
        "prices": {"substation_p": _r(SUB_PRICE)},
        "emission_rates": {"coal": 0.875, "gas": 0.520},
        "options": {"terminal_storage": True, "reactive_cost": "signed"},
    }


def _r(a, nd=6):
    return [round(float(v), nd) for v in a]


def tutorial_case() -> dict:
    buses = [
        {"id": 0, "v_min": 0.9, "v_max": 1.1, "p_demand_mw": 0.0, "q_demand_mvar": 0.0, "is_substation": True},
        {"id": 1, "v_min": 0.9, "v_max": 1.1, "p_demand_mw": 1.0, "q_demand_mvar": 0.4},
        {"id": 2, "v_min": 0.9, "v_max": 1.1, "p_demand_mw": 1.2, "q_demand_mvar": 0.5},
        {"id": 3, "v_min": 0.9, "v_max": 1.1, "p_demand_mw": 0.8, "q_demand_mvar": 0.3},
        {"id": 4, "v_min": 0.9, "v_max": 1.1, "p_demand_mw": 1.5, "q_demand_mvar": 0.6},
        {"id": 5, "v_min": 0.9, "v_max": 1.1, "p_demand_mw": 0.9, "q_demand_mvar": 0.35},
    ]
    branches = [
        {"from": 0, "to": 1, "r": 0.011, "x": 0.018, "i_max": 1.5},
        {"from": 1, "to": 2, "r": 0.023, "x": 0.019, "i_max": 1.0},
        {"from": 2, "to": 3, "r": 0.031, "x": 0.022, "i_max": 1.0},
        {"from": 1, "to": 4, "r": 0.017, "x": 0.027, "i_max": 1.0},
        {"from": 4, "to": 5, "r": 0.029, "x": 0.021, "i_max": 1.0},
    ]
    for b in buses:
        b.setdefault("is_substation", False)
    for br in branches:
        br["status"] = "closed"
    p_ub, e_lb, e_ub = ev_window(0.9, 6.3)
    return {
        "name": "tutorial6",
        "notes": "Six-bus teaching feeder with one unit of each DER type.",
        "base": {"mva": 10.0, "kv": 12.66, "dt_hours": 1.0, "horizon": T},
        "buses": buses,
        "branches": branches,
        "inverter_dg": [{"id": "PV5", "bus": 5, "capacity_mw": 2.5, "kappa_min": 0.9, "price_p": 1.3}],
        "sync_dg": [
            {"id": "GAS3", "bus": 3, "fuel": "gas", "p_min_mw": 0.3, "p_max_mw": 2.5, "q_min_mvar": -0.8,
             "q_max_mvar": 1.1, "ramp_down_mw": -0.7, "ramp_up_mw": 0.6, "price_p": 52.5}
        ],
        "storage": [
            {"id": "ES2", "bus": 2, "p_cha_max_mw": 0.8, "p_dis_max_mw": 0.8, "e_min_mwh": 0.3,
             "e_max_mwh": 3.2, "e_init_mwh": 1.35, "eta_cha": 0.90, "eta_dis": 0.92, "price": 0.3}
        ],
        "ev": [{"id": "EV4", "bus": 4, "p_lb_mw": [0.0] * T, "p_ub_mw": _r(p_ub), "e_lb_mwh": _r(e_lb), "e_ub_mwh": _r(e_ub)}],
        "substation": {"bus": 0, "fuel": "coal", "p_max_mw": 20.0, "q_max_mvar": 15.0, "v_set": 1.0},
        "prices": {"substation_p": _r(SUB_PRICE)},
        "emission_rates": {"coal": 0.875, "gas": 0.520},
        "options": {"terminal_storage": True, "reactive_cost": "signed"},
    }


def day_pool(case, n_days: int, seed: int, label="day"):
    """Synthetic daily load/PV pool with seasonal and weather variation."""
    rng = np.random.default_rng(seed)
    base_p = np.array([b.p_demand_mw for b in case.buses])[:, None]
    base_q = np.array([b.q_demand_mvar for b in case.buses])[:, None]
    n_pv = len(case.inverter_dg)
    out = []
    for d in range(n_days):
        doy = (d + 0.5) * 365.0 / n_days
        season = math.cos(2 * math.pi * (doy - 15) / 365.0)  # +1 winter, -1 summer
        level = 1.0 + 0.12 * abs(season) + rng.normal(0, 0.04)
        shape = LOAD_SHAPE * (1 + 0.06 * season * np.cos(2 * np.pi * (HOURS - 19) / 24))
        shape = shape * (1 + rng.normal(0, 0.015, T))
        bus_noise = 1 + rng.normal(0, 0.05, (case.n_bus, 1))
        p = base_p * bus_noise * level * shape[None, :]
        q = base_q * bus_noise * level * shape[None, :] * (1 + rng.normal(0, 0.01, (1, T)))
        day_len = 12.2 - 2.6 * season
        sunrise = 12.3 - day_len / 2
        clear = pv_shape(sunrise, sunrise + day_len, peak=0.55 - 0.2 * season)
        cloud = float(np.clip(rng.beta(2.2, 1.4), 0.05, 1.0))
        pv = np.clip(clear[None, :] * cloud * (1 + rng.normal(0, 0.05, (n_pv, T))), 0.0, 1.0)
        pv[:, clear == 0] = 0.0
        out.append(ScenarioSet(f"{label}{d + 1:03d}", np.round(p, 6), np.round(q, 6), np.round(pv, 6)))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "src" / "dlme" / "data")
    ap.add_argument("--pool-days", type=int, default=48)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args(argv)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)

    for name, build in (("ieee33", ieee33_case), ("tutorial6", tutorial_case)):
        case = case_from_dict(build())
        (out / f"{name}.json").write_text(json.dumps(case_to_dict(case), indent=2) + "\n")

    case33 = case_from_dict(ieee33_case())
    pool = day_pool(case33, args.pool_days, args.seed)
    write_scenarios(pool, case33, out / "ieee33_pool.csv")
    typical, sse, sizes = cluster_scenarios(pool, 4, seed=args.seed)
    write_scenarios(typical, case33, out / "ieee33_typical.csv")
    print(f"ieee33: {args.pool_days}-day pool -> 4 typical days, SSE {sse:.3f}, sizes {sizes}")

    case6 = case_from_dict(tutorial_case())
    pool6 = day_pool(case6, 24, args.seed + 1)
    typical6, sse6, sizes6 = cluster_scenarios(pool6, 2, seed=args.seed)
    write_scenarios(typical6, case6, out / "tutorial6_scenarios.csv")
    print(f"tutorial6: 24-day pool -> 2 typical days, SSE {sse6:.3f}, sizes {sizes6}")


if __name__ == "__main__":
    main()
