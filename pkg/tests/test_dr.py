import itertools
import math
import warnings

import numpy as np
import pytest

from dlme.dr import (
    BudgetError,
    UndefinedEnhanceWarning,
    allocate_dr,
    demand_caps,
    enhance_metric,
    evaluate,
    hourly_budget,
    reduced_scenario,
)
from dlme.emissions import compute_dlme, fd_oracle
from cases import chain, nominal


def vertex_optimum(signal, budget, caps):
    """Best value over every vertex of {0 <= r <= cap, sum(r) = budget}."""
    n = signal.size
    best, arg = -math.inf, None
    for mask in itertools.product((0, 1), repeat=n):
        at_cap = np.array(mask, dtype=bool)
        base = caps * at_cap
        rest = budget - base.sum()
        for f in [None] + [i for i in range(n) if not at_cap[i]]:
            r = base.copy()
            if f is None:
                if abs(rest) > 1e-12:
                    continue
            else:
                if rest < -1e-12 or rest > caps[f] + 1e-12:
                    continue
                r[f] = rest
            val = float(signal @ r)
            if val > best + 1e-12:
                best, arg = val, r
    return best, arg


def test_greedy_matches_vertex_enumeration():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n = int(rng.integers(1, 7))
        signal = rng.uniform(0.3, 1.0, n)
        caps = rng.uniform(0.0, 2.0, n)
        budget = rng.uniform(0.0, caps.sum())
        plan = allocate_dr(signal, budget, caps)
        r = plan.response[:, 0]
        best, arg = vertex_optimum(signal, budget, caps)
        assert signal @ r == pytest.approx(best, abs=1e-12)
        np.testing.assert_allclose(r, arg, atol=1e-12)
        assert r.sum() == pytest.approx(budget, abs=1e-12)


def test_worked_examples():
    plan = allocate_dr([0.9, 0.5, 0.1], 1.0, 0.6)
    np.testing.assert_allclose(plan.response[:, 0], [0.6, 0.4, 0.0])
    # uniform signal: lowest bus index first
    plan = allocate_dr([0.7, 0.7, 0.7], 0.5, 1.0)
    np.testing.assert_allclose(plan.response[:, 0], [0.5, 0.0, 0.0])
    plan = allocate_dr([0.9, 0.5], 0.0, 1.0)
    assert plan.total() == 0.0


def test_budget_errors():
    with pytest.raises(BudgetError):
        allocate_dr([0.9, 0.5], 3.0, 1.0)
    with pytest.raises(BudgetError):
        allocate_dr([0.9, 0.5], -1.0, 1.0)
    with pytest.raises(BudgetError):
        allocate_dr([0.9, 0.5], 1.0, -1.0)
    with pytest.raises(ValueError):
        allocate_dr([np.nan, 0.5], 1.0, 1.0)
    with pytest.raises(BudgetError):
        hourly_budget(nominal(chain(3)), -1.0)


def test_excluded_entries_get_nothing():
    plan = allocate_dr([0.9, 0.5, 0.1], 1.0, 1.0, exclude=[True, False, False])
    np.testing.assert_allclose(plan.response[:, 0], [0.0, 1.0, 0.0])


def test_daily_mode_places_one_total():
    signal = np.array([[0.5, 0.9], [0.6, 0.1]])
    plan = allocate_dr(signal, 1.5, 1.0, mode="daily")
    np.testing.assert_allclose(plan.response, [[0.0, 1.0], [0.5, 0.0]])
    with pytest.raises(ValueError):
        allocate_dr(signal, 1.0, 1.0, mode="weekly")


def test_enhance_examples():
    assert enhance_metric(30.987, 30.563, 30.781) == pytest.approx(105.83, abs=2.0)
    assert enhance_metric(17.460, 17.106, 17.253) == pytest.approx(71.01, abs=2.0)
    with pytest.warns(UndefinedEnhanceWarning):
        assert math.isnan(enhance_metric(10.0, 9.0, 10.0))


def test_budget_and_caps():
    sc = nominal(chain(3, demand=2.0))
    assert hourly_budget(sc, 1.0) == pytest.approx(0.04)
    assert hourly_budget(sc, 10.0, reactive=True) == pytest.approx(0.12)
    np.testing.assert_array_equal(demand_caps(sc), sc.p_demand)


def test_reduced_scenario_rejects_overshoot():
    sc = nominal(chain(3))
    plan = allocate_dr(np.ones((3, 2)), 0.5, demand_caps(sc), name="x")
    red = reduced_scenario(sc, plan)
    np.testing.assert_allclose(red.p_demand, sc.p_demand - plan.response)
    assert red.label.endswith("-dr-x")
    plan.response[1, 0] = 5.0
    with pytest.raises(BudgetError):
        reduced_scenario(sc, plan)


def test_zero_budget_leaves_emission_unchanged():
    case = chain(4, gas_bus=3)
    sc = nominal(case)
    d = compute_dlme(case, sc)
    rep = evaluate(case, sc, {"dlme": d.active}, budget_pct=0.0)
    assert rep.post["dlme"] == rep.initial


def test_guided_shedding_reduces_emission():
    case = chain(5, gas_bus=4)
    sc = nominal(case)
    d = compute_dlme(case, sc)
    flat = np.full_like(d.active, 0.875)
    rep = evaluate(case, sc, {"dlme": d.active, "flat": flat}, budget_pct=5.0)
    assert rep.post["dlme"] < rep.initial
    assert rep.post["dlme"] <= rep.post["flat"] + 1e-9
    assert set(rep.as_dict()) >= {"initial", "post", "reduction", "enhance_pct"}
    assert "flat" in rep.enhance


def test_reactive_plan_tracks_the_reactive_signal():
    case = chain(4)
    sc = nominal(case)
    d = compute_dlme(case, sc)
    rep = evaluate(case, sc, {"dlme_q": d.reactive}, budget_pct=1.0, reactive=True)
    budget = hourly_budget(sc, 1.0, reactive=True)
    # a small shed at the best bus lowers emissions by about signal * budget
    best = d.reactive.max(axis=0)
    predicted = float(np.sum(best * budget)) * case.dt_hours
    assert rep.initial - rep.post["dlme_q"] == pytest.approx(predicted, rel=1e-2)
    bus = int(np.argmax(d.reactive[:, 0]))
    assert d.reactive[bus, 0] == pytest.approx(fd_oracle(case, sc, bus, 0, "reactive").value, rel=1e-5)


def test_evaluate_warns_nothing_on_regular_cases():
    case = chain(3)
    sc = nominal(case)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        d = compute_dlme(case, sc)
        evaluate(case, sc, {"dlme": d.active}, budget_pct=1.0)
