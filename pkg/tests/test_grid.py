import copy
import json

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dlme.cli import data_path
from dlme.grid import (
    CaseParseError,
    CaseValidationError,
    ScenarioSet,
    case_from_dict,
    case_to_dict,
    load_case,
    load_scenarios,
    save_case,
    write_scenarios,
)
from cases import single_bus, two_bus


def test_shipped_ieee33(ieee33_case):
    c = ieee33_case
    assert c.n_bus == 33
    assert len(c.closed_branches) == 32
    assert len(c.inverter_dg) == 5
    assert all(u.capacity_mw == 50.0 for u in c.inverter_dg)
    assert c.substation.emission_rate == 0.875
    assert {g.emission_rate for g in c.sync_dg} == {0.520}


def test_shipped_cases_match_schema():
    schema = json.loads(data_path("case_schema.json").read_text())
    for name in ("tutorial6", "ieee33"):
        jsonschema.validate(json.loads(data_path(f"{name}.json").read_text()), schema)


def test_tree_orientation(ieee33_case):
    oriented = ieee33_case.oriented_branches()
    root = ieee33_case.bus_position()[ieee33_case.substation.bus]
    children = {j for _, _, j in oriented}
    assert root not in children
    assert len(children) == ieee33_case.n_bus - 1
    seen = {root}
    for _, i, j in oriented:
        assert i in seen  # parents come before children
        seen.add(j)


def _tutorial_dict():
    return json.loads(data_path("tutorial6.json").read_text())


def test_cycle_is_rejected():
    d = _tutorial_dict()
    d["branches"].append({"from": 3, "to": 5, "r": 0.01, "x": 0.01, "i_max": 1.0})
    with pytest.raises(CaseValidationError, match="non-radial"):
        case_from_dict(d)


def test_disconnected_is_rejected():
    d = _tutorial_dict()
    d["branches"][-1]["status"] = "open"
    with pytest.raises(CaseValidationError, match="non-radial"):
        case_from_dict(d)


def test_open_branch_closes_the_tree():
    d = _tutorial_dict()
    d["branches"].append({"from": 3, "to": 5, "r": 0.01, "x": 0.01, "i_max": 1.0, "status": "open"})
    assert len(case_from_dict(d).closed_branches) == 5


def test_single_bus_case_is_valid():
    c = single_bus()
    assert c.n_bus == 1 and not c.closed_branches


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda d: d["buses"][1].update(v_min=1.2), "v_min"),
        (lambda d: d["sync_dg"][0].update(p_min_mw=9.0), "p_min > p_max"),
        (lambda d: d["storage"][0].update(e_init_mwh=99.0), "e_init"),
        (lambda d: d["inverter_dg"][0].update(bus=42), "unknown bus"),
        (lambda d: d["prices"].update(substation_p=[1.0]), "one entry per hour"),
    ],
)
def test_validation_errors(mutate, message):
    d = _tutorial_dict()
    mutate(d)
    with pytest.raises(CaseValidationError, match=message):
        case_from_dict(d)


def test_parse_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(CaseParseError):
        load_case(bad)
    with pytest.raises(CaseParseError):
        load_case(tmp_path / "missing.json")
    d = _tutorial_dict()
    del d["base"]
    with pytest.raises(CaseParseError):
        case_from_dict(d)


def test_case_round_trip(tmp_path, tutorial_case):
    path = tmp_path / "c.json"
    save_case(tutorial_case, path)
    again = load_case(path)
    assert case_to_dict(again) == case_to_dict(tutorial_case)
    assert again == tutorial_case


def test_default_reactive_price_is_a_tenth():
    c = two_bus()
    np.testing.assert_allclose(c.substation.reactive_prices(), 0.1 * np.asarray(c.substation.price_p))


@settings(max_examples=20, deadline=None)
@given(
    arrays(np.float64, (6, 24), elements=st.floats(0, 10)),
    arrays(np.float64, (6, 24), elements=st.floats(0, 5)),
    arrays(np.float64, (1, 24), elements=st.floats(0, 1)),
)
def test_scenario_csv_round_trip(tmp_path_factory, p, q, a):
    case = load_case(data_path("tutorial6.json"))
    sc = ScenarioSet("s1", p, q, a)
    path = tmp_path_factory.mktemp("sc") / "s.csv"
    write_scenarios([sc], case, path)
    assert load_scenarios(path, case) == [sc]


def test_scenario_checks(tutorial_case, tmp_path):
    with pytest.raises(CaseValidationError):
        ScenarioSet("neg", -np.ones((6, 24)), np.zeros((6, 24)), np.zeros((1, 24)))
    with pytest.raises(CaseValidationError):
        ScenarioSet("pv", np.zeros((6, 24)), np.zeros((6, 24)), 2 * np.ones((1, 24)))
    path = tmp_path / "s.csv"
    path.write_text("scenario,entity_id,hour,p_mw,q_mvar,availability\nx,bus:0,25,1,1,\n")
    with pytest.raises(CaseParseError, match="outside"):
        load_scenarios(path, tutorial_case)
    path.write_text("scenario,entity_id,hour,p_mw,q_mvar,availability\nx,gen:0,1,1,1,\n")
    with pytest.raises(CaseParseError, match="unknown entity"):
        load_scenarios(path, tutorial_case)


def test_scenarios_are_read_only(tutorial_scenarios):
    sc = tutorial_scenarios[0]
    with pytest.raises(ValueError):
        sc.p_demand[0, 0] = 1.0
    other = copy.deepcopy(sc)
    assert other == sc
    assert sc.with_demand(p_demand=sc.p_demand * 2) != sc
