import warnings

import numpy as np
import pytest

from dlme.emissions import (
    EmissionModel,
    compute_dlme,
    emission_gradient,
    fd_audit,
    fd_oracle,
    sample_entries,
)
from dlme.scheduler import build_program
from cases import chain, nominal, single_bus, two_bus


def test_single_bus_dlme_is_the_grid_rate():
    case = single_bus()
    d = compute_dlme(case, nominal(case))
    np.testing.assert_allclose(d.active, 0.875, atol=1e-9)
    np.testing.assert_allclose(d.reactive, 0.0, atol=1e-9)
    assert not d.flags.any()


def test_losses_raise_the_remote_signal():
    case = two_bus()
    sc = nominal(case)
    d = compute_dlme(case, sc)
    assert np.all(d.active[1] > 0.875)
    np.testing.assert_allclose(d.active[0], 0.875, atol=1e-9)
    for t in range(case.horizon):
        fd = fd_oracle(case, sc, 1, t)
        assert d.active[1, t] == pytest.approx(fd.value, rel=1e-6)
        fq = fd_oracle(case, sc, 1, t, "reactive")
        assert d.reactive[1, t] == pytest.approx(fq.value, rel=1e-5, abs=1e-8)
    assert np.all(d.reactive[1] > 0)


def test_local_gas_unit_sets_the_signal():
    # the gas unit is cheaper than the grid and has headroom, so it is marginal nearby
    case = chain(4, gas_bus=4, demand=0.3)
    sc = nominal(case)
    d = compute_dlme(case, sc)
    assert 0.52 <= d.active[3, 0] < 0.6
    assert d.active[3, 0] == pytest.approx(fd_oracle(case, sc, 3, 0).value, rel=1e-5)


def test_emission_total_and_gradient(tutorial_case, tutorial_dlme):
    d = tutorial_dlme["typical1"]
    model = EmissionModel.from_case(tutorial_case)
    g = emission_gradient(model, d.program.index)
    assert model.total(d.dispatch) == pytest.approx(g @ d.bundle.x, rel=1e-12)
    assert d.emission == pytest.approx(model.total(d.dispatch))
    with pytest.raises(ValueError):
        EmissionModel(-1.0, ())


def test_fd_oracle_checks_arguments():
    case = single_bus()
    with pytest.raises(ValueError, match="nonzero"):
        fd_oracle(case, nominal(case), 0, 0, delta=0.0)
    with pytest.raises(ValueError):
        fd_oracle(case, nominal(case), 0, 0, which="both")


def test_sample_entries_skip_flags(tutorial_dlme):
    d = tutorial_dlme["typical1"]
    s = sample_entries(d, 20, seed=1)
    assert len(set(s)) == 20
    assert s == sample_entries(d, 20, seed=1)
    mask = d.active_flags.copy()
    mask[:, :] = True
    mask[0, 0] = False
    d2 = type(d)(**{**d.__dict__, "active_flags": mask})
    assert sample_entries(d2, 5) == [(0, 0, "active")]
    assert len(sample_entries(d2, 5, unflagged=False)) == 5


def test_tutorial_signals_match_oracle(tutorial_case, tutorial_scenarios, tutorial_dlme):
    sc = tutorial_scenarios[0]
    d = tutorial_dlme[sc.label]
    samples = sample_entries(d, 6, seed=3) + sample_entries(d, 6, seed=3, which="reactive")
    rows = fd_audit(d, tutorial_case, sc, samples)
    assert all(r["pass"] for r in rows), [r for r in rows if not r["pass"]]


def test_signals_are_reproducible(tutorial_case, tutorial_scenarios):
    sc = tutorial_scenarios[1]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = compute_dlme(tutorial_case, sc)
        b = compute_dlme(tutorial_case, sc)
    np.testing.assert_array_equal(a.active, b.active)
    np.testing.assert_array_equal(a.reactive, b.reactive)


def test_demand_enters_only_the_balance_rows():
    case = two_bus()
    sc = nominal(case)
    a = build_program(case, sc)
    b = build_program(case, sc.with_demand(p_demand=sc.p_demand * 1.5))
    assert abs(a.A - b.A).max() == 0.0
    changed = np.flatnonzero(a.b != b.b)
    assert set(changed) <= set(a.index.p_balance_rows.ravel())
