import cvxpy as cp
import numpy as np
import pytest

from dlme.emissions import solve_case
from dlme.grid import CaseValidationError, ScenarioSet
from dlme.scheduler import (
    BoundConflictError,
    build_program,
    constraint_violations,
    dump_program,
    read_program,
    simultaneous_storage,
    solve_dispatch,
)
from cases import chain, nominal, single_bus, two_bus


def reference_dispatch(case, scenario):
    """Second-order-cone DistFlow dispatch written directly in cvxpy (MW units)."""
    T, base, dt = case.horizon, case.base_mva, case.dt_hours
    pos = case.bus_position()
    nb = case.n_bus
    root = pos[case.substation.bus]
    # orient every closed branch away from the substation with a BFS of our own
    adj = {i: [] for i in range(nb)}
    for br in case.closed_branches:
        i, j = pos[br.from_bus], pos[br.to_bus]
        adj[i].append((j, br))
        adj[j].append((i, br))
    edges, seen, queue = [], {root}, [root]
    while queue:
        i = queue.pop(0)
        for j, br in adj[i]:
            if j not in seen:
                seen.add(j)
                queue.append(j)
                edges.append((i, j, br))
    nE = len(edges)
    sub = case.substation
    price_p = np.asarray(sub.price_p, float)
    price_q = sub.reactive_prices()

    pS, qS = cp.Variable(T), cp.Variable(T)
    v = cp.Variable((nb, T))
    P, Q, L = (cp.Variable((nE, T)) for _ in range(3)) if nE else (None, None, None)
    cons = [pS >= sub.p_min_mw, pS <= sub.p_max_mw, cp.abs(qS) <= sub.q_max_mvar]
    inj_p = [[0 for _ in range(T)] for _ in range(nb)]
    inj_q = [[0 for _ in range(T)] for _ in range(nb)]
    cost = dt * (price_p @ pS + price_q @ qS)

    def add(j, t, p=0, q=0):
        inj_p[j][t] = inj_p[j][t] + p
        inj_q[j][t] = inj_q[j][t] + q

    for t in range(T):
        add(root, t, pS[t], qS[t])
    for k, (i, j, br) in enumerate(edges):
        for t in range(T):
            add(i, t, -P[k, t], -Q[k, t])
            add(j, t, P[k, t] - br.r * base * L[k, t], Q[k, t] - br.x * base * L[k, t])
            cons += [
                v[j, t] == v[i, t] - 2 * (br.r * P[k, t] + br.x * Q[k, t]) / base + (br.r**2 + br.x**2) * L[k, t],
                cp.SOC(L[k, t] + v[i, t], cp.hstack([2 * P[k, t] / base, 2 * Q[k, t] / base, L[k, t] - v[i, t]])),
                L[k, t] <= br.i_max**2,
                L[k, t] >= br.i_min**2,
            ]
    for j, bus in enumerate(case.buses):
        if j == root and sub.v_set is not None:
            cons.append(v[j] == sub.v_set**2)
        else:
            cons += [v[j] >= bus.v_min**2, v[j] <= bus.v_max**2]
    for k, u in enumerate(case.inverter_dg):
        p, q = cp.Variable(T), cp.Variable(T)
        cap = u.capacity_mw * scenario.pv_availability[k]
        slope = np.sqrt(1 - u.kappa_min**2) / u.kappa_min
        cons += [p <= cap, p >= np.minimum(u.p_min_mw, cap), cp.abs(q) <= slope * p]
        qp = price_q if u.price_q is None else np.full(T, u.price_q)
        cost += dt * (u.price_p * cp.sum(p) + qp @ q)
        for t in range(T):
            add(pos[u.bus], t, p[t], q[t])
    for g in case.sync_dg:
        p, q = cp.Variable(T), cp.Variable(T)
        prev = cp.hstack([np.array([g.initial_output]), p[:-1]]) if T > 1 else np.array([g.initial_output])
        cons += [p >= g.p_min_mw, p <= g.p_max_mw, q >= g.q_min_mvar, q <= g.q_max_mvar,
                 p - prev >= g.ramp_down_mw * dt, p - prev <= g.ramp_up_mw * dt]
        qp = price_q if g.price_q is None else np.full(T, g.price_q)
        cost += dt * (g.price_p * cp.sum(p) + qp @ q)
        for t in range(T):
            add(pos[g.bus], t, p[t], q[t])
    for s in case.storage:
        pc, pd, e = cp.Variable(T), cp.Variable(T), cp.Variable(T)
        prev = cp.hstack([np.array([s.e_init_mwh]), e[:-1]]) if T > 1 else np.array([s.e_init_mwh])
        cons += [pc >= 0, pc <= s.p_cha_max_mw, pd >= 0, pd <= s.p_dis_max_mw,
                 e >= s.e_min_mwh, e <= s.e_max_mwh, e == prev + s.eta_cha * dt * pc - dt * pd / s.eta_dis]
        if case.options.terminal_storage:
            cons.append(e[T - 1] >= s.e_init_mwh)
        cost += dt * s.price * cp.sum(pc + pd)
        for t in range(T):
            add(pos[s.bus], t, pd[t] - pc[t])
    for ev in case.ev:
        p = cp.Variable(T)
        cum = cp.cumsum(p) * dt
        cons += [p >= np.array(ev.p_lb_mw), p <= np.array(ev.p_ub_mw),
                 cum >= np.array(ev.e_lb_mwh), cum <= np.array(ev.e_ub_mwh)]
        for t in range(T):
            add(pos[ev.bus], t, -p[t])
    for j in range(nb):
        for t in range(T):
            cons += [inj_p[j][t] == scenario.p_demand[j, t], inj_q[j][t] == scenario.q_demand[j, t]]
    prob = cp.Problem(cp.Minimize(cost), cons)
    prob.solve(solver=cp.CLARABEL)
    assert prob.status == "optimal"
    return prob.value, pS.value


@pytest.mark.parametrize("label", ["typical1", "typical2"])
def test_tutorial_matches_reference_model(tutorial_case, tutorial_scenarios, label):
    sc = next(s for s in tutorial_scenarios if s.label == label)
    _, _, sol = solve_case(tutorial_case, sc)
    value, p_sub = reference_dispatch(tutorial_case, sc)
    assert sol.objective == pytest.approx(value, rel=1e-6)
    np.testing.assert_allclose(sol["p_sub"], p_sub, atol=1e-3 * np.abs(p_sub).max())


@pytest.mark.parametrize("make", [lambda: single_bus(), lambda: two_bus(), lambda: chain(5, gas_bus=4)])
def test_small_cases_match_reference_model(make):
    case = make()
    sc = nominal(case)
    _, _, sol = solve_case(case, sc)
    value, _ = reference_dispatch(case, sc)
    assert sol.objective == pytest.approx(value, rel=1e-6)


def test_tutorial_solution_is_physical(tutorial_case, tutorial_scenarios, tutorial_dlme):
    for sc in tutorial_scenarios:
        label = sc.label
        sol = tutorial_dlme[label].dispatch
        viol = constraint_violations(sol, tutorial_case, sc)
        assert max(viol.values()) <= 1e-5, (label, viol)
        assert sol.diagnostics["max_cone_gap"] <= 1e-5
        assert simultaneous_storage(sol) <= 1e-4


def test_ieee33_dispatch_kkt(ieee33_dlme):
    for d in ieee33_dlme.values():
        assert d.dispatch.kkt.max() <= 1e-6


def test_single_bus_dispatch_is_trivial():
    case = single_bus(demand=5.0)
    _, _, sol = solve_case(case, nominal(case))
    np.testing.assert_allclose(sol["p_sub"], 5.0, atol=1e-7)
    np.testing.assert_allclose(sol["q_sub"], 1.0, atol=1e-7)


def test_line_losses_are_supplied():
    case = two_bus(r=0.02, x=0.04, demand=3.0)
    _, _, sol = solve_case(case, nominal(case))
    loss = sol["l_branch"][0] * 0.02 * case.base_mva
    np.testing.assert_allclose(sol["p_sub"], 3.0 + loss, atol=1e-7)
    assert np.all(loss > 0)


def test_program_dump_round_trip(tmp_path, tutorial_case, tutorial_scenarios):
    prog = build_program(tutorial_case, tutorial_scenarios[0])
    path = tmp_path / "prog.txt"
    dump_program(prog, path)
    again = read_program(path)
    assert again.cones == prog.cones
    assert abs(again.A - prog.A).max() == 0.0
    np.testing.assert_array_equal(again.b, prog.b)
    np.testing.assert_array_equal(again.c, prog.c)


def test_build_is_deterministic(tutorial_case, tutorial_scenarios):
    a = build_program(tutorial_case, tutorial_scenarios[0])
    b = build_program(tutorial_case, tutorial_scenarios[0])
    assert abs(a.A - b.A).max() == 0.0
    np.testing.assert_array_equal(a.b, b.b)


def test_bound_conflict_is_reported():
    # case validation rejects every conflicting input, so exercise the row guard directly
    from dlme.scheduler import _Builder

    B = _Builder(1)
    col = B.var("p", None)
    with pytest.raises(BoundConflictError, match="hour 1"):
        B.bounds([col[0]], [1.0], 2.0, 1.0, 0, "p")
    assert issubclass(BoundConflictError, CaseValidationError)


def test_overloaded_feeder_is_infeasible():
    from dlme.hsde import SolverError

    case = two_bus(demand=200.0)
    prog = build_program(case, nominal(case))
    with pytest.raises(SolverError) as err:
        solve_dispatch(prog)
    assert err.value.status == "infeasible"


def test_tiny_load_next_to_large_bounds():
    # equilibration alone stalls the splitting on this feeder; the solve must still finish
    case = two_bus(r=0.001, x=0.05)
    p = np.array([[0.0, 0.0], [0.0, 0.00241278]])
    sc = ScenarioSet("tiny", p, 0.3 * p, np.zeros((0, 2)))
    _, bundle, sol = solve_case(case, sc)
    assert bundle.kkt.max() <= 1e-7
    value, _ = reference_dispatch(case, sc)
    assert sol.objective == pytest.approx(value, rel=1e-6)
