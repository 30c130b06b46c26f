import cvxpy as cp
import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from dlme.cones import ConeSpec
from dlme.hsde import (
    ConeProgram,
    SolverError,
    SolverSettings,
    build_Q,
    construct_solution,
    embed_solution,
    residual_map,
    solve_hsde,
)


def test_lp_toy(lp_toy):
    bundle, kkt = solve_hsde(lp_toy)
    assert bundle.x[0] == pytest.approx(1.0, abs=1e-9)
    assert kkt.max() <= 1e-7


def test_soc_toy(soc_toy):
    bundle, kkt = solve_hsde(soc_toy)
    assert bundle.x[0] == pytest.approx(5.0, abs=1e-9)
    assert kkt.max() <= 1e-7


def test_q_is_exactly_skew(soc_toy):
    Q = build_Q(soc_toy.A, soc_toy.b, soc_toy.c)
    assert abs(Q + Q.T).max() == 0.0


def test_residual_vanishes_at_solution(soc_toy):
    bundle, _ = solve_hsde(soc_toy)
    Q = build_Q(soc_toy.A, soc_toy.b, soc_toy.c)
    assert np.linalg.norm(residual_map(bundle.z, Q, soc_toy.embedding_spec)) <= 1e-7


def test_embedding_round_trip(soc_toy):
    bundle, _ = solve_hsde(soc_toy)
    x, y, s = construct_solution(embed_solution(bundle.x, bundle.y, bundle.s), 1, soc_toy.cones)
    np.testing.assert_allclose(x, bundle.x, atol=1e-12)
    np.testing.assert_allclose(y, bundle.y, atol=1e-12)
    np.testing.assert_allclose(s, bundle.s, atol=1e-12)


def test_infeasible_and_unbounded_are_reported():
    nn = ConeSpec((("nonneg", 2),))
    infeasible = ConeProgram(sp.csc_matrix([[-1.0], [1.0]]), np.array([-1.0, 0.0]), np.array([1.0]), nn)
    with pytest.raises(SolverError) as err:
        solve_hsde(infeasible)
    assert err.value.status == "infeasible"
    unbounded = ConeProgram(sp.csc_matrix([[-1.0]]), np.array([0.0]), np.array([-1.0]), ConeSpec((("nonneg", 1),)))
    with pytest.raises(SolverError) as err:
        solve_hsde(unbounded)
    assert err.value.status == "unbounded"


def test_iteration_limit_without_polish(soc_toy):
    s = SolverSettings(max_iters=3, polish=False, check_every=1)
    with pytest.raises(SolverError) as err:
        solve_hsde(soc_toy, s)
    assert err.value.status == "max_iterations"


def test_shape_checks():
    with pytest.raises(ValueError):
        ConeProgram(sp.csc_matrix([[1.0]]), np.array([1.0, 2.0]), np.array([1.0]), ConeSpec((("nonneg", 2),)))


def random_socp(seed):
    """Feasible, bounded SOCP: a box plus two second-order cones."""
    rng = np.random.default_rng(seed)
    n = 4
    x0 = rng.standard_normal(n)
    G = rng.standard_normal((3, n))
    H = rng.standard_normal((4, n))
    t1 = np.linalg.norm(G[1:] @ x0) - G[0] @ x0 + 1.0
    t2 = np.linalg.norm(H[1:] @ x0) - H[0] @ x0 + 1.0
    # s = b - A x: box |x - x0| <= 2, then (t1 + G0 x, G1 x, G2 x) in SOC; x0 is strictly feasible
    A = np.vstack([np.eye(n), -np.eye(n), -G, -H])
    b = np.concatenate([x0 + 2, -(x0 - 2), [t1, 0, 0], [t2, 0, 0, 0]])
    c = rng.standard_normal(n)
    cones = ConeSpec((("nonneg", 2 * n), ("soc", 3), ("soc", 4)))
    return ConeProgram(sp.csc_matrix(A), b, c, cones)


def cvxpy_value(prog):
    A = prog.A.toarray()
    x = cp.Variable(prog.A.shape[1])
    s = prog.b - A @ x
    cons, off = [], 0
    for kind, dim in prog.cones.blocks:
        blk = s[off : off + dim]
        if kind == "nonneg":
            cons.append(blk >= 0)
        elif kind == "zero":
            cons.append(blk == 0)
        elif kind == "soc":
            cons.append(cp.SOC(blk[0], blk[1:]))
        off += dim
    p = cp.Problem(cp.Minimize(prog.c @ x), cons)
    p.solve(solver=cp.CLARABEL)
    return p.value


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_matches_clarabel_on_random_socps(seed):
    prog = random_socp(seed)
    bundle, kkt = solve_hsde(prog)
    assert kkt.max() <= 1e-7
    assert prog.c @ bundle.x == pytest.approx(cvxpy_value(prog), rel=1e-6, abs=1e-6)


def test_unscaled_solve_agrees(soc_toy):
    b1, _ = solve_hsde(soc_toy, SolverSettings(scale=False))
    b2, _ = solve_hsde(soc_toy)
    assert b1.x[0] == pytest.approx(b2.x[0], abs=1e-8)


def test_warm_start_skips_splitting():
    prog = random_socp(7)
    first, _ = solve_hsde(prog)
    again, _ = solve_hsde(prog, warm_start=first)
    assert again.info.admm_iters == 0
    np.testing.assert_allclose(again.x, first.x, atol=1e-8)
