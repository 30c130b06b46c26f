"""Implicit differentiation of the conic solution map.

The map ``(A, b, c) -> (x*, y*, s*)`` factors as ``phi o s o Q``: build the
skew matrix, solve the embedding, read off the solution. At a solution with
``w = 1`` the residual Jacobian is ``M = (Q - I) DPi(z) + I``. ``M`` always
annihilates ``z`` (the residual is positively homogeneous) and ``Pi(z)' M = 0``,
so a perturbation is pushed through the bordered matrix
``M + Pi(z) e_N'``, which is nonsingular whenever the solution is locally
unique and yields the same step with ``dw = 0``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .cones import ConeJacobian, ConeSpec, dproject_cone, project_cone
from .hsde import (
    ConeProgram,
    DegenerateEmbeddingError,
    SolutionBundle,
    build_Q,
    embed_solution,
    residual_map,
)
from .linsolve import RobustLU

log = logging.getLogger(__name__)


class SingularSystemError(np.linalg.LinAlgError):
    """The derivative system is singular and no fallback was allowed."""


class ApproximateDerivativeWarning(UserWarning):
    """Derivatives were computed with a least-squares fallback."""


@dataclass(frozen=True, eq=False)
class DerivativeContext:
    """Everything needed to apply the solution-map derivative repeatedly."""

    A: sp.csc_matrix
    b: np.ndarray
    c: np.ndarray
    cones: ConeSpec
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    z: np.ndarray
    pi_z: np.ndarray
    dproj: ConeJacobian
    matrix: sp.csc_matrix
    lu: RobustLU
    approximate: bool
    condition: float
    kink_rows: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def has_kinks(self) -> bool:
        return self.kink_rows.size > 0

    def solve(self, rhs, trans: bool = False) -> np.ndarray:
        """Solve with the bordered matrix (or its transpose); ``rhs`` may be 2-D."""
        return self.lu.solve(rhs, trans=trans)

    @property
    def last_residual(self) -> float:
        """Relative residual of the most recent solve (0 for a plain factorization)."""
        return self.lu.last_residual


def make_context(
    prog: ConeProgram,
    bundle: SolutionBundle,
    tol: float = 1e-6,
    kink_tol: float = 1e-9,
    allow_approximate: bool = True,
) -> DerivativeContext:
    """Factor the derivative system at a solved bundle.

    Raises ``ValueError`` for an unsolved bundle, :class:`DegenerateEmbeddingError`
    for ``w <= 0`` and :class:`SingularSystemError` when the system is singular
    and ``allow_approximate`` is false. Otherwise a singular system (typical
    of degenerate solutions with non-unique duals) is handled by a shifted
    factorization with iterative refinement and ``approximate`` is set.
    """
    if bundle.status != "optimal":
        raise ValueError(f"cannot differentiate a bundle with status {bundle.status!r}")
    if bundle.omega <= 0:
        raise DegenerateEmbeddingError(f"embedding point has w = {bundle.omega}")
    A, b, c, cones = prog.A, prog.b, prog.c, prog.cones
    m, n = A.shape
    spec = ConeSpec.embedding(n, cones)
    z = embed_solution(bundle.x, bundle.y, bundle.s)
    Q = build_Q(A, b, c)
    res = np.linalg.norm(residual_map(z, Q, spec))
    if res > tol:
        raise ValueError(f"bundle is not a solution: ||N(z, Q)|| = {res:.3e} > {tol:.1e}")

    N = z.size
    v = z[n:-1]
    dproj = dproject_cone(v, cones, dual=True, kink_tol=kink_tol)
    full = dproject_cone(z, spec, kink_tol=kink_tol)
    pi_z = project_cone(z, spec)
    I = sp.identity(N, format="csc")
    M = ((Q - I) @ full.matrix + I).tocsc()
    M = (M + sp.csc_matrix((pi_z, (np.arange(N), np.full(N, N - 1))), shape=(N, N))).tocsc()

    lu = RobustLU(M, cond_limit=1e12)
    if lu.regularized:
        if not allow_approximate:
            raise SingularSystemError("derivative system is singular or too ill-conditioned")
        warnings.warn(
            "derivative system is singular (degenerate solution); solving with regularised refinement",
            ApproximateDerivativeWarning,
            stacklevel=2,
        )

    return DerivativeContext(
        A=A,
        b=b,
        c=c,
        cones=cones,
        x=bundle.x.copy(),
        y=bundle.y.copy(),
        s=bundle.s.copy(),
        z=z,
        pi_z=pi_z,
        dproj=dproj,
        matrix=M,
        lu=lu,
        approximate=lu.regularized,
        condition=lu.condition,
        kink_rows=dproj.kink_rows,
    )


def _dq_times_pi(ctx: DerivativeContext, dA, db, dc) -> np.ndarray:
    x, y = ctx.x, ctx.y
    n, m = ctx.n, ctx.m
    db = np.zeros(m) if db is None else np.asarray(db, float)
    dc = np.zeros(n) if dc is None else np.asarray(dc, float)
    if dA is None:
        top, mid = dc.copy(), db.copy()
    else:
        dA = sp.csr_matrix(dA)
        top = dA.T @ y + dc
        mid = -(dA @ x) + db
    return np.concatenate([top, mid, [-(dc @ x) - (db @ y)]])


def dphi(ctx: DerivativeContext, dz) -> tuple:
    """Apply the derivative of ``phi`` at the context point (``w = 1``)."""
    n = ctx.n
    du, dv, dw = dz[:n], dz[n:-1], dz[-1]
    jdv = ctx.dproj @ dv
    return du - ctx.x * dw, jdv - ctx.y * dw, jdv - dv - ctx.s * dw


def forward(ctx: DerivativeContext, dA=None, db=None, dc=None):
    """Directional derivative ``(dx, dy, ds)`` of the solution map."""
    g = _dq_times_pi(ctx, dA, db, dc)
    dz = -ctx.solve(g)
    return dphi(ctx, dz)


def embedding_forward(ctx: DerivativeContext, db_columns) -> np.ndarray:
    """Embedding derivatives ``dz`` for a batch of ``db`` directions.

    ``db_columns`` is an ``m x k`` (sparse or dense) matrix; the result is
    ``N x k``. Used to locate where the active set would change.
    """
    D = sp.csc_matrix(db_columns)
    k = D.shape[1]
    top = np.zeros((ctx.n, k))
    mid = D.toarray()
    last = -(ctx.y @ mid)
    rhs = np.vstack([top, mid, last[None, :]])
    return -ctx.solve(rhs)


def null_space(ctx: DerivativeContext, tol: float = 1e-9, block: int = 32, seed: int = 0) -> np.ndarray:
    """Orthonormal basis of the null space of the bordered matrix (``N x 0`` when nonsingular)."""
    return ctx.lu.null_basis(False, tol=tol, block=block, seed=seed)


def ambiguous_rows(ctx: DerivativeContext, tol: float = 1e-8) -> tuple:
    """Rows with a non-unique dual and columns with a non-unique primal.

    Returns ``(rows, cols)``: constraint rows whose ``(y, s)`` move along the
    null space and primal columns that do.
    """
    basis = null_space(ctx)
    if basis.shape[1] == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    mag = np.abs(basis).max(axis=1)
    n = ctx.n
    cols = np.flatnonzero(mag[:n] > tol)
    rows = np.flatnonzero(mag[n:-1] > tol)
    return rows, cols


def adjoint(ctx: DerivativeContext, gx=None, gy=None, gs=None):
    """Pull gradients on ``(x, y, s)`` back to ``(A, b, c)``.

    ``gA`` is returned as a sparse matrix on the sparsity pattern of ``A``
    (entries outside the pattern are structural zeros of the program).
    """
    n, m = ctx.n, ctx.m
    gx = np.zeros(n) if gx is None else np.asarray(gx, float)
    gy = np.zeros(m) if gy is None else np.asarray(gy, float)
    gs = np.zeros(m) if gs is None else np.asarray(gs, float)
    h = np.concatenate(
        [
            gx,
            ctx.dproj.rmatvec(gy + gs) - gs,
            [-(ctx.x @ gx) - (ctx.y @ gy) - (ctx.s @ gs)],
        ]
    )
    r = -ctx.solve(h, trans=True)
    r1, r2, r3 = r[:n], r[n:-1], r[-1]
    A = ctx.A.tocoo()
    vals = ctx.y[A.row] * r1[A.col] - r2[A.row] * ctx.x[A.col]
    gA = sp.csc_matrix((vals, (A.row, A.col)), shape=A.shape)
    gb = r2 - r3 * ctx.y
    gc = r1 - r3 * ctx.x
    return gA, gb, gc


__all__ = [
    "ApproximateDerivativeWarning",
    "DerivativeContext",
    "SingularSystemError",
    "adjoint",
    "ambiguous_rows",
    "dphi",
    "embedding_forward",
    "forward",
    "make_context",
    "null_space",
]
