"""Sparse LU with a regularised fallback for singular but consistent systems.

Degenerate optimisation problems (more active constraints than needed) give
derivative systems with a null space confined to the dual variables of the
redundant constraints. For those the solver returns the minimum-norm
least-squares solution: the right-hand side is projected onto the range of
``M``, the projected system is solved by iterated Tikhonov refinement on the
shifted matrix ``M + eps I`` and the null-space component is removed. Solves
with ``M`` and ``M'`` then stay exact transposes of each other.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import structural_rank


class RobustLU:
    """Factorization of a square sparse matrix with a regularised fallback.

    ``regularized`` is true when the plain factorization failed or was too
    ill-conditioned; :meth:`solve` then refines against the original matrix
    and ``last_residual`` reports the relative residual reached. With
    ``pseudo_inverse`` the regularised solve returns the minimum-norm
    least-squares solution and ``last_inconsistency`` reports the relative
    part of the right-hand side outside the range.
    """

    def __init__(self, M, cond_limit: float = 1e12, reg: float = 1e-9, refine_iters: int = 60,
                 pseudo_inverse: bool = True):
        self.M = sp.csc_matrix(M)
        self.pseudo_inverse = pseudo_inverse
        self.refine_iters = refine_iters
        self.regularized = False
        self.condition = np.inf
        self.shift = 0.0
        self.last_residual = 0.0
        self.last_inconsistency = 0.0
        self._null = {}
        N = self.M.shape[0]
        norm1 = float(spla.norm(self.M, 1)) if self.M.nnz else 1.0
        self.lu = None
        try:
            # SuperLU prints BLAS errors on structurally singular input before failing
            if N and structural_rank(self.M) < N:
                raise RuntimeError("structurally singular")
            with warnings.catch_warnings():
                warnings.simplefilter("error", spla.MatrixRankWarning)
                lu = spla.splu(self.M, permc_spec="COLAMD")
            cond = self._condition(lu, N, norm1) if np.isfinite(cond_limit) else np.nan
            if not np.isfinite(cond_limit) or (np.isfinite(cond) and cond <= cond_limit):
                self.lu, self.condition = lu, cond
        except (RuntimeError, spla.MatrixRankWarning):
            pass
        if self.lu is None:
            self.regularized = True
            self.shift = reg * max(norm1, 1.0)
            shifted = (self.M + self.shift * sp.identity(N, format="csc")).tocsc()
            self.lu = spla.splu(shifted, permc_spec="COLAMD")

    @staticmethod
    def _condition(lu, N, norm1) -> float:
        with np.errstate(all="ignore"):
            inv = spla.LinearOperator(
                (N, N), matvec=lu.solve, rmatvec=lambda r: lu.solve(r, trans="T"), dtype=float
            )
            return float(spla.onenormest(inv) * norm1)

    def null_basis(self, trans: bool = False, tol: float = 1e-9, block: int = 32, seed: int = 0) -> np.ndarray:
        """Orthonormal basis of the null space of ``M`` (``M'`` when ``trans``).

        Empty for a plain factorization. Found by block inverse iteration with
        the shifted factors, doubling the block until it exceeds the null
        space. Cached per orientation.
        """
        key = bool(trans)
        if key in self._null:
            return self._null[key]
        N = self.M.shape[0]
        if not self.regularized:
            basis = np.zeros((N, 0))
        else:
            t = "T" if trans else "N"
            M = self.M.T if trans else self.M
            rng = np.random.default_rng(seed)
            scale = max(float(abs(self.M).max()), 1.0)
            while True:
                k = min(block, N)
                X = rng.standard_normal((N, k))
                for _ in range(4):
                    X, _ = np.linalg.qr(self.lu.solve(X, trans=t))
                _, S, Vt = np.linalg.svd(M @ X, full_matrices=False)
                basis = X @ Vt.T[:, S <= tol * scale]
                if basis.shape[1] < k - 4 or k == N:
                    basis = np.linalg.qr(basis)[0] if basis.size else basis
                    break
                block *= 2
        self._null[key] = basis
        return basis

    def solve(self, rhs, trans: bool = False) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        t = "T" if trans else "N"
        if not self.regularized:
            self.last_residual = 0.0
            return self.lu.solve(rhs, trans=t)
        if not self.pseudo_inverse:
            return self._refine(rhs, t, trans)
        # project onto range(M) = null(M')^perp, solve, then drop null(M) components
        left = self.null_basis(not trans)
        right = self.null_basis(trans)
        norm_in = max(np.linalg.norm(rhs), 1e-300)
        if left.shape[1]:
            rhs = rhs - left @ (left.T @ rhs)
        self.last_inconsistency = float(max(norm_in - np.linalg.norm(rhs), 0.0) / norm_in) if left.shape[1] else 0.0
        x = self._refine(rhs, t, trans)
        if right.shape[1]:
            x = x - right @ (right.T @ x)
        return x

    def _refine(self, rhs, t: str, trans: bool) -> np.ndarray:
        x = self.lu.solve(rhs, trans=t)
        M = self.M.T if trans else self.M
        scale = max(np.linalg.norm(rhs), 1e-300)
        res = rhs - M @ x
        best = np.linalg.norm(res)
        for _ in range(self.refine_iters):
            if best <= 1e-14 * scale:
                break
            x_new = x + self.lu.solve(res, trans=t)
            res_new = rhs - M @ x_new
            nr = np.linalg.norm(res_new)
            if nr >= best * 0.999:
                if nr < best:
                    x, res, best = x_new, res_new, nr
                break
            x, res, best = x_new, res_new, nr
        self.last_residual = float(best / scale)
        return x
