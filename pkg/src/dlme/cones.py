"""Cone specifications, Euclidean projections and their derivatives.

Supported cone kinds:

- ``"zero"``: the set ``{0}`` (its dual is the free cone)
- ``"free"``: all of R^d (its dual is the zero cone)
- ``"nonneg"``: the nonnegative orthant
- ``"soc"``: the second-order cone ``{(t, w) : ||w|| <= t}``, self-dual

A block list such as ``[("zero", 3), ("nonneg", 5), ("soc", 4)]`` describes a
product cone. Projection onto the product is done blockwise; blocks of the
same kind are vectorised.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

KINDS = ("zero", "free", "nonneg", "soc")
_DUAL_KIND = {"zero": "free", "free": "zero", "nonneg": "nonneg", "soc": "soc"}


class ConeDimensionError(ValueError):
    """Vector length does not match the cone specification."""


@dataclass(frozen=True)
class ConeSpec:
    """Ordered product of cones.

    ``blocks`` is a tuple of ``(kind, dim)`` pairs. Index arrays for each kind
    are cached on construction so projections are vectorised.
    """

    blocks: tuple
    _zero: np.ndarray = field(init=False, repr=False, compare=False)
    _free: np.ndarray = field(init=False, repr=False, compare=False)
    _nonneg: np.ndarray = field(init=False, repr=False, compare=False)
    _soc: dict = field(init=False, repr=False, compare=False)
    _block_of_row: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        blocks = tuple((str(k), int(d)) for k, d in self.blocks)
        zero, free, nonneg = [], [], []
        soc: dict[int, list[int]] = {}
        owner = []
        offset = 0
        for b, (kind, dim) in enumerate(blocks):
            if kind not in KINDS:
                raise ValueError(f"unknown cone kind {kind!r}")
            if dim < 0 or (kind == "soc" and dim < 2):
                raise ValueError(f"invalid dimension {dim} for {kind} cone")
            rows = range(offset, offset + dim)
            if kind == "zero":
                zero.extend(rows)
            elif kind == "free":
                free.extend(rows)
            elif kind == "nonneg":
                nonneg.extend(rows)
            else:
                soc.setdefault(dim, []).append(offset)
            owner.extend([b] * dim)
            offset += dim
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "_zero", np.asarray(zero, dtype=np.int64))
        object.__setattr__(self, "_free", np.asarray(free, dtype=np.int64))
        object.__setattr__(self, "_nonneg", np.asarray(nonneg, dtype=np.int64))
        object.__setattr__(
            self,
            "_soc",
            {d: np.asarray(starts, dtype=np.int64)[:, None] + np.arange(d) for d, starts in soc.items()},
        )
        object.__setattr__(self, "_block_of_row", np.asarray(owner, dtype=np.int64))

    @property
    def dim(self) -> int:
        return int(sum(d for _, d in self.blocks))

    def count(self, kind: str) -> int:
        return sum(1 for k, _ in self.blocks if k == kind)

    def dual(self) -> "ConeSpec":
        return ConeSpec(tuple((_DUAL_KIND[k], d) for k, d in self.blocks))

    @classmethod
    def embedding(cls, n: int, cones: "ConeSpec") -> "ConeSpec":
        """Layout ``R^n x K* x R_+`` used by the homogeneous self-dual embedding."""
        return cls((("free", n),) + cones.dual().blocks + (("nonneg", 1),))

    def block_of_row(self) -> np.ndarray:
        return self._block_of_row

    def soc_index(self) -> dict:
        return self._soc

    def nonneg_index(self) -> np.ndarray:
        return self._nonneg


def _check(v: np.ndarray, spec: ConeSpec) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] != spec.dim:
        raise ConeDimensionError(f"vector of length {v.shape} does not match cone dimension {spec.dim}")
    return v


def project_cone(v, spec: ConeSpec, dual: bool = False) -> np.ndarray:
    """Euclidean projection of ``v`` onto the product cone (or its dual)."""
    v = _check(v, spec)
    zero = spec._free if dual else spec._zero
    out = v.copy()
    out[zero] = 0.0
    out[spec._nonneg] = np.maximum(v[spec._nonneg], 0.0)
    for idx in spec._soc.values():
        blk = v[idx]
        t = blk[:, 0]
        w = blk[:, 1:]
        nw = np.linalg.norm(w, axis=1)
        res = np.zeros_like(blk)
        inside = nw <= t
        res[inside] = blk[inside]
        mid = ~inside & (nw > -t)
        if np.any(mid):
            a = 0.5 * (t[mid] + nw[mid])
            res[mid, 0] = a
            res[mid, 1:] = (a / nw[mid])[:, None] * w[mid]
        out[idx] = res
    return out


@dataclass(frozen=True)
class ConeJacobian:
    """Derivative of a cone projection, stored as a sparse block-diagonal matrix.

    The matrix is symmetric. ``kink_rows`` lists rows whose block sits on a
    non-differentiable point; there the interior limit is used.
    """

    matrix: sp.csr_matrix
    kink_rows: np.ndarray

    @property
    def has_kinks(self) -> bool:
        return self.kink_rows.size > 0

    def __matmul__(self, x):
        return self.matrix @ x

    def matvec(self, x):
        return self.matrix @ x

    def rmatvec(self, x):
        return self.matrix.T @ x


def _soc_jacobian_blocks(blk: np.ndarray, kink_tol: float):
    """Per-block Jacobians of the SOC projection, plus a kink mask."""
    k, d = blk.shape
    t = blk[:, 0]
    w = blk[:, 1:]
    nw = np.linalg.norm(w, axis=1)
    scale = np.maximum(1.0, np.maximum(np.abs(t), nw))
    kink = np.abs(nw - np.abs(t)) <= kink_tol * scale
    jac = np.zeros((k, d, d))
    eye = np.eye(d)
    # Near a kink, take the limit from the cone interior when it is adjacent
    # (||w|| ~ t), otherwise the limit from the smooth region (||w|| ~ -t).
    interior = (nw < t) | (kink & (t >= 0))
    jac[interior] = eye
    mid = ~interior & ((nw > -t) | kink)
    if np.any(mid):
        tm = t[mid]
        nm = nw[mid]
        safe = np.where(nm > 0, nm, 1.0)
        wbar = w[mid] / safe[:, None]
        ratio = np.where(nm > 0, tm / safe, -1.0)
        d1 = d - 1
        J = np.zeros((tm.size, d, d))
        J[:, 0, 0] = 0.5
        J[:, 0, 1:] = 0.5 * wbar
        J[:, 1:, 0] = 0.5 * wbar
        J[:, 1:, 1:] = 0.5 * (
            (1.0 + ratio)[:, None, None] * np.eye(d1)[None]
            - ratio[:, None, None] * wbar[:, :, None] * wbar[:, None, :]
        )
        jac[mid] = J
    return jac, kink


def dproject_cone(v, spec: ConeSpec, dual: bool = False, kink_tol: float = 1e-9) -> ConeJacobian:
    """Jacobian of :func:`project_cone` at ``v``.

    At non-differentiable points an element of the generalised Jacobian is
    returned (the limit from the cone interior) and the affected rows are
    reported in ``kink_rows``.
    """
    v = _check(v, spec)
    m = spec.dim
    free = spec._zero if dual else spec._free
    rows = [free]
    cols = [free]
    vals = [np.ones(free.size)]
    kinks = []

    nn = spec._nonneg
    vn = v[nn]
    kn = np.abs(vn) <= kink_tol * np.maximum(1.0, np.abs(vn))
    on = (vn > 0) | kn
    rows.append(nn[on])
    cols.append(nn[on])
    vals.append(np.ones(int(on.sum())))
    kinks.append(nn[kn])

    for d, idx in spec._soc.items():
        jac, kink = _soc_jacobian_blocks(v[idx], kink_tol)
        rows.append(np.repeat(idx, d, axis=1).ravel())
        cols.append(np.tile(idx, (1, d)).ravel())
        vals.append(jac.reshape(idx.shape[0], d * d).ravel())
        kinks.append(idx[kink].ravel())
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    x = np.concatenate(vals)
    keep = x != 0.0
    mat = sp.csr_matrix((x[keep], (r[keep], c[keep])), shape=(m, m))
    kink_rows = np.sort(np.concatenate(kinks)) if kinks else np.zeros(0, dtype=np.int64)
    return ConeJacobian(mat, kink_rows.astype(np.int64))


def distance_to_cone(v, spec: ConeSpec, dual: bool = False) -> float:
    v = _check(v, spec)
    return float(np.linalg.norm(v - project_cone(v, spec, dual=dual)))
