"""Homogeneous self-dual embedding (HSDE) machinery and a conic solver.

The primal/dual pair handled here is::

    minimize    c'x                  minimize    b'y
    subject to  Ax + s = b           subject to  A'y + c = 0
                s in K                           y in K*

An embedding point ``z = (u, v, w)`` with ``u`` in R^n, ``v`` in R^m and a
scalar ``w`` encodes a solution through ``phi(z) = (u, P(v), P(v) - v) / w``
where ``P`` projects onto ``K*``. Solutions are the zeros of the normalised
residual map ``N(z, Q) = ((Q - I) Pi + I)(z / |w|)`` with ``w > 0``.

:func:`solve_hsde` runs an operator-splitting method on the embedding and then
refines the point with semismooth Newton steps on ``N``, so the returned ``z``
is accurate enough to be differentiated.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cones import ConeSpec, distance_to_cone, dproject_cone, project_cone
from .linsolve import RobustLU

log = logging.getLogger(__name__)


class DegenerateEmbeddingError(ValueError):
    """The embedding point has ``w == 0`` (or ``w <= 0`` where a solution is needed)."""


class SolverError(RuntimeError):
    """Raised when the conic solver cannot return an optimal point."""

    def __init__(self, status: str, message: str, info: "SolveInfo | None" = None):
        super().__init__(f"{status}: {message}")
        self.status = status
        self.info = info


@dataclass(frozen=True)
class ConeProgram:
    """Canonical conic program ``min c'x  s.t.  Ax + s = b, s in K``.

    ``index`` optionally carries a mapping from named model quantities to
    columns/rows (see :mod:`dlme.scheduler`).
    """

    A: sp.csc_matrix
    b: np.ndarray
    c: np.ndarray
    cones: ConeSpec
    index: object = None

    def __post_init__(self):
        A = sp.csc_matrix(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        c = np.asarray(self.c, dtype=float)
        m, n = A.shape
        if b.shape != (m,) or c.shape != (n,):
            raise ValueError(f"inconsistent shapes A{A.shape}, b{b.shape}, c{c.shape}")
        if self.cones.dim != m:
            raise ValueError(f"cone dimension {self.cones.dim} != number of rows {m}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def shape(self):
        return self.A.shape

    @property
    def embedding_spec(self) -> ConeSpec:
        return ConeSpec.embedding(self.A.shape[1], self.cones)


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-8
    kkt_tol: float = 1e-7
    max_iters: int = 100_000
    scale: bool = True
    alpha: float = 1.5
    admm_tol: float = 1e-3
    check_every: int = 20
    polish: bool = True
    newton_iters: int = 40
    newton_target: float = 1e-12
    kink_tol: float = 1e-9
    time_limit: float = float("inf")


@dataclass
class KktReport:
    primal: float
    dual: float
    gap: float
    duality_gap: float
    cone_s: float
    cone_y: float

    def max(self) -> float:
        return max(self.primal, self.dual, self.gap, self.duality_gap, self.cone_s, self.cone_y)

    def as_dict(self) -> dict:
        return {
            "primal": self.primal,
            "dual": self.dual,
            "gap": self.gap,
            "duality_gap": self.duality_gap,
            "cone_s": self.cone_s,
            "cone_y": self.cone_y,
        }


@dataclass
class SolveInfo:
    status: str
    admm_iters: int = 0
    newton_iters: int = 0
    residual: float = float("nan")
    solve_time: float = 0.0
    message: str = ""

    def as_dict(self) -> dict:
        return {
            "status": self.status,
            "admm_iters": self.admm_iters,
            "newton_iters": self.newton_iters,
            "residual": self.residual,
            "solve_time": self.solve_time,
            "message": self.message,
        }


@dataclass
class SolutionBundle:
    """Primal/dual/slack solution together with its embedding point ``z``."""

    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    z: np.ndarray
    info: SolveInfo
    kkt: KktReport | None = None

    @property
    def status(self) -> str:
        return self.info.status

    @property
    def omega(self) -> float:
        return float(self.z[-1])


def build_Q(A, b, c) -> sp.csc_matrix:
    """Skew-symmetric embedding matrix ``[[0, A', c], [-A, 0, b], [-c', -b', 0]]``."""
    A = sp.csc_matrix(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1, 1)
    c = np.asarray(c, dtype=float).reshape(-1, 1)
    m, n = A.shape
    Q = sp.bmat(
        [
            [None, A.T, sp.csc_matrix(c)],
            [-A, None, sp.csc_matrix(b)],
            [sp.csc_matrix(-c.T), sp.csc_matrix(-b.T), None],
        ],
        format="csc",
    )
    if Q.shape != (n + m + 1, n + m + 1):
        # bmat drops empty blocks when n or m is zero
        Q = sp.csc_matrix((n + m + 1, n + m + 1)) + Q
    return Q


def _omega(z) -> float:
    w = float(z[-1])
    if w == 0.0:
        raise DegenerateEmbeddingError("degenerate embedding point: w == 0")
    return w


def residual_map(z, Q, spec: ConeSpec) -> np.ndarray:
    """Normalised residual ``N(z, Q) = ((Q - I) Pi + I)(z / |w|)``.

    ``spec`` is the embedding layout (see :meth:`ConeSpec.embedding`).
    """
    z = np.asarray(z, dtype=float)
    zn = z / abs(_omega(z))
    pz = project_cone(zn, spec)
    return Q @ pz - pz + zn


def embed_solution(x, y, s) -> np.ndarray:
    """Right inverse of :func:`construct_solution`: ``z = (x, y - s, 1)``."""
    return np.concatenate([np.asarray(x, float), np.asarray(y, float) - np.asarray(s, float), [1.0]])


def construct_solution(z, n: int, cones: ConeSpec):
    """Recover ``(x, y, s)`` from an embedding point with ``w > 0``."""
    z = np.asarray(z, dtype=float)
    w = _omega(z)
    if w < 0:
        raise DegenerateEmbeddingError(f"embedding point has w = {w} < 0")
    u = z[:n]
    v = z[n:-1]
    pv = project_cone(v, cones, dual=True)
    return u / w, pv / w, (pv - v) / w


def kkt_report(A, b, c, cones: ConeSpec, x, y, s) -> KktReport:
    return KktReport(
        primal=float(np.max(np.abs(A @ x + s - b), initial=0.0)),
        dual=float(np.max(np.abs(A.T @ y + c), initial=0.0)),
        gap=float(abs(s @ y)),
        duality_gap=float(abs(c @ x + b @ y)),
        cone_s=distance_to_cone(s, cones),
        cone_y=distance_to_cone(y, cones, dual=True),
    )


# --------------------------------------------------------------------------
# scaling


def _equilibrate(A: sp.csc_matrix, cones: ConeSpec, iters: int = 25):
    """Ruiz equilibration ``D A E`` keeping D constant on each SOC block."""
    m, n = A.shape
    D = np.ones(m)
    E = np.ones(n)
    As = A.copy()
    soc_idx = list(cones.soc_index().values())
    for _ in range(iters):
        absA = abs(As)
        rn = np.sqrt(np.asarray(absA.max(axis=1).todense()).ravel())
        cn = np.sqrt(np.asarray(absA.max(axis=0).todense()).ravel())
        rn[rn < 1e-4] = 1.0
        cn[cn < 1e-4] = 1.0
        for idx in soc_idx:
            blk = rn[idx]
            rn[idx] = np.exp(np.log(blk).mean(axis=1))[:, None]
        dr = 1.0 / rn
        dc = 1.0 / cn
        D *= dr
        E *= dc
        As = sp.diags(dr) @ As @ sp.diags(dc)
        if np.all(np.abs(rn - 1) < 1e-3) and np.all(np.abs(cn - 1) < 1e-3):
            break
    return sp.csc_matrix(As), D, E


@dataclass
class _Scaled:
    A: sp.csc_matrix
    b: np.ndarray
    c: np.ndarray
    D: np.ndarray
    E: np.ndarray
    sb: float
    sc: float

    def to_original(self, x, y, s):
        return self.E * x / self.sb, self.D * y / self.sc, s / (self.D * self.sb)

    def from_original(self, x, y, s):
        return x * self.sb / self.E, y * self.sc / self.D, s * self.D * self.sb


def _scale(prog: ConeProgram, enabled: bool) -> _Scaled:
    A, b, c = prog.A, prog.b, prog.c
    m, n = A.shape
    if not enabled:
        return _Scaled(A, b.copy(), c.copy(), np.ones(m), np.ones(n), 1.0, 1.0)
    As, D, E = _equilibrate(A, prog.cones)
    bs = D * b
    cs = E * c
    nb = np.linalg.norm(bs)
    nc = np.linalg.norm(cs)
    sb = 1.0 / nb if nb > 1e-12 else 1.0
    sc = 1.0 / nc if nc > 1e-12 else 1.0
    return _Scaled(As, bs * sb, cs * sc, D, E, sb, sc)


# --------------------------------------------------------------------------
# operator splitting


class _AdmmState:
    """Operator splitting on the HSDE (projection + cached linear solve)."""

    def __init__(self, sc: _Scaled, cones: ConeSpec, alpha: float):
        A = sc.A
        m, n = A.shape
        self.n, self.m = n, m
        self.A, self.AT = A.tocsr(), A.T.tocsr()
        self.alpha = alpha
        self.spec = ConeSpec.embedding(n, cones)
        K = sp.identity(n, format="csc") + (A.T @ A).tocsc()
        self.lu = spla.splu(K.tocsc(), permc_spec="COLAMD")
        self.h = np.concatenate([sc.c, sc.b])
        self.g = self._solve_m1(self.h)
        self.hg = 1.0 + self.h @ self.g

    def _solve_m1(self, w):
        n = self.n
        a, bb = w[:n], w[n:]
        x = self.lu.solve(a - self.AT @ bb)
        y = bb + self.A @ x
        return np.concatenate([x, y])

    def step(self, u, v):
        w = u + v
        p = self._solve_m1(w[:-1])
        tau = (w[-1] + self.h @ p) / self.hg
        ut = np.concatenate([p - tau * self.g, [tau]])
        ubar = self.alpha * ut + (1.0 - self.alpha) * u
        u_new = project_cone(ubar - v, self.spec)
        v_new = v - ubar + u_new
        return u_new, v_new


def _unpack(u, v, n):
    return u[:n], u[n:-1], u[-1], v[n:-1], v[-1]


def _newton_refine(Q, spec: ConeSpec, z, settings: SolverSettings):
    """Semismooth Newton on ``R(z) = (Q - I) Pi(z) + z`` with ``w`` normalised to 1.

    The Jacobian ``(Q - I) DPi + I`` is singular along ``z`` (``R`` is
    positively homogeneous); bordering its last column with ``Pi(z)`` removes
    that null direction without changing the Newton step.
    """
    N = z.size
    I = sp.identity(N, format="csc")
    e_last = np.zeros(N)
    e_last[-1] = 1.0

    def res(zz):
        pz = project_cone(zz, spec)
        return Q @ pz - pz + zz

    z = z / z[-1]
    r = res(z)
    nr = np.linalg.norm(r)
    it = 0
    for it in range(1, settings.newton_iters + 1):
        if nr <= settings.newton_target:
            it -= 1
            break
        jac = dproject_cone(z, spec, kink_tol=0.0)
        pz = project_cone(z, spec)
        J = ((Q - I) @ jac.matrix + I).tocsc()
        J = J + sp.csc_matrix((pz, (np.arange(N), np.full(N, N - 1))), shape=(N, N))
        try:
            dz = RobustLU(J, cond_limit=np.inf, pseudo_inverse=False).solve(-r)
        except RuntimeError:
            log.debug("newton: factorization failed at iteration %d", it)
            break
        if not np.all(np.isfinite(dz)):
            break
        step = 1.0
        accepted = False
        while step > 1e-6:
            zt = z + step * dz
            if zt[-1] > 0:
                zt = zt / zt[-1]
                rt = res(zt)
                nt = np.linalg.norm(rt)
                if nt < (1.0 - 1e-4 * step) * nr:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            break
        z, r, nr = zt, rt, nt
    return z, nr, it


def solve_hsde(prog: ConeProgram, settings: SolverSettings | None = None, warm_start=None):
    """Solve a conic program via its homogeneous self-dual embedding.

    Returns ``(SolutionBundle, KktReport)``. ``warm_start`` may be a tuple
    ``(x, y, s)`` or a SolutionBundle; with a good warm start the Newton refinement is tried
    first and the splitting iterations are skipped when it succeeds.

    Raises :class:`SolverError` with status ``"infeasible"``, ``"unbounded"``
    or ``"max_iterations"`` when no optimal point is found.
    """
    settings = settings or SolverSettings()
    t0 = time.perf_counter()
    A, b, c, cones = prog.A, prog.b, prog.c, prog.cones
    m, n = A.shape
    spec = ConeSpec.embedding(n, cones)
    Q = build_Q(A, b, c)
    info = SolveInfo(status="unsolved")

    def finish(z, status="optimal"):
        x, y, s = construct_solution(z, n, cones)
        z = embed_solution(x, y, s)
        kkt = kkt_report(A, b, c, cones, x, y, s)
        info.status = status
        info.residual = float(np.linalg.norm(residual_map(z, Q, spec)))
        info.solve_time = time.perf_counter() - t0
        bundle = SolutionBundle(x=x, y=y, s=s, z=z, info=info, kkt=kkt)
        return bundle, kkt

    def accepted(z):
        nr = np.linalg.norm(residual_map(z, Q, spec))
        if nr > settings.tol:
            return False
        x, y, s = construct_solution(z, n, cones)
        return kkt_report(A, b, c, cones, x, y, s).max() <= settings.kkt_tol

    if isinstance(warm_start, SolutionBundle):
        warm_start = (warm_start.x, warm_start.y, warm_start.s)
    if warm_start is not None and settings.polish:
        z0 = embed_solution(*warm_start)
        z1, nr, its = _newton_refine(Q, spec, z0, settings)
        info.newton_iters += its
        if accepted(z1):
            return finish(z1)

    nb = 1.0 + np.max(np.abs(b), initial=0.0)
    nc = 1.0 + np.max(np.abs(c), initial=0.0)
    # equilibration can stall the splitting when tiny data sits next to large
    # bounds; a stalled scaled run restarts once on the unscaled program
    scalings = (True, False) if settings.scale else (False,)
    it = 0
    for attempt, scale in enumerate(scalings):
        last = attempt == len(scalings) - 1
        sc = _scale(prog, scale)
        state = _AdmmState(sc, cones, settings.alpha)
        if warm_start is not None:
            xs, ys, ss = sc.from_original(*warm_start)
            u = np.concatenate([xs, ys, [1.0]])
            v = np.concatenate([np.zeros(n), ss, [0.0]])
        else:
            u = np.zeros(n + m + 1)
            v = np.zeros(n + m + 1)
            u[-1] = 1.0
            v[-1] = 1.0
        admm_tol = settings.admm_tol if settings.polish else settings.tol
        polish_attempts = 0
        # the unscaled retry gets the iterations the scaled run left over
        budget = settings.max_iters if last else settings.max_iters // 2
        stalled = False
        best, best_k = np.inf, 0
        for k in range(1, budget + 1):
            it += 1
            if it > settings.max_iters:
                break
            u, v = state.step(u, v)
            if k % settings.check_every:
                continue
            xs, ys, tau, ss, kappa = _unpack(u, v, n)
            x, y, s = sc.to_original(xs, ys, ss)
            if tau > 1e-12 * max(1.0, kappa):
                xo, yo, so = x / tau, y / tau, s / tau
                pres = np.max(np.abs(A @ xo + so - b), initial=0.0) / nb
                dres = np.max(np.abs(A.T @ yo + c), initial=0.0) / nc
                gap = abs(c @ xo + b @ yo) / (1.0 + abs(c @ xo) + abs(b @ yo))
                merit = max(pres, dres, gap)
                if merit < 0.9 * best:
                    best, best_k = merit, k
                elif polish_attempts and k - best_k > max(10000, best_k) and not last:
                    stalled = True
                    break
                if merit <= admm_tol:
                    z = embed_solution(xo, yo, so)
                    if settings.polish and polish_attempts < 8:
                        polish_attempts += 1
                        z1, nr, its = _newton_refine(Q, spec, z, settings)
                        info.newton_iters += its
                        if accepted(z1):
                            info.admm_iters = it
                            return finish(z1)
                        admm_tol = max(admm_tol * 0.1, settings.tol)
                    elif accepted(z):
                        info.admm_iters = it
                        return finish(z)
                    elif not settings.polish:
                        admm_tol = max(admm_tol * 0.5, 1e-14)
            # infeasibility / unboundedness certificates
            by = b @ y
            if by < 0:
                if np.max(np.abs(A.T @ y), initial=0.0) <= 1e-7 * -by * nc and tau < 1e-6 * max(kappa, 1e-30) + 1e-9:
                    info.admm_iters = it
                    info.status = "infeasible"
                    info.solve_time = time.perf_counter() - t0
                    raise SolverError("infeasible", "primal infeasibility certificate found", info)
            cx = c @ x
            if cx < 0:
                if np.max(np.abs(A @ x + s), initial=0.0) <= 1e-7 * -cx * nb and tau < 1e-6 * max(kappa, 1e-30) + 1e-9:
                    info.admm_iters = it
                    info.status = "unbounded"
                    info.solve_time = time.perf_counter() - t0
                    raise SolverError("unbounded", "dual infeasibility certificate found", info)
            if time.perf_counter() - t0 > settings.time_limit:
                break
        if stalled:
            log.debug("splitting stalled after %d iterations with scaling; retrying unscaled", it)
        if it >= settings.max_iters or time.perf_counter() - t0 > settings.time_limit:
            break
    it = min(it, settings.max_iters)
    info.admm_iters = it
    info.status = "max_iterations"
    info.solve_time = time.perf_counter() - t0
    raise SolverError("max_iterations", f"no solution within {it} iterations", info)


def with_settings(settings: SolverSettings | None, **kw) -> SolverSettings:
    return replace(settings or SolverSettings(), **kw)


__all__ = [
    "ConeProgram",
    "DegenerateEmbeddingError",
    "KktReport",
    "SolutionBundle",
    "SolveInfo",
    "SolverError",
    "SolverSettings",
    "build_Q",
    "construct_solution",
    "embed_solution",
    "kkt_report",
    "residual_map",
    "solve_hsde",
    "with_settings",
]

