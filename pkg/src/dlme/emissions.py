"""Marginal emission signals from the dispatch solution map.

Total emission is linear in generator output, ``e = sum_g dt * mu_g * p_g``,
so ``de/dx`` is a constant vector. One adjoint solve pulls it back to the
right-hand side ``b``; the entries of ``de/db`` on the active and reactive
balance rows are the locational marginal emissions.

Each entry is also given a stability radius: the smallest load change (p.u.)
at which the linearised solution path reaches an active-set change. Entries
whose radius is below twice the audit step are flagged, as are entries
touched by a non-differentiable point of the cone projection.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .diffcone import (
    ApproximateDerivativeWarning,
    DerivativeContext,
    adjoint,
    ambiguous_rows,
    embedding_forward,
    make_context,
)
from .grid import NetworkCase, ScenarioSet
from .hsde import ConeProgram, SolutionBundle, SolverError, SolverSettings, solve_hsde
from .scheduler import DispatchSolution, VariableIndex, build_program, extract

log = logging.getLogger(__name__)

DEFAULT_DELTA = 1e-4


class DegenerateSignalWarning(UserWarning):
    """The dispatch is not unique or every entry of a signal matrix is flagged."""


class OneSidedDifferenceWarning(UserWarning):
    """A finite-difference probe fell back to a one-sided difference."""


@dataclass(frozen=True)
class EmissionModel:
    """Emission rates (tCO2/MWh) of the sources in a case."""

    substation_rate: float
    sync_rates: tuple
    storage_rate: float = 0.0
    dt_hours: float = 1.0

    def __post_init__(self):
        if self.substation_rate < 0 or any(r < 0 for r in self.sync_rates) or self.storage_rate < 0:
            raise ValueError("emission rates must be >= 0")

    @classmethod
    def from_case(cls, case: NetworkCase, storage_rate: float = 0.0) -> "EmissionModel":
        return cls(
            substation_rate=case.substation.emission_rate,
            sync_rates=tuple(g.emission_rate for g in case.sync_dg),
            storage_rate=storage_rate,
            dt_hours=case.dt_hours,
        )

    def total(self, sol: DispatchSolution) -> float:
        dt = self.dt_hours
        e = self.substation_rate * float(np.sum(sol["p_sub"])) * dt
        for k, rate in enumerate(self.sync_rates):
            e += rate * float(np.sum(sol["p_sync"][k])) * dt
        if self.storage_rate and sol["p_dis"].size:
            e += self.storage_rate * float(np.sum(sol["p_dis"])) * dt
        return e


def emission_gradient(model: EmissionModel, index: VariableIndex) -> np.ndarray:
    """``d e_sum / d x`` in tCO2 per p.u. of each column."""
    g = np.zeros(index.n_cols)
    per_pu = model.dt_hours * index.base_mva
    g[index["p_sub"]] = model.substation_rate * per_pu
    for k, rate in enumerate(model.sync_rates):
        g[index["p_sync"][k]] = rate * per_pu
    if model.storage_rate and index["p_dis"].size:
        g[index["p_dis"]] = model.storage_rate * per_pu
    return g


@dataclass(eq=False)
class DlmeMatrix:
    """Active (tCO2/MWh) and reactive (tCO2/MVArh) marginal emissions, bus x hour."""

    label: str
    active: np.ndarray
    reactive: np.ndarray
    active_flags: np.ndarray
    reactive_flags: np.ndarray
    active_radius: np.ndarray
    reactive_radius: np.ndarray
    kink_hours: tuple
    emission: float
    dispatch: DispatchSolution | None = None
    bundle: SolutionBundle | None = None
    program: ConeProgram | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def flags(self) -> np.ndarray:
        return self.active_flags | self.reactive_flags

    def flagged_entries(self, which: str = "active") -> list:
        mask = self.active_flags if which == "active" else self.reactive_flags
        return [(int(i), int(t)) for i, t in zip(*np.nonzero(mask))]


def solve_case(case: NetworkCase, scenario: ScenarioSet, settings: SolverSettings | None = None):
    """Build and solve one dispatch; returns ``(program, bundle, dispatch)``."""
    prog = build_program(case, scenario)
    bundle, _ = solve_hsde(prog, settings)
    return prog, bundle, extract(prog, bundle, scenario.label)


def _stability_radius(ctx: DerivativeContext, rows: np.ndarray, kink_tol: float, skip=(), batch: int = 256):
    """Linearised distance (in b units) to the nearest active-set change.

    Returns ``(radius, kink)`` arrays shaped like ``rows``; ``kink`` marks
    entries that move a row sitting on a non-differentiable point. Rows in
    ``skip`` (constraints with non-unique multipliers) are left out: their
    dual values are arbitrary points of a face and carry no active-set
    information.
    """
    n, m = ctx.n, ctx.m
    v = ctx.z[n:-1]
    cones = ctx.cones
    skip = np.zeros(m, dtype=bool) if len(skip) == 0 else np.isin(np.arange(m), skip)
    nn = cones.nonneg_index()
    nn = nn[~skip[nn]]
    soc = [idx[~skip[idx].any(axis=1)] for idx in cones.soc_index().values()]
    soc = [idx for idx in soc if idx.size]
    g_nn = np.abs(v[nn])
    scale_nn = np.maximum(1.0, g_nn)
    soc_g, soc_t, soc_wbar = [], [], []
    for idx in soc:
        blk = v[idx]
        w = blk[:, 1:]
        nw = np.linalg.norm(w, axis=1)
        soc_g.append(nw - np.abs(blk[:, 0]))
        soc_t.append(np.sign(blk[:, 0]))
        soc_wbar.append(w / np.where(nw > 0, nw, 1.0)[:, None])
    flat = rows.ravel()
    radius = np.full(flat.size, np.inf)
    kink = np.zeros(flat.size, dtype=bool)
    tiny = 1e-12
    for start in range(0, flat.size, batch):
        cols = flat[start : start + batch]
        k = cols.size
        D = sp.csc_matrix((np.ones(k), (cols, np.arange(k))), shape=(m, k))
        dv = embedding_forward(ctx, D)[n:-1]
        cand = [np.full(k, np.inf)]
        kinks = [np.zeros(k, dtype=bool)]
        if nn.size:
            d = np.abs(dv[nn])
            r = np.where(d > tiny, g_nn[:, None] / np.maximum(d, tiny), np.inf)
            at_kink = (g_nn <= kink_tol * scale_nn)[:, None] & (d > tiny)
            cand.append(r.min(axis=0))
            kinks.append(at_kink.any(axis=0))
        for idx, g, sgn, wbar in zip(soc, soc_g, soc_t, soc_wbar):
            dblk = dv[idx]  # blocks x dim x k
            dg = np.einsum("bd,bdk->bk", wbar, dblk[:, 1:, :]) - sgn[:, None] * dblk[:, 0, :]
            d = np.abs(dg)
            ag = np.abs(g)[:, None]
            r = np.where(d > tiny, ag / np.maximum(d, tiny), np.inf)
            scale = np.maximum(1.0, np.abs(v[idx]).max(axis=1))[:, None]
            at_kink = (ag <= kink_tol * scale) & (d > tiny)
            cand.append(r.min(axis=0))
            kinks.append(at_kink.any(axis=0))
        radius[start : start + k] = np.min(np.vstack(cand), axis=0)
        kink[start : start + k] = np.any(np.vstack(kinks), axis=0)
    return radius.reshape(rows.shape), kink.reshape(rows.shape)


def compute_dlme(
    case: NetworkCase,
    scenario: ScenarioSet,
    settings: SolverSettings | None = None,
    model: EmissionModel | None = None,
    delta: float = DEFAULT_DELTA,
    stability: bool = True,
    solved=None,
) -> DlmeMatrix:
    """Active and reactive DLME for one scenario.

    ``solved`` may pass a ``(program, bundle)`` pair to skip the dispatch
    solve. ``delta`` (p.u.) is the audit step used to flag entries whose
    active set would change within ``2 * delta``.
    """
    settings = settings or SolverSettings()
    model = model or EmissionModel.from_case(case)
    if solved is None:
        prog, bundle, sol = solve_case(case, scenario, settings)
    else:
        prog, bundle = solved
        sol = extract(prog, bundle, scenario.label)
    idx: VariableIndex = prog.index
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ApproximateDerivativeWarning)
        ctx = make_context(prog, bundle, kink_tol=settings.kink_tol)
    gx = emission_gradient(model, idx)
    _, gb, _ = adjoint(ctx, gx=gx)
    residual = ctx.last_residual
    inconsistency = ctx.lu.last_inconsistency
    if residual > 1e-8:
        warnings.warn(
            f"adjoint system solved only to relative residual {residual:.2e}; signals are approximate",
            ApproximateDerivativeWarning,
            stacklevel=2,
        )
    unit = idx.base_mva * idx.dt_hours
    active = gb[idx.p_balance_rows] / unit
    reactive = gb[idx.q_balance_rows] / unit

    shape = active.shape
    amb_rows, amb_cols = ambiguous_rows(ctx)
    if amb_cols.size:
        warnings.warn(
            f"scenario {scenario.label}: dispatch is not unique ({amb_cols.size} columns move along the "
            "optimal face); signals describe the returned solution only",
            DegenerateSignalWarning,
            stacklevel=2,
        )
    if stability:
        a_rad, a_kink = _stability_radius(ctx, idx.p_balance_rows, settings.kink_tol, amb_rows)
        q_rad, q_kink = _stability_radius(ctx, idx.q_balance_rows, settings.kink_tol, amb_rows)
    else:
        a_rad = np.full(shape, np.inf)
        q_rad = np.full(shape, np.inf)
        a_kink = np.zeros(shape, dtype=bool)
        q_kink = np.zeros(shape, dtype=bool)
    limit = 2.0 * delta
    a_flags = a_kink | (a_rad < limit)
    q_flags = q_kink | (q_rad < limit)
    kink_hours = tuple(sorted({int(h) for h in idx.row_hour[ctx.kink_rows]}))
    if a_flags.all() and q_flags.all():
        warnings.warn(f"scenario {scenario.label}: every DLME entry is flagged", DegenerateSignalWarning, stacklevel=2)
    return DlmeMatrix(
        label=scenario.label,
        active=active,
        reactive=reactive,
        active_flags=a_flags,
        reactive_flags=q_flags,
        active_radius=a_rad,
        reactive_radius=q_rad,
        kink_hours=kink_hours,
        emission=model.total(sol),
        dispatch=sol,
        bundle=bundle,
        program=prog,
        diagnostics={
            "solver": bundle.info.as_dict(),
            "kkt": bundle.kkt.as_dict() if bundle.kkt else None,
            "approximate": bool(ctx.approximate),
            "regularized_warnings": len(caught),
            "condition": float(ctx.condition),
            "adjoint_residual": float(residual),
            "adjoint_inconsistency": float(inconsistency),
            "kink_rows": int(ctx.kink_rows.size),
            "ambiguous_rows": int(amb_rows.size),
            "ambiguous_columns": int(amb_cols.size),
            "flagged_active": int(a_flags.sum()),
            "flagged_reactive": int(q_flags.sum()),
            "delta": float(delta),
        },
    )


@dataclass(frozen=True)
class FdResult:
    value: float
    one_sided: bool
    plus: float
    minus: float


def fd_oracle(
    case: NetworkCase,
    scenario: ScenarioSet,
    bus: int,
    hour: int,
    which: str = "active",
    delta: float = DEFAULT_DELTA,
    settings: SolverSettings | None = None,
    model: EmissionModel | None = None,
    base=None,
) -> FdResult:
    """Central finite difference of total emission in one load entry.

    ``bus`` is a bus position (0-based row of the demand matrix), ``hour``
    0-based and ``delta`` in p.u. on the case base. The load is moved in the
    right-hand side of the rebuilt program (the only place it enters), so
    probes below zero demand stay well defined. Each side is a full re-solve,
    warm-started from ``base = (program, bundle)`` when given. If one side is
    infeasible a one-sided difference is returned with ``one_sided`` set.
    """
    if delta == 0:
        raise ValueError("finite-difference step delta must be nonzero")
    if which not in ("active", "reactive"):
        raise ValueError("which must be 'active' or 'reactive'")
    settings = settings or SolverSettings()
    model = model or EmissionModel.from_case(case)
    if base is None:
        prog = build_program(case, scenario)
        bundle0, _ = solve_hsde(prog, settings)
    else:
        prog, bundle0 = base
    idx: VariableIndex = prog.index
    row = (idx.p_balance_rows if which == "active" else idx.q_balance_rows)[bus, hour]
    warm = (bundle0.x, bundle0.y, bundle0.s)

    def emission_at(shift):
        b = prog.b.copy()
        b[row] += shift
        p = ConeProgram(prog.A, b, prog.c, prog.cones, idx)
        bnd, _ = solve_hsde(p, settings, warm_start=warm)
        return model.total(extract(p, bnd))

    e0 = model.total(extract(prog, bundle0))
    plus = minus = None
    try:
        plus = emission_at(delta)
    except SolverError:
        pass
    try:
        minus = emission_at(-delta)
    except SolverError:
        pass
    unit = idx.base_mva * idx.dt_hours
    if plus is not None and minus is not None:
        return FdResult((plus - minus) / (2 * delta * unit), False, plus, minus)
    if plus is None and minus is None:
        raise SolverError("infeasible", "both finite-difference probes failed")
    warnings.warn("one finite-difference probe failed; using a one-sided difference", OneSidedDifferenceWarning, stacklevel=2)
    if plus is not None:
        return FdResult((plus - e0) / (delta * unit), True, plus, e0)
    return FdResult((e0 - minus) / (delta * unit), True, e0, minus)


def sample_entries(dlme: DlmeMatrix, n: int, seed: int = 0, which: str = "active", unflagged: bool = True) -> list:
    """Draw ``n`` distinct ``(bus, hour, which)`` entries, skipping flagged ones by default."""
    flags = dlme.active_flags if which == "active" else dlme.reactive_flags
    pool = np.argwhere(~flags) if unflagged else np.argwhere(np.ones_like(flags, dtype=bool))
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(pool), size=min(n, len(pool)), replace=False) if len(pool) else []
    return [(int(pool[k][0]), int(pool[k][1]), which) for k in sorted(pick)]


def fd_audit(dlme: DlmeMatrix, case: NetworkCase, scenario: ScenarioSet, samples, settings=None,
             delta: float = DEFAULT_DELTA, rel_tol: float = 1e-3, abs_tol: float = 1e-5,
             model: EmissionModel | None = None) -> list:
    """Compare adjoint DLME against :func:`fd_oracle` on ``(bus, hour, which)`` samples."""
    out = []
    base = (dlme.program, dlme.bundle)
    for bus, hour, which in samples:
        fd = fd_oracle(case, scenario, bus, hour, which, delta, settings, model, base=base)
        mat = dlme.active if which == "active" else dlme.reactive
        flags = dlme.active_flags if which == "active" else dlme.reactive_flags
        adj = float(mat[bus, hour])
        err = abs(adj - fd.value)
        tol = max(rel_tol * abs(fd.value), abs_tol)
        out.append(
            {
                "scenario": dlme.label,
                "bus": case.buses[bus].id,
                "hour": hour + 1,
                "which": which,
                "adjoint": adj,
                "finite_difference": fd.value,
                "abs_error": err,
                "tolerance": tol,
                "flagged": bool(flags[bus, hour]),
                "one_sided": fd.one_sided,
                "pass": bool(err <= tol),
            }
        )
    return out


__all__ = [
    "DlmeMatrix",
    "EmissionModel",
    "FdResult",
    "compute_dlme",
    "emission_gradient",
    "fd_audit",
    "fd_oracle",
    "sample_entries",
]
