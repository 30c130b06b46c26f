"""Multi-period branch-flow SOCP dispatch in canonical conic form.

Decision variables are in per-unit on the case MVA base (energies in p.u.
hours). For every closed branch ``k`` oriented parent ``i`` -> child ``j``,
``P_k, Q_k`` are sending-end flows, ``l_k`` the squared current and ``v_i``
the squared voltage magnitude. The model is::

    P_k - r_k l_k + sum(children flows out of j) ...   (active balance at j)
    v_j = v_i - 2 (r P + x Q) + (r^2 + x^2) l          (voltage drop)
    ||(2P, 2Q, l - v_i)|| <= l + v_i                   (relaxed l v_i >= P^2 + Q^2)

plus DER limits, storage state-of-charge recursion and EV energy windows.
Loads only enter the right-hand side of the balance rows, which is what the
emission engine differentiates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .cones import ConeSpec
from .grid import CaseValidationError, NetworkCase, ScenarioSet, check_scenario
from .hsde import ConeProgram, KktReport, SolutionBundle, SolverSettings, solve_hsde

log = logging.getLogger(__name__)

# an inverter with less headroom than this (per unit) is switched off: a box
# that narrow next to ordinary bounds sits below what the splitting resolves
NEGLIGIBLE_CAP_PU = 1e-5


class BoundConflictError(CaseValidationError):
    """A constraint has lower bound above upper bound."""


@dataclass(frozen=True, eq=False)
class VariableIndex:
    """Column map of named variables and row map of load entries.

    ``columns[name]`` is an integer array of shape ``(T,)`` for system-wide
    quantities or ``(units, T)`` otherwise. ``p_balance_rows`` and
    ``q_balance_rows`` are ``(n_bus, T)`` arrays of row indices whose
    right-hand side equals the bus demand in p.u.
    """

    columns: dict
    n_cols: int
    p_balance_rows: np.ndarray
    q_balance_rows: np.ndarray
    row_hour: np.ndarray
    row_label: tuple
    col_label: tuple
    base_mva: float
    dt_hours: float
    cost_scale: float
    horizon: int
    branch_ends: np.ndarray

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def names(self) -> list:
        return list(self.columns)


class _Builder:
    def __init__(self, T: int):
        self.T = T
        self.n = 0
        self.columns: dict[str, np.ndarray] = {}
        self.col_label: list[str] = []
        self.rows = {"zero": [], "nonneg": []}
        self.soc = []

    def var(self, name: str, units: int | None, labels=None) -> np.ndarray:
        T = self.T
        size = T if units is None else units * T
        cols = np.arange(self.n, self.n + size)
        self.n += size
        if units is None:
            self.col_label.extend(f"{name}[t={t + 1}]" for t in range(T))
            cols = cols.reshape(T)
        else:
            labels = labels or [str(u) for u in range(units)]
            self.col_label.extend(f"{name}[{labels[u]},t={t + 1}]" for u in range(units) for t in range(T))
            cols = cols.reshape(units, T)
        self.columns[name] = cols
        return cols

    def _row(self, kind, cols, vals, rhs, hour, label):
        self.rows[kind].append((np.asarray(cols, dtype=np.int64), np.asarray(vals, dtype=float), float(rhs), hour, label))
        return len(self.rows[kind]) - 1

    def eq(self, cols, vals, rhs, hour, label):
        return self._row("zero", cols, vals, rhs, hour, label)

    def le(self, cols, vals, rhs, hour, label):
        return self._row("nonneg", cols, vals, rhs, hour, label)

    def ge(self, cols, vals, rhs, hour, label):
        return self._row("nonneg", cols, -np.asarray(vals, dtype=float), -rhs, hour, label)

    def bounds(self, cols, vals, lo, hi, hour, label, tol=1e-12):
        """``lo <= a.x <= hi``; equal bounds become one equality row."""
        if lo > hi + tol:
            raise BoundConflictError(f"{label} at hour {hour + 1}: lower bound {lo:.6g} > upper bound {hi:.6g}")
        if abs(hi - lo) <= tol:
            self.eq(cols, vals, 0.5 * (lo + hi), hour, label)
            return
        if lo > -math.inf:
            self.ge(cols, vals, lo, hour, f"{label}>=")
        if hi < math.inf:
            self.le(cols, vals, hi, hour, f"{label}<=")

    def soc_block(self, comps, hour, label):
        """Second-order cone on affine components ``s_k = sum vals * x[cols]``."""
        self.soc.append((comps, hour, label))


def _cap_pu(value_mw: float, base: float) -> float:
    return value_mw / base if math.isfinite(value_mw) else math.inf


def build_program(case: NetworkCase, scenario: ScenarioSet) -> ConeProgram:
    """Assemble the dispatch program for one scenario."""
    check_scenario(case, scenario)
    T = case.horizon
    base = case.base_mva
    dt = case.dt_hours
    nb = case.n_bus
    pos = case.bus_position()
    oriented = case.oriented_branches()
    branches = case.closed_branches
    inv, syn, sto, evs = case.inverter_dg, case.sync_dg, case.storage, case.ev
    magnitude = case.options.reactive_cost == "magnitude"

    B = _Builder(T)
    bus_labels = [str(b.id) for b in case.buses]
    br_labels = [f"{branches[k].from_bus}-{branches[k].to_bus}" for k, _, _ in oriented]
    pS = B.var("p_sub", None)
    qS = B.var("q_sub", None)
    p_inv = B.var("p_inv", len(inv), [u.id for u in inv])
    q_inv = B.var("q_inv", len(inv), [u.id for u in inv])
    p_syn = B.var("p_sync", len(syn), [g.id for g in syn])
    q_syn = B.var("q_sync", len(syn), [g.id for g in syn])
    P = B.var("p_branch", len(oriented), br_labels)
    Qf = B.var("q_branch", len(oriented), br_labels)
    L = B.var("l_branch", len(oriented), br_labels)
    V = B.var("v_bus", nb, bus_labels)
    pc = B.var("p_cha", len(sto), [e.id for e in sto])
    pd = B.var("p_dis", len(sto), [e.id for e in sto])
    E = B.var("e_sto", len(sto), [e.id for e in sto])
    pev = B.var("p_ev", len(evs), [v.id for v in evs])
    q_units = [("q_sub", None, qS)] + [("q_inv", k, q_inv[k]) for k in range(len(inv))]
    q_units += [("q_sync", k, q_syn[k]) for k in range(len(syn))]
    if magnitude:
        q_abs_sub = B.var("q_abs_sub", None)
        q_abs_inv = B.var("q_abs_inv", len(inv), [u.id for u in inv])
        q_abs_syn = B.var("q_abs_sync", len(syn), [g.id for g in syn])

    # cost (currency) per unit of each column
    cost = np.zeros(B.n)
    price_p = np.asarray(case.substation.price_p, dtype=float)
    price_q = case.substation.reactive_prices()
    scale_e = base * dt
    cost[pS] = price_p * scale_e
    for k, u in enumerate(inv):
        cost[p_inv[k]] = u.price_p * scale_e
    for k, g in enumerate(syn):
        cost[p_syn[k]] = g.price_p * scale_e
    for k, e in enumerate(sto):
        cost[pc[k]] = e.price * scale_e
        cost[pd[k]] = e.price * scale_e
    # DER reactive prices default to the substation's
    q_prices = [price_q] + [price_q if u.price_q is None else np.full(T, u.price_q) for u in inv]
    q_prices += [price_q if g.price_q is None else np.full(T, g.price_q) for g in syn]
    if magnitude:
        abs_cols = [q_abs_sub] + [q_abs_inv[k] for k in range(len(inv))] + [q_abs_syn[k] for k in range(len(syn))]
        for (_, _, qcols), acols, pr in zip(q_units, abs_cols, q_prices):
            cost[acols] = pr * scale_e
            for t in range(T):
                B.le([qcols[t], acols[t]], [1.0, -1.0], 0.0, t, "q_abs+")
                B.le([qcols[t], acols[t]], [-1.0, -1.0], 0.0, t, "q_abs-")
    else:
        for (_, _, qcols), pr in zip(q_units, q_prices):
            cost[qcols] = pr * scale_e
    cost_scale = float(np.max(np.abs(cost), initial=0.0)) or 1.0
    c = cost / cost_scale

    # incidence helpers
    parent_branch = {j: k for k, _, j in oriented}
    children = {i: [] for i in range(nb)}
    for k, i, j in oriented:
        children[i].append(k)
    at_bus = {i: {"inv": [], "syn": [], "sto": [], "ev": []} for i in range(nb)}
    for k, u in enumerate(inv):
        at_bus[pos[u.bus]]["inv"].append(k)
    for k, g in enumerate(syn):
        at_bus[pos[g.bus]]["syn"].append(k)
    for k, e in enumerate(sto):
        at_bus[pos[e.bus]]["sto"].append(k)
    for k, v in enumerate(evs):
        at_bus[pos[v.bus]]["ev"].append(k)
    root = pos[case.substation.bus]
    rx = {k: (branches[k].r, branches[k].x) for k, _, _ in oriented}

    p_rows = np.zeros((nb, T), dtype=np.int64)
    q_rows = np.zeros((nb, T), dtype=np.int64)
    pD = scenario.p_demand / base
    qD = scenario.q_demand / base
    for t in range(T):
        for j in range(nb):
            pc_, pv_ = [], []
            qc_, qv_ = [], []
            if j == root:
                pc_.append(pS[t]); pv_.append(1.0)
                qc_.append(qS[t]); qv_.append(1.0)
            if j in parent_branch:
                k = parent_branch[j]
                r, x = rx[k]
                pc_ += [P[k, t], L[k, t]]; pv_ += [1.0, -r]
                qc_ += [Qf[k, t], L[k, t]]; qv_ += [1.0, -x]
            for k in children[j]:
                pc_.append(P[k, t]); pv_.append(-1.0)
                qc_.append(Qf[k, t]); qv_.append(-1.0)
            for k in at_bus[j]["inv"]:
                pc_.append(p_inv[k, t]); pv_.append(1.0)
                qc_.append(q_inv[k, t]); qv_.append(1.0)
            for k in at_bus[j]["syn"]:
                pc_.append(p_syn[k, t]); pv_.append(1.0)
                qc_.append(q_syn[k, t]); qv_.append(1.0)
            for k in at_bus[j]["sto"]:
                pc_ += [pc[k, t], pd[k, t]]; pv_ += [-1.0, 1.0]
            for k in at_bus[j]["ev"]:
                pc_.append(pev[k, t]); pv_.append(-1.0)
            p_rows[j, t] = B.eq(pc_, pv_, pD[j, t], t, f"p_balance[{case.buses[j].id}]")
            q_rows[j, t] = B.eq(qc_, qv_, qD[j, t], t, f"q_balance[{case.buses[j].id}]")
        for k, i, j in oriented:
            r, x = rx[k]
            B.eq(
                [V[j, t], V[i, t], P[k, t], Qf[k, t], L[k, t]],
                [1.0, -1.0, 2 * r, 2 * x, -(r * r + x * x)],
                0.0,
                t,
                f"v_drop[{br_labels[k]}]",
            )
            B.soc_block(
                [
                    ([L[k, t], V[i, t]], [1.0, 1.0]),
                    ([P[k, t]], [2.0]),
                    ([Qf[k, t]], [2.0]),
                    ([L[k, t], V[i, t]], [1.0, -1.0]),
                ],
                t,
                f"flow_cone[{br_labels[k]}]",
            )
            br = branches[k]
            if br.i_min > 0:
                B.bounds([L[k, t]], [1.0], br.i_min**2, br.i_max**2, t, f"l[{br_labels[k]}]")
            else:
                B.le([L[k, t]], [1.0], br.i_max**2, t, f"l[{br_labels[k]}]<=")

        # voltages
        for j, bus in enumerate(case.buses):
            if j == root and case.substation.v_set is not None:
                B.eq([V[j, t]], [1.0], case.substation.v_set**2, t, "v_set")
            else:
                B.bounds([V[j, t]], [1.0], bus.v_min**2, bus.v_max**2, t, f"v[{bus.id}]")

        sub = case.substation
        B.bounds([pS[t]], [1.0], sub.p_min_mw / base, _cap_pu(sub.p_max_mw, base), t, "p_sub")
        B.bounds([qS[t]], [1.0], -_cap_pu(sub.q_max_mvar, base), _cap_pu(sub.q_max_mvar, base), t, "q_sub")

        for k, u in enumerate(inv):
            cap = u.capacity_mw * scenario.pv_availability[k, t] / base
            lo = min(u.p_min_mw / base, cap)
            label = f"pv[{u.id}]"
            if cap <= NEGLIGIBLE_CAP_PU:
                B.eq([p_inv[k, t]], [1.0], 0.0, t, f"{label}.p")
                B.eq([q_inv[k, t]], [1.0], 0.0, t, f"{label}.q")
                continue
            B.bounds([p_inv[k, t]], [1.0], lo, cap, t, f"{label}.p")
            if u.kappa_min >= 1.0:
                B.eq([q_inv[k, t]], [1.0], 0.0, t, f"{label}.q")
            else:
                slope = pf_slope(u.kappa_min)
                B.le([q_inv[k, t], p_inv[k, t]], [1.0, -slope], 0.0, t, f"{label}.pf+")
                B.le([q_inv[k, t], p_inv[k, t]], [-1.0, -slope], 0.0, t, f"{label}.pf-")

        for k, g in enumerate(syn):
            label = f"sync[{g.id}]"
            B.bounds([p_syn[k, t]], [1.0], g.p_min_mw / base, g.p_max_mw / base, t, f"{label}.p")
            B.bounds([q_syn[k, t]], [1.0], g.q_min_mvar / base, g.q_max_mvar / base, t, f"{label}.q")
            lo, hi = g.ramp_down_mw * dt / base, g.ramp_up_mw * dt / base
            if t == 0:
                p0 = g.initial_output / base
                B.bounds([p_syn[k, t]], [1.0], p0 + lo, p0 + hi, t, f"{label}.ramp")
            else:
                B.bounds([p_syn[k, t], p_syn[k, t - 1]], [1.0, -1.0], lo, hi, t, f"{label}.ramp")

        for k, e in enumerate(sto):
            label = f"storage[{e.id}]"
            B.bounds([pc[k, t]], [1.0], 0.0, e.p_cha_max_mw / base, t, f"{label}.cha")
            B.bounds([pd[k, t]], [1.0], 0.0, e.p_dis_max_mw / base, t, f"{label}.dis")
            B.bounds([E[k, t]], [1.0], e.e_min_mwh / base, e.e_max_mwh / base, t, f"{label}.e")
            cols = [E[k, t], pc[k, t], pd[k, t]]
            vals = [1.0, -e.eta_cha * dt, dt / e.eta_dis]
            if t == 0:
                B.eq(cols, vals, e.e_init_mwh / base, t, f"{label}.soc")
            else:
                B.eq(cols + [E[k, t - 1]], vals + [-1.0], 0.0, t, f"{label}.soc")
            if t == T - 1 and case.options.terminal_storage:
                if e.e_init_mwh < e.e_max_mwh:
                    B.ge([E[k, t]], [1.0], e.e_init_mwh / base, t, f"{label}.terminal")

        for k, v in enumerate(evs):
            label = f"ev[{v.id}]"
            B.bounds([pev[k, t]], [1.0], v.p_lb_mw[t] / base, v.p_ub_mw[t] / base, t, f"{label}.p")
            lo, hi = v.e_lb_mwh[t] / base, v.e_ub_mwh[t] / base
            # only emit energy rows that can bind given the power bounds
            cum_lo = float(np.sum(v.p_lb_mw[: t + 1])) * dt / base
            cum_hi = float(np.sum(v.p_ub_mw[: t + 1])) * dt / base
            lo_eff = lo if lo > cum_lo + 1e-12 else -math.inf
            hi_eff = hi if hi < cum_hi - 1e-12 else math.inf
            if lo_eff > -math.inf or hi_eff < math.inf:
                B.bounds(list(pev[k, : t + 1]), [dt] * (t + 1), lo_eff, hi_eff, t, f"{label}.energy")

    return _assemble(B, c, p_rows, q_rows, case, cost_scale)


def pf_slope(kappa_min: float) -> float:
    """Largest |q|/p allowed by a minimum power factor."""
    return math.sqrt(1.0 - kappa_min**2) / kappa_min


def _assemble(B: _Builder, c, p_rows, q_rows, case: NetworkCase, cost_scale: float) -> ConeProgram:
    rows, cols, vals = [], [], []
    b = []
    hours = []
    labels = []
    r = 0
    offsets = {}
    for kind in ("zero", "nonneg"):
        offsets[kind] = r
        for rc, rv, rhs, hour, label in B.rows[kind]:
            rows.append(np.full(rc.size, r))
            cols.append(rc)
            vals.append(rv)
            b.append(rhs)
            hours.append(hour)
            labels.append(label)
            r += 1
    n_zero = len(B.rows["zero"])
    n_nonneg = len(B.rows["nonneg"])
    for comps, hour, label in B.soc:
        for ccols, cvals in comps:
            # s = sum(vals * x)  ->  A row = -vals, b = 0
            rows.append(np.full(len(ccols), r))
            cols.append(np.asarray(ccols, dtype=np.int64))
            vals.append(-np.asarray(cvals, dtype=float))
            b.append(0.0)
            hours.append(hour)
            labels.append(label)
            r += 1
    m = r
    A = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, B.n)
    )
    A.sum_duplicates()
    A.eliminate_zeros()
    blocks = []
    if n_zero:
        blocks.append(("zero", n_zero))
    if n_nonneg:
        blocks.append(("nonneg", n_nonneg))
    blocks.extend(("soc", len(comps)) for comps, _, _ in B.soc)
    cones = ConeSpec(tuple(blocks))
    index = VariableIndex(
        columns=dict(B.columns),
        n_cols=B.n,
        p_balance_rows=p_rows + offsets["zero"],
        q_balance_rows=q_rows + offsets["zero"],
        row_hour=np.asarray(hours, dtype=np.int64),
        row_label=tuple(labels),
        col_label=tuple(B.col_label),
        base_mva=case.base_mva,
        dt_hours=case.dt_hours,
        cost_scale=cost_scale,
        horizon=case.horizon,
        branch_ends=np.array([(i, j) for _, i, j in case.oriented_branches()], dtype=np.int64).reshape(-1, 2),
    )
    empty = np.flatnonzero(np.diff(A.tocsr().indptr) == 0)
    if empty.size:
        raise ValueError(f"program has all-zero rows: {[labels[i] for i in empty[:5]]}")
    return ConeProgram(A, np.asarray(b, dtype=float), c, cones, index)


# ---------------------------------------------------------------------------
# solution extraction


@dataclass(eq=False)
class DispatchSolution:
    """Named dispatch in physical units (MW, MVar, MWh, p.u. for v and l)."""

    values: dict
    objective: float
    status: str
    kkt: KktReport
    residual: float
    scenario: str = ""
    diagnostics: dict = field(default_factory=dict)
    base_mva: float = 1.0
    branch_ends: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]


_POWER_VARS = {
    "p_sub", "q_sub", "p_inv", "q_inv", "p_sync", "q_sync", "p_branch", "q_branch",
    "p_cha", "p_dis", "p_ev", "q_abs_sub", "q_abs_inv", "q_abs_sync",
}


def extract(prog: ConeProgram, bundle: SolutionBundle, label: str = "") -> DispatchSolution:
    idx: VariableIndex = prog.index
    x = bundle.x
    base = idx.base_mva
    values = {}
    for name, cols in idx.columns.items():
        arr = x[cols]
        if name in _POWER_VARS or name == "e_sto":
            arr = arr * base
        values[name] = arr
    objective = float(prog.c @ x) * idx.cost_scale
    sol = DispatchSolution(
        values=values,
        objective=objective,
        status=bundle.status,
        kkt=bundle.kkt,
        residual=bundle.info.residual,
        scenario=label,
        diagnostics=bundle.info.as_dict(),
        base_mva=base,
        branch_ends=idx.branch_ends,
    )
    gap = cone_gap(sol)
    sol.diagnostics["max_cone_gap"] = float(gap.max(initial=0.0))
    if gap.size and gap.max() > 1e-5:
        log.warning("relaxation is not tight: max l*v - (P^2 + Q^2) = %.3e", gap.max())
    cc = simultaneous_storage(sol)
    sol.diagnostics["max_simultaneous_storage_mw"] = float(cc)
    return sol


def cone_gap(sol: DispatchSolution) -> np.ndarray:
    """``l * v_i - (P^2 + Q^2)`` per branch and hour (p.u.)."""
    P = sol.values["p_branch"]
    if P.size == 0:
        return np.zeros((0, 0))
    v_send = sol.values["v_bus"][sol.branch_ends[:, 0]]
    p = P / sol.base_mva
    q = sol.values["q_branch"] / sol.base_mva
    return sol.values["l_branch"] * v_send - (p * p + q * q)


def simultaneous_storage(sol: DispatchSolution) -> float:
    pc = sol.values["p_cha"]
    if pc.size == 0:
        return 0.0
    return float(np.max(np.minimum(pc, sol.values["p_dis"])))


def solve_dispatch(prog: ConeProgram, settings: SolverSettings | None = None, label: str = "", warm_start=None):
    """Solve the program and return ``(DispatchSolution, SolutionBundle)``.

    Raises :class:`dlme.hsde.SolverError` when the solver does not reach an
    optimal point.
    """
    bundle, _ = solve_hsde(prog, settings, warm_start=warm_start)
    return extract(prog, bundle, label), bundle


def total_emission(sol: DispatchSolution, case: NetworkCase, storage_rate: float = 0.0) -> float:
    """System emission (tCO2) of a dispatch: substation import plus synchronous units."""
    dt = case.dt_hours
    total = case.substation.emission_rate * float(np.sum(sol.values["p_sub"])) * dt
    for k, g in enumerate(case.sync_dg):
        total += g.emission_rate * float(np.sum(sol.values["p_sync"][k])) * dt
    if storage_rate and sol.values["p_dis"].size:
        total += storage_rate * float(np.sum(sol.values["p_dis"])) * dt
    return total


def constraint_violations(sol: DispatchSolution, case: NetworkCase, scenario: ScenarioSet) -> dict:
    """Re-evaluate the physical constraints from named values (p.u.).

    Returns the largest violation per constraint family; useful as an
    independent check of the canonical-form assembly.
    """
    base = case.base_mva
    dt = case.dt_hours
    val = {k: np.asarray(v, dtype=float) for k, v in sol.values.items()}
    pu = lambda name: val[name] / base  # noqa: E731
    pos = case.bus_position()
    oriented = case.oriented_branches()
    branches = case.closed_branches
    root = pos[case.substation.bus]
    out = {}

    net_p = -scenario.p_demand / base
    net_q = -scenario.q_demand / base
    net_p = net_p.copy()
    net_q = net_q.copy()
    net_p[root] += pu("p_sub")
    net_q[root] += pu("q_sub")
    for k, u in enumerate(case.inverter_dg):
        net_p[pos[u.bus]] += pu("p_inv")[k]
        net_q[pos[u.bus]] += pu("q_inv")[k]
    for k, g in enumerate(case.sync_dg):
        net_p[pos[g.bus]] += pu("p_sync")[k]
        net_q[pos[g.bus]] += pu("q_sync")[k]
    for k, e in enumerate(case.storage):
        net_p[pos[e.bus]] += pu("p_dis")[k] - pu("p_cha")[k]
    for k, v in enumerate(case.ev):
        net_p[pos[v.bus]] -= pu("p_ev")[k]
    P, Qb, L, V = pu("p_branch"), pu("q_branch"), val["l_branch"], val["v_bus"]
    drop = 0.0
    for k, i, j in oriented:
        r, x = branches[k].r, branches[k].x
        net_p[j] += P[k] - r * L[k]
        net_q[j] += Qb[k] - x * L[k]
        net_p[i] -= P[k]
        net_q[i] -= Qb[k]
        drop = max(drop, float(np.max(np.abs(V[j] - V[i] + 2 * (r * P[k] + x * Qb[k]) - (r * r + x * x) * L[k]))))
        out["branch_current"] = max(
            out.get("branch_current", 0.0),
            float(np.max(L[k] - branches[k].i_max**2)),
            float(np.max(branches[k].i_min**2 - L[k])),
        )
        out["flow_cone"] = max(
            out.get("flow_cone", 0.0), float(np.max(P[k] ** 2 + Qb[k] ** 2 - L[k] * V[i]))
        )
    out["p_balance"] = float(np.max(np.abs(net_p)))
    out["q_balance"] = float(np.max(np.abs(net_q)))
    out["voltage_drop"] = drop
    vmin = np.array([b.v_min**2 for b in case.buses])[:, None]
    vmax = np.array([b.v_max**2 for b in case.buses])[:, None]
    vv = np.maximum(vmin - V, V - vmax)
    if case.substation.v_set is not None:
        vv[root] = np.abs(V[root] - case.substation.v_set**2)
    out["voltage"] = float(np.max(vv))
    viol = [0.0]
    for k, u in enumerate(case.inverter_dg):
        cap = u.capacity_mw * scenario.pv_availability[k] / base
        cap = np.where(cap <= NEGLIGIBLE_CAP_PU, 0.0, cap)
        p, q = pu("p_inv")[k], pu("q_inv")[k]
        lo = np.minimum(u.p_min_mw / base, cap)
        viol += [np.max(p - cap), np.max(lo - p)]
        slope = pf_slope(u.kappa_min) if u.kappa_min < 1 else 0.0
        viol.append(np.max(np.abs(q) - slope * p))
    out["inverter"] = float(max(viol))
    viol = [0.0]
    for k, g in enumerate(case.sync_dg):
        p, q = pu("p_sync")[k], pu("q_sync")[k]
        viol += [np.max(p - g.p_max_mw / base), np.max(g.p_min_mw / base - p)]
        viol += [np.max(q - g.q_max_mvar / base), np.max(g.q_min_mvar / base - q)]
        dp = np.diff(np.concatenate([[g.initial_output / base], p]))
        viol += [np.max(dp - g.ramp_up_mw * dt / base), np.max(g.ramp_down_mw * dt / base - dp)]
    out["synchronous"] = float(max(viol))
    viol = [0.0]
    for k, e in enumerate(case.storage):
        pc, pd, en = pu("p_cha")[k], pu("p_dis")[k], pu("e_sto")[k]
        prev = np.concatenate([[e.e_init_mwh / base], en[:-1]])
        viol.append(np.max(np.abs(en - prev - dt * (e.eta_cha * pc - pd / e.eta_dis))))
        viol += [np.max(-pc), np.max(-pd), np.max(pc - e.p_cha_max_mw / base), np.max(pd - e.p_dis_max_mw / base)]
        viol += [np.max(en - e.e_max_mwh / base), np.max(e.e_min_mwh / base - en)]
        if case.options.terminal_storage:
            viol.append(e.e_init_mwh / base - en[-1])
    out["storage"] = float(max(viol))
    viol = [0.0]
    for k, v in enumerate(case.ev):
        p = pu("p_ev")[k]
        cum = np.cumsum(p) * dt
        viol += [np.max(p - np.asarray(v.p_ub_mw) / base), np.max(np.asarray(v.p_lb_mw) / base - p)]
        viol += [np.max(cum - np.asarray(v.e_ub_mwh) / base), np.max(np.asarray(v.e_lb_mwh) / base - cum)]
    out["ev"] = float(max(viol))
    sub = case.substation
    out["substation"] = float(
        max(
            np.max(pu("p_sub") - sub.p_max_mw / base),
            np.max(sub.p_min_mw / base - pu("p_sub")),
            np.max(np.abs(pu("q_sub")) - sub.q_max_mvar / base),
        )
    )
    return out


def dump_program(prog: ConeProgram, path) -> None:
    """Write :func:`program_text` to ``path``."""
    with open(path, "w") as fh:
        fh.write(program_text(prog))


def program_text(prog: ConeProgram) -> str:
    """``(A, b, c, cones)`` as plain text.

    Format::

        # comment lines
        dims <m> <n> <nnz>
        cones <kind>:<dim> ...          (runs of equal blocks as kind:dim*count)
        c                               followed by n lines "<j> <value> <column label>"
        b                               followed by m lines "<i> <value> <row label>"
        A                               followed by nnz lines "<i> <j> <value>"

    The program is ``min c'x  s.t.  Ax + s = b, s in K`` with rows ordered as
    the cone list. Values use 17 significant digits.
    """
    A = prog.A.tocoo()
    m, n = A.shape
    idx = prog.index
    runs = []
    for kind, dim in prog.cones.blocks:
        if runs and runs[-1][0] == (kind, dim) and kind == "soc":
            runs[-1][1] += 1
        else:
            runs.append([(kind, dim), 1])
    cone_text = " ".join(f"{k}:{d}" + (f"*{cnt}" if cnt > 1 else "") for (k, d), cnt in runs)
    order = np.lexsort((A.col, A.row))
    out = []
    out.append("# min c'x s.t. Ax + s = b, s in K\n")
    if idx is not None:
        out.append(f"# cost scale {idx.cost_scale!r} currency per objective unit; base {idx.base_mva} MVA\n")
    out.append(f"dims {m} {n} {A.nnz}\n")
    out.append(f"cones {cone_text}\n")
    out.append("c\n")
    for j in range(n):
        lab = idx.col_label[j] if idx is not None else ""
        out.append(f"{j} {prog.c[j]:.17g} {lab}\n")
    out.append("b\n")
    for i in range(m):
        lab = idx.row_label[i] if idx is not None else ""
        out.append(f"{i} {prog.b[i]:.17g} {lab}\n")
    out.append("A\n")
    for k in order:
        out.append(f"{A.row[k]} {A.col[k]} {A.data[k]:.17g}\n")
    return "".join(out)


def read_program(path) -> ConeProgram:
    """Read a file written by :func:`dump_program` (labels are discarded)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    m, n, nnz = (int(t) for t in lines[0].split()[1:])
    blocks = []
    for tok in lines[1].split()[1:]:
        kind, rest = tok.split(":")
        dim, _, cnt = rest.partition("*")
        blocks.extend([(kind, int(dim))] * (int(cnt) if cnt else 1))
    pos = 2
    assert lines[pos] == "c"
    c = np.array([float(lines[pos + 1 + j].split()[1]) for j in range(n)])
    pos += 1 + n
    assert lines[pos] == "b"
    b = np.array([float(lines[pos + 1 + i].split()[1]) for i in range(m)])
    pos += 1 + m
    assert lines[pos] == "A"
    trip = np.array([ln.split() for ln in lines[pos + 1 : pos + 1 + nnz]], dtype=float).reshape(-1, 3)
    A = sp.csc_matrix((trip[:, 2], (trip[:, 0].astype(int), trip[:, 1].astype(int))), shape=(m, n))
    return ConeProgram(A, b, c, ConeSpec(tuple(blocks)))
