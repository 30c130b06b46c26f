"""Average-emission (carbon emission flow) and merit-order baselines."""

from __future__ import annotations

import logging
import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np

from .emissions import EmissionModel
from .grid import NetworkCase, ScenarioSet
from .scheduler import DispatchSolution

log = logging.getLogger(__name__)


class ZeroInjectionWarning(UserWarning):
    """A bus has no injected power; its intensity is set to zero."""


class MeritOrderError(ValueError):
    """Demand exceeds the merit-order stack."""


@dataclass(eq=False)
class CefState:
    """Carbon emission flow of one dispatch (intensities in tCO2/MWh, masses in tCO2)."""

    node: np.ndarray  # bus x T
    branch: np.ndarray  # closed branch x T
    discharge: np.ndarray  # storage x T
    generation_emission: np.ndarray  # T
    discharge_emission: np.ndarray  # T
    load_emission: np.ndarray  # T, attributed to demand, charging and EV consumption
    loss_emission: np.ndarray  # T
    source_min: np.ndarray  # T, lowest intensity among injecting sources
    source_max: np.ndarray  # T

    def audit(self) -> np.ndarray:
        """Per-hour conservation error: sources minus (loads + losses)."""
        return self.generation_emission + self.discharge_emission - self.load_emission - self.loss_emission


def carbon_emission_flow(case: NetworkCase, sol: DispatchSolution, scenario: ScenarioSet,
                         model: EmissionModel | None = None) -> CefState:
    """Trace generation emissions to buses by proportional sharing.

    A bus's intensity is the injection-weighted average of its local
    generation, the power arriving on its incoming branches and storage
    discharge. Branch losses are supplied at the sending-end intensity and
    booked to a separate loss account. Storage discharge carries either a
    fixed rate from the case or the average intensity of the energy stored
    (the initial content at the substation rate).
    """
    model = model or EmissionModel.from_case(case)
    T = case.horizon
    dt = case.dt_hours
    base = case.base_mva
    nb = case.n_bus
    pos = case.bus_position()
    oriented = case.oriented_branches()
    branches = case.closed_branches
    root = pos[case.substation.bus]
    nbr = len(oriented)
    nsto = len(case.storage)

    node = np.zeros((nb, T))
    rho = np.zeros((nbr, T))
    e_dis = np.zeros((nsto, T))
    gen_e = np.zeros(T)
    dis_e = np.zeros(T)
    load_e = np.zeros(T)
    loss_e = np.zeros(T)
    smin = np.zeros(T)
    smax = np.zeros(T)

    # stored carbon (t) and energy (MWh) for tracked storage
    stored_c = np.array([e.e_init_mwh * case.substation.emission_rate for e in case.storage])
    stored_e = np.array([e.e_init_mwh for e in case.storage])

    P = sol["p_branch"]
    L = sol["l_branch"]
    loss = np.array([branches[k].r * L[k] * base for k, _, _ in oriented]).reshape(nbr, T)
    for t in range(T):
        gen_p = np.zeros(nb)
        gen_c = np.zeros(nb)  # tCO2/h injected by local sources
        consume = scenario.p_demand[:, t].astype(float).copy()
        sources = []
        # a unit drawing power (export at the substation, solver noise) is a load
        p_sub = sol["p_sub"][t]
        units = [(root, p_sub, model.substation_rate)]
        units += [(pos[g.bus], sol["p_sync"][k, t], model.sync_rates[k]) for k, g in enumerate(case.sync_dg)]
        units += [(pos[u.bus], sol["p_inv"][k, t], 0.0) for k, u in enumerate(case.inverter_dg)]
        for j, p, rate in units:
            if p > 1e-9:
                gen_p[j] += p
                gen_c[j] += p * rate
                sources.append(rate)
            elif p < 0:
                consume[j] -= p
            # output at noise level is treated as zero
        unit_c = float(gen_c.sum())
        for k, e in enumerate(case.storage):
            j = pos[e.bus]
            if e.discharge_emission_rate is not None:
                e_dis[k, t] = e.discharge_emission_rate
            elif stored_e[k] > 1e-12:
                e_dis[k, t] = stored_c[k] / stored_e[k] / e.eta_dis
            else:
                e_dis[k, t] = case.substation.emission_rate / e.eta_dis
            pd = sol["p_dis"][k, t]
            gen_p[j] += pd
            gen_c[j] += pd * e_dis[k, t]
            if pd > 1e-9:
                sources.append(e_dis[k, t])
            consume[j] += sol["p_cha"][k, t]
        for k, v in enumerate(case.ev):
            j = pos[v.bus]
            p = sol["p_ev"][k, t]
            if p >= 0:
                consume[j] += p
            else:
                gen_p[j] += -p  # vehicle-to-grid injection, zero intensity
                sources.append(0.0)

        # end flows into each branch: parent end sends P, child end sends -(P - loss)
        f_par = P[:, t]
        f_chi = -(P[:, t] - loss[:, t])
        # directed dependency: receiving bus depends on sending bus
        indeg = np.zeros(nb, dtype=int)
        out_edges = {i: [] for i in range(nb)}
        for k, (_, i, j) in enumerate(oriented):
            if f_par[k] > 0 and f_chi[k] < 0:
                out_edges[i].append((k, j))
                indeg[j] += 1
            elif f_chi[k] > 0 and f_par[k] < 0:
                out_edges[j].append((k, i))
                indeg[i] += 1
        inflow_p = np.zeros(nb)
        inflow_c = np.zeros(nb)
        queue = deque(np.flatnonzero(indeg == 0).tolist())
        done = 0
        while queue:
            u = queue.popleft()
            done += 1
            inj = gen_p[u] + inflow_p[u]
            if inj > 1e-12:
                node[u, t] = (gen_c[u] + inflow_c[u]) / inj
            else:
                node[u, t] = 0.0
                if consume[u] > 1e-9:
                    warnings.warn(
                        f"bus {case.buses[u].id} hour {t + 1}: no injected power; intensity set to 0",
                        ZeroInjectionWarning,
                        stacklevel=2,
                    )
            for k, w in out_edges[u]:
                # a bus with nothing injected only passes on solver noise
                if inj > 1e-12:
                    arrive = -(f_chi[k] if w == oriented[k][2] else f_par[k])
                    inflow_p[w] += arrive
                    inflow_c[w] += arrive * node[u, t]
                indeg[w] -= 1
                if indeg[w] == 0:
                    queue.append(w)
        if done != nb:
            raise RuntimeError("carbon flow graph is not acyclic")
        for k, (_, i, j) in enumerate(oriented):
            fi, fj = max(f_par[k], 0.0), max(f_chi[k], 0.0)
            if fi + fj > 0:
                rho[k, t] = (fi * node[i, t] + fj * node[j, t]) / (fi + fj)
            else:
                rho[k, t] = node[i, t]
        gen_e[t] = dt * unit_c
        dis_e[t] = dt * float(np.sum(sol["p_dis"][:, t] * e_dis[:, t])) if nsto else 0.0
        load_e[t] = dt * float(node[:, t] @ consume)
        loss_e[t] = dt * float(rho[:, t] @ loss[:, t]) if nbr else 0.0
        sources = sources or [0.0]
        smin[t], smax[t] = min(sources), max(sources)

        # storage carbon bookkeeping for the next hour
        for k, e in enumerate(case.storage):
            j = pos[e.bus]
            pc, pd = sol["p_cha"][k, t], sol["p_dis"][k, t]
            out_e = pd / e.eta_dis * dt
            if stored_e[k] > 1e-12:
                stored_c[k] -= stored_c[k] / stored_e[k] * out_e
            stored_e[k] -= out_e
            stored_e[k] += e.eta_cha * pc * dt
            stored_c[k] += node[j, t] * pc * dt
            stored_e[k] = max(stored_e[k], 0.0)
            stored_c[k] = max(stored_c[k], 0.0)

    return CefState(node, rho, e_dis, gen_e, dis_e, load_e, loss_e, smin, smax)


def mix_intensity(powers, rates) -> float:
    """Injection-weighted intensity of sources feeding one bus."""
    powers = np.asarray(powers, dtype=float)
    total = powers.sum()
    if total <= 0:
        return 0.0
    return float(powers @ np.asarray(rates, dtype=float) / total)


def compute_dlae(case: NetworkCase, sol: DispatchSolution, scenario: ScenarioSet,
                 model: EmissionModel | None = None) -> np.ndarray:
    """Locational average emission (bus x hour, tCO2/MWh)."""
    return carbon_emission_flow(case, sol, scenario, model).node


@dataclass(frozen=True)
class MeritOrder:
    """Units stacked by ascending price for one hour."""

    names: tuple
    prices: np.ndarray
    capacities: np.ndarray
    rates: np.ndarray

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.capacities)

    def marginal(self, demand: float) -> int:
        """Index of the unit serving the next increment of ``demand``.

        A demand exactly at a capacity boundary is served by the next unit.
        """
        cum = self.cumulative
        above = np.flatnonzero(cum > demand)
        if above.size == 0:
            raise MeritOrderError(f"demand {demand:.6g} MW reaches total capacity {cum[-1] if cum.size else 0:.6g} MW")
        return int(above[0])


def merit_order(case: NetworkCase, scenario: ScenarioSet, hour: int, model: EmissionModel | None = None) -> MeritOrder:
    model = model or EmissionModel.from_case(case)
    names, prices, caps, rates = [], [], [], []
    for k, u in enumerate(case.inverter_dg):
        names.append(u.id)
        prices.append(u.price_p)
        caps.append(u.capacity_mw * scenario.pv_availability[k, hour])
        rates.append(0.0)
    for k, g in enumerate(case.sync_dg):
        names.append(g.id)
        prices.append(g.price_p)
        caps.append(g.p_max_mw)
        rates.append(model.sync_rates[k])
    names.append("substation")
    prices.append(case.substation.price_p[hour])
    caps.append(case.substation.p_max_mw)
    rates.append(model.substation_rate)
    order = np.argsort(np.asarray(prices), kind="stable")
    return MeritOrder(
        names=tuple(names[i] for i in order),
        prices=np.asarray(prices)[order],
        capacities=np.asarray(caps)[order],
        rates=np.asarray(rates)[order],
    )


def compute_rodm(case: NetworkCase, scenario: ScenarioSet, model: EmissionModel | None = None) -> np.ndarray:
    """Merit-order marginal emission rate, identical at every bus (bus x hour)."""
    model = model or EmissionModel.from_case(case)
    T = case.horizon
    out = np.zeros((case.n_bus, T))
    for t in range(T):
        stack = merit_order(case, scenario, t, model)
        demand = float(scenario.p_demand[:, t].sum())
        out[:, t] = stack.rates[stack.marginal(demand)]
    return out
