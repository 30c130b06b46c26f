"""Budget-based demand response guided by an emission signal."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .emissions import EmissionModel
from .grid import NetworkCase, ScenarioSet, peak
from .hsde import SolutionBundle, SolverSettings
from .scheduler import build_program, solve_dispatch


class BudgetError(ValueError):
    """The response budget cannot be placed within the caps."""


class UndefinedEnhanceWarning(UserWarning):
    pass


@dataclass(eq=False)
class DrPlan:
    """Per-bus, per-hour demand reduction (MW, or MVar when ``reactive``)."""

    signal: str
    response: np.ndarray  # bus x T
    budget: np.ndarray  # T (hourly) or a single daily total
    caps: np.ndarray  # bus x T
    reactive: bool = False
    mode: str = "hourly"

    def total(self) -> float:
        return float(self.response.sum())


def allocate_dr(signal, budget, caps, exclude=None, name: str = "", reactive: bool = False,
                mode: str = "hourly") -> DrPlan:
    """Place the budget on the entries with the largest signal.

    Greedy filling in descending signal order (lowest bus index first on
    ties) solves ``max sum(signal * r)`` subject to ``sum(r) = budget`` and
    ``0 <= r <= cap`` exactly. ``mode="hourly"`` treats ``budget`` as one
    value per hour (a scalar is broadcast); ``mode="daily"`` places a single
    total over all (bus, hour) entries, earlier hours winning ties after the
    bus index. Entries where ``exclude`` is true get no response.
    """
    signal = np.asarray(signal, dtype=float)
    if signal.ndim == 1:
        signal = signal[:, None]
    caps = np.broadcast_to(_per_bus(caps, float, signal.shape), signal.shape).copy()
    if np.any(caps < 0) or not np.all(np.isfinite(caps)):
        raise BudgetError("caps must be finite and >= 0")
    if exclude is not None:
        caps[np.broadcast_to(_per_bus(exclude, bool, signal.shape), signal.shape)] = 0.0
    if not np.all(np.isfinite(signal)):
        raise ValueError("signal contains non-finite values")
    nb, T = signal.shape
    response = np.zeros_like(signal)
    if mode == "hourly":
        budget = np.broadcast_to(np.asarray(budget, dtype=float), (T,)).copy()
        for t in range(T):
            response[:, t] = _greedy(signal[:, t], budget[t], caps[:, t], f"hour {t + 1}")
    elif mode == "daily":
        b = float(np.asarray(budget, dtype=float).reshape(-1)[0]) if np.ndim(budget) else float(budget)
        flat = _greedy(signal.T.reshape(-1), b, caps.T.reshape(-1), "day")
        response = flat.reshape(T, nb).T.copy()
        budget = np.array([b])
    else:
        raise ValueError(f"unknown budget mode {mode!r}")
    return DrPlan(signal=name, response=response, budget=budget, caps=caps, reactive=reactive, mode=mode)


def _per_bus(values, dtype, shape) -> np.ndarray:
    # a vector with one entry per bus applies to every hour
    arr = np.asarray(values, dtype=dtype)
    if arr.ndim == 1 and arr.size == shape[0]:
        arr = arr[:, None]
    return arr


def _greedy(values: np.ndarray, budget: float, caps: np.ndarray, where: str) -> np.ndarray:
    if budget < 0 or not math.isfinite(budget):
        raise BudgetError(f"{where}: budget must be finite and >= 0")
    room = float(caps.sum())
    if budget > room * (1 + 1e-12) + 1e-12:
        raise BudgetError(f"{where}: budget {budget:.6g} exceeds total cap {room:.6g}")
    out = np.zeros_like(values)
    left = budget
    for i in np.lexsort((np.arange(values.size), -values)):
        if left <= 0:
            break
        take = min(caps[i], left)
        out[i] = take
        left -= take
    if left > 0:
        # rounding remainder when the budget equals the cap total
        out[np.argmax(caps - out)] += left
    return out


def hourly_budget(scenario: ScenarioSet, pct: float = 1.0, reactive: bool = False) -> float:
    """``pct`` percent of the peak total (active or reactive) demand."""
    if pct < 0:
        raise BudgetError("budget percentage must be >= 0")
    demand = scenario.q_demand if reactive else scenario.p_demand
    return pct / 100.0 * peak(demand)


def demand_caps(scenario: ScenarioSet, reactive: bool = False) -> np.ndarray:
    """Per-bus cap: a bus cannot shed more than its own demand (negative demand gives no room)."""
    demand = scenario.q_demand if reactive else scenario.p_demand
    return np.maximum(np.asarray(demand, dtype=float), 0.0)


def reduced_scenario(scenario: ScenarioSet, plan: DrPlan) -> ScenarioSet:
    demand = scenario.q_demand if plan.reactive else scenario.p_demand
    new = demand - plan.response
    if np.any(new < -1e-9 * max(1.0, float(np.abs(demand).max(initial=0.0)))):
        raise BudgetError("plan reduces demand below zero")
    new = np.where(np.abs(new) < 1e-12, 0.0, new)
    label = f"{scenario.label}-dr-{plan.signal}" if plan.signal else scenario.label
    if plan.reactive:
        return scenario.with_demand(q_demand=new, label=label)
    return scenario.with_demand(p_demand=new, label=label)


def apply_and_redispatch(case: NetworkCase, scenario: ScenarioSet, plan: DrPlan,
                         settings: SolverSettings | None = None, model: EmissionModel | None = None,
                         warm_start: SolutionBundle | None = None):
    """Shed demand per ``plan`` and re-solve the full dispatch.

    Returns ``(DispatchSolution, e_sum)`` with ``e_sum`` in tCO2.
    """
    model = model or EmissionModel.from_case(case)
    reduced = reduced_scenario(scenario, plan)
    prog = build_program(case, reduced)
    sol, _ = solve_dispatch(prog, settings, reduced.label, warm_start=warm_start)
    return sol, model.total(sol)


def enhance_metric(initial: float, post_dlme: float, post_baseline: float) -> float:
    """Extra alleviation of the DLME-guided plan over a baseline, in percent.

    ``(initial - post_dlme) / (initial - post_baseline) - 1``; nan (with a
    warning) when the baseline achieves no reduction.
    """
    base = initial - post_baseline
    if abs(base) <= 1e-12 * max(1.0, abs(initial)):
        warnings.warn("baseline reduction is zero; Enhance is undefined", UndefinedEnhanceWarning, stacklevel=2)
        return float("nan")
    return 100.0 * ((initial - post_dlme) / base - 1.0)


@dataclass
class AlleviationReport:
    """Emission before and after DR for each guiding signal (tCO2)."""

    case: str
    scenario: str
    reactive: bool
    budget: float
    initial: float
    post: dict = field(default_factory=dict)
    enhance: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)

    @property
    def reduction(self) -> dict:
        return {k: self.initial - v for k, v in self.post.items()}

    def as_dict(self) -> dict:
        return {
            "case": self.case,
            "scenario": self.scenario,
            "reactive": self.reactive,
            "budget": self.budget,
            "initial": self.initial,
            "post": dict(self.post),
            "reduction": self.reduction,
            "enhance_pct": dict(self.enhance),
            "solver": dict(self.solver),
        }


def evaluate(case: NetworkCase, scenario: ScenarioSet, signals: dict, budget_pct: float = 1.0,
             reactive: bool = False, exclude: dict | None = None, settings: SolverSettings | None = None,
             model: EmissionModel | None = None, base: tuple | None = None, lead: str | None = None,
             mode: str = "hourly") -> AlleviationReport:
    """Allocate, re-dispatch and score every signal in ``signals`` (name -> bus x hour).

    ``base`` may pass the ``(DispatchSolution, SolutionBundle)`` of the
    undisturbed dispatch; its bundle warm-starts every re-solve. Enhance is
    reported for the ``lead`` signal (``dlme`` or ``dlme_q`` by default)
    against each other signal.
    """
    model = model or EmissionModel.from_case(case)
    exclude = exclude or {}
    if base is None:
        base = solve_dispatch(build_program(case, scenario), settings, scenario.label)
    sol0, bundle0 = base
    initial = model.total(sol0)
    per_hour = hourly_budget(scenario, budget_pct, reactive)
    budget = per_hour * (case.horizon if mode == "daily" else 1)
    caps = demand_caps(scenario, reactive)
    report = AlleviationReport(case.name, scenario.label, reactive, per_hour, initial)
    for name in sorted(signals):
        plan = allocate_dr(signals[name], budget, caps, exclude.get(name), name=name, reactive=reactive, mode=mode)
        if plan.total() == 0.0:
            report.post[name] = initial
            continue
        sol, e = apply_and_redispatch(case, scenario, plan, settings, model, warm_start=bundle0)
        report.post[name] = e
        report.solver[name] = {"status": sol.status, "residual": sol.residual}
    lead = lead or ("dlme_q" if reactive else "dlme")
    if lead in report.post:
        for name, value in report.post.items():
            if name != lead:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", UndefinedEnhanceWarning)
                    report.enhance[name] = enhance_metric(initial, report.post[lead], value)
    return report
