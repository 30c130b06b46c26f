"""Radial distribution network, DER fleet and load/PV scenarios.

Case files are JSON; scenario files are long-format CSV. Both are described
in ``data/case_schema.json`` shipped with the package. Network quantities
(r, x, current limits) are per-unit on the case base; powers in MW/MVar,
energies in MWh, emission rates in tCO2/MWh.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class CaseError(Exception):
    """Base class for case and scenario problems."""


class CaseParseError(CaseError):
    """The case or scenario file could not be read or is malformed."""


class CaseValidationError(CaseError):
    """A case invariant is violated."""


DEFAULT_EMISSION_RATES = {"coal": 0.875, "gas": 0.520}


@dataclass(frozen=True)
class Bus:
    id: int
    v_min: float = 0.95
    v_max: float = 1.05
    p_demand_mw: float = 0.0
    q_demand_mvar: float = 0.0
    is_substation: bool = False


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    i_max: float
    i_min: float = 0.0
    closed: bool = True


@dataclass(frozen=True)
class InverterDG:
    id: str
    bus: int
    capacity_mw: float
    kappa_min: float = 0.9
    p_min_mw: float = 0.0
    price_p: float = 0.0
    price_q: float | None = None


@dataclass(frozen=True)
class SynchronousDG:
    id: str
    bus: int
    p_min_mw: float
    p_max_mw: float
    q_min_mvar: float
    q_max_mvar: float
    ramp_down_mw: float
    ramp_up_mw: float
    emission_rate: float
    price_p: float = 0.0
    price_q: float | None = None
    p_init_mw: float | None = None
    fuel: str | None = None

    @property
    def initial_output(self) -> float:
        if self.p_init_mw is not None:
            return self.p_init_mw
        return 0.5 * (self.p_min_mw + self.p_max_mw)


@dataclass(frozen=True)
class EnergyStorage:
    id: str
    bus: int
    p_cha_max_mw: float
    p_dis_max_mw: float
    e_min_mwh: float
    e_max_mwh: float
    e_init_mwh: float
    eta_cha: float = 0.90
    eta_dis: float = 0.92
    price: float = 0.1
    discharge_emission_rate: float | None = None


@dataclass(frozen=True)
class EvAggregator:
    id: str
    bus: int
    p_lb_mw: tuple
    p_ub_mw: tuple
    e_lb_mwh: tuple
    e_ub_mwh: tuple


@dataclass(frozen=True)
class Substation:
    bus: int
    price_p: tuple
    price_q: tuple | None = None
    emission_rate: float = DEFAULT_EMISSION_RATES["coal"]
    p_max_mw: float = 1e3
    q_max_mvar: float = 1e3
    p_min_mw: float = 0.0
    v_set: float | None = 1.0

    def reactive_prices(self) -> np.ndarray:
        if self.price_q is not None:
            return np.asarray(self.price_q, dtype=float)
        return 0.1 * np.asarray(self.price_p, dtype=float)


@dataclass(frozen=True)
class CaseOptions:
    terminal_storage: bool = True
    reactive_cost: str = "signed"


@dataclass(frozen=True)
class NetworkCase:
    name: str
    base_mva: float
    base_kv: float
    dt_hours: float
    horizon: int
    buses: tuple
    branches: tuple
    substation: Substation
    inverter_dg: tuple = ()
    sync_dg: tuple = ()
    storage: tuple = ()
    ev: tuple = ()
    emission_rates: tuple = tuple(sorted(DEFAULT_EMISSION_RATES.items()))
    options: CaseOptions = field(default_factory=CaseOptions)
    notes: str = ""

    def __post_init__(self):
        validate_case(self)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def closed_branches(self) -> tuple:
        return tuple(br for br in self.branches if br.closed)

    def bus_position(self) -> dict:
        return {b.id: k for k, b in enumerate(self.buses)}

    @property
    def substation_bus(self) -> Bus:
        return next(b for b in self.buses if b.is_substation)

    def rate(self, fuel: str) -> float:
        return dict(self.emission_rates)[fuel]

    def oriented_branches(self):
        """Closed branches as ``(branch_index, parent_pos, child_pos)`` ordered as in the case.

        Orientation is away from the substation.
        """
        pos = self.bus_position()
        order, parent = _tree_order(self)
        out = []
        for k, br in enumerate(self.closed_branches):
            i, j = pos[br.from_bus], pos[br.to_bus]
            if parent.get(j) == (i, k):
                out.append((k, i, j))
            else:
                out.append((k, j, i))
        return out


def _tree_order(case: NetworkCase):
    """Depth-first order from the substation over closed branches."""
    pos = case.bus_position()
    adj: dict[int, list] = {k: [] for k in range(len(case.buses))}
    for k, br in enumerate(case.closed_branches):
        i, j = pos[br.from_bus], pos[br.to_bus]
        adj[i].append((j, k))
        adj[j].append((i, k))
    root = pos[case.substation_bus.id]
    order = []
    parent = {root: None}
    stack = [root]
    while stack:
        u = stack.pop()
        order.append(u)
        for w, k in sorted(adj[u], reverse=True):
            if w not in parent:
                parent[w] = (u, k)
                stack.append(w)
    return order, parent


def traversal_order(case: NetworkCase) -> list:
    """Bus positions in depth-first order from the substation."""
    return _tree_order(case)[0]


def validate_case(case: NetworkCase) -> None:
    T = case.horizon
    if T < 1:
        raise CaseValidationError("horizon must be >= 1")
    if case.base_mva <= 0 or case.dt_hours <= 0:
        raise CaseValidationError("base_mva and dt_hours must be positive")
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        raise CaseValidationError("duplicate bus ids")
    subs = [b for b in case.buses if b.is_substation]
    if len(subs) != 1:
        raise CaseValidationError(f"exactly one substation bus required, found {len(subs)}")
    if case.substation.bus != subs[0].id:
        raise CaseValidationError("substation section does not point at the substation bus")
    for b in case.buses:
        if not (0 < b.v_min < b.v_max):
            raise CaseValidationError(f"bus {b.id}: need 0 < v_min < v_max")
        if b.p_demand_mw < 0 or b.q_demand_mvar < 0:
            raise CaseValidationError(f"bus {b.id}: negative base demand")
    known = set(ids)
    for k, br in enumerate(case.branches):
        if br.from_bus not in known or br.to_bus not in known:
            raise CaseValidationError(f"branch {k}: unknown bus")
        if br.from_bus == br.to_bus:
            raise CaseValidationError(f"branch {k}: self loop")
        if br.r < 0 or br.x < 0 or br.r + br.x <= 0:
            raise CaseValidationError(f"branch {k}: need r >= 0, x >= 0, r + x > 0")
        if br.i_max <= 0 or br.i_min < 0 or br.i_min > br.i_max:
            raise CaseValidationError(f"branch {k}: need 0 <= i_min <= i_max, i_max > 0")
    closed = case.closed_branches
    if len(closed) != len(case.buses) - 1:
        raise CaseValidationError(
            f"non-radial: {len(closed)} closed branches for {len(case.buses)} buses"
        )
    order, _ = _tree_order(case)
    if len(order) != len(case.buses):
        raise CaseValidationError("non-radial: closed branches do not connect every bus")

    sub = case.substation
    if len(sub.price_p) != T or (sub.price_q is not None and len(sub.price_q) != T):
        raise CaseValidationError("substation prices must have one entry per hour")
    if sub.emission_rate < 0:
        raise CaseValidationError("substation emission_rate must be >= 0")
    if sub.p_min_mw > sub.p_max_mw:
        raise CaseValidationError("substation: p_min > p_max")
    for u in case.inverter_dg:
        _known_bus(u, known)
        if not (0 < u.kappa_min <= 1):
            raise CaseValidationError(f"inverter {u.id}: kappa_min must lie in (0, 1]")
        if u.capacity_mw < 0 or u.p_min_mw < 0 or u.p_min_mw > u.capacity_mw:
            raise CaseValidationError(f"inverter {u.id}: need 0 <= p_min <= capacity")
    for g in case.sync_dg:
        _known_bus(g, known)
        if g.p_min_mw > g.p_max_mw:
            raise CaseValidationError(f"sync DG {g.id}: p_min > p_max (lower > upper)")
        if g.q_min_mvar > g.q_max_mvar:
            raise CaseValidationError(f"sync DG {g.id}: q_min > q_max (lower > upper)")
        if g.ramp_down_mw > g.ramp_up_mw:
            raise CaseValidationError(f"sync DG {g.id}: ramp_down > ramp_up")
        if g.emission_rate < 0:
            raise CaseValidationError(f"sync DG {g.id}: negative emission rate")
    for e in case.storage:
        _known_bus(e, known)
        if not (0 < e.eta_cha <= 1 and 0 < e.eta_dis <= 1):
            raise CaseValidationError(f"storage {e.id}: efficiencies must lie in (0, 1]")
        if not (e.e_min_mwh <= e.e_init_mwh <= e.e_max_mwh):
            raise CaseValidationError(f"storage {e.id}: need e_min <= e_init <= e_max")
        if e.p_cha_max_mw < 0 or e.p_dis_max_mw < 0:
            raise CaseValidationError(f"storage {e.id}: negative power limit")
    for v in case.ev:
        _known_bus(v, known)
        arrays = [np.asarray(a, float) for a in (v.p_lb_mw, v.p_ub_mw, v.e_lb_mwh, v.e_ub_mwh)]
        if any(a.shape != (T,) for a in arrays):
            raise CaseValidationError(f"ev {v.id}: bounds must have one entry per hour")
        plb, pub, elb, eub = arrays
        if np.any(plb > pub) or np.any(elb > eub):
            raise CaseValidationError(f"ev {v.id}: lower bound exceeds upper bound")
        if np.any(np.diff(elb) < 0) or np.any(np.diff(eub) < 0):
            raise CaseValidationError(f"ev {v.id}: cumulative energy bounds must be non-decreasing")
        dt = case.dt_hours
        if np.any(np.cumsum(plb) * dt > eub + 1e-9) or np.any(np.cumsum(pub) * dt < elb - 1e-9):
            raise CaseValidationError(f"ev {v.id}: power and energy bounds are inconsistent")


def _known_bus(unit, known):
    if unit.bus not in known:
        raise CaseValidationError(f"{type(unit).__name__} {unit.id}: unknown bus {unit.bus}")


# ---------------------------------------------------------------------------
# case (de)serialisation


def _req(d: dict, key: str, where: str):
    try:
        return d[key]
    except KeyError:
        raise CaseParseError(f"{where}: missing field {key!r}") from None


def _num_tuple(values, where: str) -> tuple:
    try:
        return tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise CaseParseError(f"{where}: expected a list of numbers") from None


def case_from_dict(data: dict) -> NetworkCase:
    try:
        return _case_from_dict(data)
    except CaseError:
        raise
    except (TypeError, ValueError, AttributeError) as exc:
        raise CaseParseError(f"malformed case: {exc}") from exc


def _case_from_dict(data: dict) -> NetworkCase:
    base = _req(data, "base", "case")
    horizon = int(_req(base, "horizon", "base"))
    rates = dict(DEFAULT_EMISSION_RATES)
    rates.update({k: float(v) for k, v in data.get("emission_rates", {}).items()})

    buses = tuple(
        Bus(
            id=int(_req(b, "id", "bus")),
            v_min=float(b.get("v_min", 0.95)),
            v_max=float(b.get("v_max", 1.05)),
            p_demand_mw=float(b.get("p_demand_mw", 0.0)),
            q_demand_mvar=float(b.get("q_demand_mvar", 0.0)),
            is_substation=bool(b.get("is_substation", False)),
        )
        for b in _req(data, "buses", "case")
    )
    branches = []
    for br in data.get("branches", []):
        status = br.get("status", "closed")
        if status not in ("closed", "open"):
            raise CaseParseError(f"branch status must be 'closed' or 'open', got {status!r}")
        branches.append(
            Branch(
                from_bus=int(_req(br, "from", "branch")),
                to_bus=int(_req(br, "to", "branch")),
                r=float(_req(br, "r", "branch")),
                x=float(_req(br, "x", "branch")),
                i_max=float(_req(br, "i_max", "branch")),
                i_min=float(br.get("i_min", 0.0)),
                closed=status == "closed",
            )
        )

    prices = data.get("prices", {})
    sub = _req(data, "substation", "case")
    sub_rate = sub.get("emission_rate")
    if sub_rate is None:
        sub_rate = rates[sub.get("fuel", "coal")]
    price_p = _num_tuple(_req(prices, "substation_p", "prices"), "prices.substation_p")
    price_q = prices.get("substation_q")
    price_q = None if price_q is None else _num_tuple(price_q, "prices.substation_q")
    substation = Substation(
        bus=int(_req(sub, "bus", "substation")),
        price_p=price_p,
        price_q=price_q,
        emission_rate=float(sub_rate),
        p_max_mw=float(sub.get("p_max_mw", 1e3)),
        q_max_mvar=float(sub.get("q_max_mvar", 1e3)),
        p_min_mw=float(sub.get("p_min_mw", 0.0)),
        v_set=None if sub.get("v_set", 1.0) is None else float(sub.get("v_set", 1.0)),
    )

    inverters = tuple(
        InverterDG(
            id=str(_req(u, "id", "inverter_dg")),
            bus=int(_req(u, "bus", "inverter_dg")),
            capacity_mw=float(_req(u, "capacity_mw", "inverter_dg")),
            kappa_min=float(u.get("kappa_min", 0.9)),
            p_min_mw=float(u.get("p_min_mw", 0.0)),
            price_p=float(u.get("price_p", 0.0)),
            price_q=None if u.get("price_q") is None else float(u["price_q"]),
        )
        for u in data.get("inverter_dg", [])
    )
    syncs = []
    for g in data.get("sync_dg", []):
        rate = g.get("emission_rate")
        fuel = g.get("fuel")
        if rate is None:
            if fuel is None:
                raise CaseParseError(f"sync DG {g.get('id')}: give 'emission_rate' or 'fuel'")
            if fuel not in rates:
                raise CaseParseError(f"sync DG {g.get('id')}: unknown fuel {fuel!r}")
            rate = rates[fuel]
        syncs.append(
            SynchronousDG(
                id=str(_req(g, "id", "sync_dg")),
                bus=int(_req(g, "bus", "sync_dg")),
                p_min_mw=float(_req(g, "p_min_mw", "sync_dg")),
                p_max_mw=float(_req(g, "p_max_mw", "sync_dg")),
                q_min_mvar=float(_req(g, "q_min_mvar", "sync_dg")),
                q_max_mvar=float(_req(g, "q_max_mvar", "sync_dg")),
                ramp_down_mw=float(_req(g, "ramp_down_mw", "sync_dg")),
                ramp_up_mw=float(_req(g, "ramp_up_mw", "sync_dg")),
                emission_rate=float(rate),
                price_p=float(g.get("price_p", 0.0)),
                price_q=None if g.get("price_q") is None else float(g["price_q"]),
                p_init_mw=None if g.get("p_init_mw") is None else float(g["p_init_mw"]),
                fuel=fuel,
            )
        )
    storage = tuple(
        EnergyStorage(
            id=str(_req(e, "id", "storage")),
            bus=int(_req(e, "bus", "storage")),
            p_cha_max_mw=float(_req(e, "p_cha_max_mw", "storage")),
            p_dis_max_mw=float(_req(e, "p_dis_max_mw", "storage")),
            e_min_mwh=float(_req(e, "e_min_mwh", "storage")),
            e_max_mwh=float(_req(e, "e_max_mwh", "storage")),
            e_init_mwh=float(_req(e, "e_init_mwh", "storage")),
            eta_cha=float(e.get("eta_cha", 0.90)),
            eta_dis=float(e.get("eta_dis", 0.92)),
            price=float(e.get("price", 0.1)),
            discharge_emission_rate=(
                None if e.get("discharge_emission_rate") is None else float(e["discharge_emission_rate"])
            ),
        )
        for e in data.get("storage", [])
    )
    evs = tuple(
        EvAggregator(
            id=str(_req(v, "id", "ev")),
            bus=int(_req(v, "bus", "ev")),
            p_lb_mw=_num_tuple(v.get("p_lb_mw", [0.0] * horizon), "ev.p_lb_mw"),
            p_ub_mw=_num_tuple(_req(v, "p_ub_mw", "ev"), "ev.p_ub_mw"),
            e_lb_mwh=_num_tuple(_req(v, "e_lb_mwh", "ev"), "ev.e_lb_mwh"),
            e_ub_mwh=_num_tuple(_req(v, "e_ub_mwh", "ev"), "ev.e_ub_mwh"),
        )
        for v in data.get("ev", [])
    )
    opts = data.get("options", {})
    options = CaseOptions(
        terminal_storage=bool(opts.get("terminal_storage", True)),
        reactive_cost=str(opts.get("reactive_cost", "signed")),
    )
    if options.reactive_cost not in ("signed", "magnitude"):
        raise CaseParseError("options.reactive_cost must be 'signed' or 'magnitude'")
    return NetworkCase(
        name=str(data.get("name", "case")),
        base_mva=float(_req(base, "mva", "base")),
        base_kv=float(base.get("kv", 12.66)),
        dt_hours=float(base.get("dt_hours", 1.0)),
        horizon=horizon,
        buses=buses,
        branches=tuple(branches),
        substation=substation,
        inverter_dg=inverters,
        sync_dg=tuple(syncs),
        storage=storage,
        ev=evs,
        emission_rates=tuple(sorted(rates.items())),
        options=options,
        notes=str(data.get("notes", "")),
    )


def case_to_dict(case: NetworkCase) -> dict:
    sub = case.substation
    return {
        "name": case.name,
        "notes": case.notes,
        "base": {"mva": case.base_mva, "kv": case.base_kv, "dt_hours": case.dt_hours, "horizon": case.horizon},
        "buses": [
            {
                "id": b.id,
                "v_min": b.v_min,
                "v_max": b.v_max,
                "p_demand_mw": b.p_demand_mw,
                "q_demand_mvar": b.q_demand_mvar,
                "is_substation": b.is_substation,
            }
            for b in case.buses
        ],
        "branches": [
            {
                "from": br.from_bus,
                "to": br.to_bus,
                "r": br.r,
                "x": br.x,
                "i_max": br.i_max,
                "i_min": br.i_min,
                "status": "closed" if br.closed else "open",
            }
            for br in case.branches
        ],
        "inverter_dg": [
            {
                "id": u.id,
                "bus": u.bus,
                "capacity_mw": u.capacity_mw,
                "kappa_min": u.kappa_min,
                "p_min_mw": u.p_min_mw,
                "price_p": u.price_p,
                "price_q": u.price_q,
            }
            for u in case.inverter_dg
        ],
        "sync_dg": [
            {
                "id": g.id,
                "bus": g.bus,
                "p_min_mw": g.p_min_mw,
                "p_max_mw": g.p_max_mw,
                "q_min_mvar": g.q_min_mvar,
                "q_max_mvar": g.q_max_mvar,
                "ramp_down_mw": g.ramp_down_mw,
                "ramp_up_mw": g.ramp_up_mw,
                "emission_rate": g.emission_rate,
                "fuel": g.fuel,
                "price_p": g.price_p,
                "price_q": g.price_q,
                "p_init_mw": g.p_init_mw,
            }
            for g in case.sync_dg
        ],
        "storage": [
            {
                "id": e.id,
                "bus": e.bus,
                "p_cha_max_mw": e.p_cha_max_mw,
                "p_dis_max_mw": e.p_dis_max_mw,
                "e_min_mwh": e.e_min_mwh,
                "e_max_mwh": e.e_max_mwh,
                "e_init_mwh": e.e_init_mwh,
                "eta_cha": e.eta_cha,
                "eta_dis": e.eta_dis,
                "price": e.price,
                "discharge_emission_rate": e.discharge_emission_rate,
            }
            for e in case.storage
        ],
        "ev": [
            {
                "id": v.id,
                "bus": v.bus,
                "p_lb_mw": list(v.p_lb_mw),
                "p_ub_mw": list(v.p_ub_mw),
                "e_lb_mwh": list(v.e_lb_mwh),
                "e_ub_mwh": list(v.e_ub_mwh),
            }
            for v in case.ev
        ],
        "substation": {
            "bus": sub.bus,
            "emission_rate": sub.emission_rate,
            "p_max_mw": sub.p_max_mw,
            "q_max_mvar": sub.q_max_mvar,
            "p_min_mw": sub.p_min_mw,
            "v_set": sub.v_set,
        },
        "prices": {
            "substation_p": list(sub.price_p),
            "substation_q": None if sub.price_q is None else list(sub.price_q),
        },
        "emission_rates": dict(case.emission_rates),
        "options": {"terminal_storage": case.options.terminal_storage, "reactive_cost": case.options.reactive_cost},
    }


def load_case(path) -> NetworkCase:
    """Read and validate a JSON case file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CaseParseError(f"cannot read case file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise CaseParseError(f"{path}: top level must be an object")
    return case_from_dict(data)


def save_case(case: NetworkCase, path) -> None:
    Path(path).write_text(json.dumps(case_to_dict(case), indent=2) + "\n")


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """Hourly loads (bus x T, MW/MVar) and PV availability (unit x T, in [0, 1])."""

    label: str
    p_demand: np.ndarray
    q_demand: np.ndarray
    pv_availability: np.ndarray

    def __post_init__(self):
        for name in ("p_demand", "q_demand", "pv_availability"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim != 2:
                raise CaseValidationError(f"scenario {self.label}: {name} must be 2-D")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.p_demand.shape != self.q_demand.shape:
            raise CaseValidationError(f"scenario {self.label}: p/q demand shapes differ")
        if self.pv_availability.shape[1] != self.horizon and self.pv_availability.shape[0] > 0:
            raise CaseValidationError(f"scenario {self.label}: PV horizon differs from load horizon")
        if np.any(self.p_demand < 0) or np.any(self.q_demand < 0):
            raise CaseValidationError(f"scenario {self.label}: demands must be >= 0")
        if np.any(self.pv_availability < 0) or np.any(self.pv_availability > 1):
            raise CaseValidationError(f"scenario {self.label}: PV availability must lie in [0, 1]")

    @property
    def horizon(self) -> int:
        return self.p_demand.shape[1]

    def with_demand(self, p_demand=None, q_demand=None, label=None) -> "ScenarioSet":
        return ScenarioSet(
            label=self.label if label is None else label,
            p_demand=self.p_demand if p_demand is None else p_demand,
            q_demand=self.q_demand if q_demand is None else q_demand,
            pv_availability=self.pv_availability,
        )

    def features(self) -> np.ndarray:
        return np.concatenate([self.p_demand.ravel(), self.q_demand.ravel(), self.pv_availability.ravel()])

    def __eq__(self, other):
        if not isinstance(other, ScenarioSet):
            return NotImplemented
        return (
            self.label == other.label
            and np.array_equal(self.p_demand, other.p_demand)
            and np.array_equal(self.q_demand, other.q_demand)
            and np.array_equal(self.pv_availability, other.pv_availability)
        )

    __hash__ = None


def check_scenario(case: NetworkCase, scenario: ScenarioSet) -> None:
    """Raise :class:`CaseValidationError` if the scenario does not fit the case."""
    T = case.horizon
    if scenario.p_demand.shape != (case.n_bus, T):
        raise CaseValidationError(
            f"scenario {scenario.label}: demand shape {scenario.p_demand.shape} != ({case.n_bus}, {T})"
        )
    if scenario.pv_availability.shape != (len(case.inverter_dg), T) and not (
        len(case.inverter_dg) == 0 and scenario.pv_availability.size == 0
    ):
        raise CaseValidationError(
            f"scenario {scenario.label}: PV shape {scenario.pv_availability.shape} "
            f"!= ({len(case.inverter_dg)}, {T})"
        )


def base_scenario(case: NetworkCase, label: str = "base", pv: float = 0.0) -> ScenarioSet:
    """Flat profile at the buses' base demand with a constant PV availability."""
    T = case.horizon
    p = np.repeat([[b.p_demand_mw] for b in case.buses], T, axis=1)
    q = np.repeat([[b.q_demand_mvar] for b in case.buses], T, axis=1)
    a = np.full((len(case.inverter_dg), T), float(pv))
    return ScenarioSet(label, p, q, a)


SCENARIO_COLUMNS = ("scenario", "entity_id", "hour", "p_mw", "q_mvar", "availability")


def write_scenarios(scenarios, case: NetworkCase, path) -> None:
    """Write :func:`scenarios_csv` to ``path``."""
    with open(path, "w", newline="") as fh:
        fh.write(scenarios_csv(scenarios, case))


def scenarios_csv(scenarios, case: NetworkCase) -> str:
    """Scenarios as long-format CSV text (hours are 1-based)."""
    rows = []
    for sc in scenarios:
        for k, b in enumerate(case.buses):
            for t in range(sc.horizon):
                rows.append(
                    [sc.label, f"bus:{b.id}", t + 1, _fmt(sc.p_demand[k, t]), _fmt(sc.q_demand[k, t]), ""]
                )
        for k, u in enumerate(case.inverter_dg):
            for t in range(sc.horizon):
                rows.append([sc.label, f"pv:{u.id}", t + 1, "", "", _fmt(sc.pv_availability[k, t])])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCENARIO_COLUMNS)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(v: float) -> str:
    return repr(float(v))


def load_scenarios(path, case: NetworkCase) -> list:
    """Read a scenario CSV; returns one :class:`ScenarioSet` per ``scenario`` label.

    Files without a ``scenario`` column hold a single scenario named after the
    file stem. Entities missing from the file default to zero demand / zero
    PV availability.
    """
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise CaseParseError(f"cannot read scenario file {path}: {exc}") from exc
    T = case.horizon
    pos = case.bus_position()
    pv_pos = {u.id: k for k, u in enumerate(case.inverter_dg)}
    data: dict[str, list] = {}
    with fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        if not {"entity_id", "hour"} <= cols:
            raise CaseParseError(f"{path}: need columns entity_id and hour")
        for line, row in enumerate(reader, start=2):
            label = row.get("scenario") or path.stem
            if label not in data:
                data[label] = [
                    np.zeros((case.n_bus, T)),
                    np.zeros((case.n_bus, T)),
                    np.zeros((len(case.inverter_dg), T)),
                ]
            p, q, a = data[label]
            try:
                hour = int(row["hour"]) - 1
                kind, _, ident = row["entity_id"].partition(":")
                if not 0 <= hour < T:
                    raise CaseParseError(f"{path}:{line}: hour {hour + 1} outside 1..{T}")
                if kind == "bus":
                    k = pos[int(ident)]
                    p[k, hour] = float(row.get("p_mw") or 0.0)
                    q[k, hour] = float(row.get("q_mvar") or 0.0)
                elif kind == "pv":
                    a[pv_pos[ident], hour] = float(row.get("availability") or 0.0)
                else:
                    raise CaseParseError(f"{path}:{line}: unknown entity {row['entity_id']!r}")
            except (KeyError, ValueError) as exc:
                raise CaseParseError(f"{path}:{line}: bad row ({exc})") from exc
    if not data:
        raise CaseParseError(f"{path}: no scenario rows")
    out = [ScenarioSet(label, *arrs) for label, arrs in data.items()]
    for sc in out:
        check_scenario(case, sc)
    return out


def read_case_and_scenarios(case_path, scenario_paths) -> tuple:
    case = load_case(case_path)
    scenarios = []
    for p in scenario_paths:
        scenarios.extend(load_scenarios(p, case))
    return case, scenarios


def peak(values: np.ndarray) -> float:
    """Largest hourly system total of a bus x T matrix."""
    if values.size == 0:
        return 0.0
    return float(np.max(values.sum(axis=0)))

