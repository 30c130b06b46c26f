"""Command-line front end.

Examples::

    dlme solve --case tutorial6 --out out/tutorial --dump-program
    dlme signals --case ieee33 --signals dlme,dlae,rodm --fd-check 10 --plots
    dlme dr --case ieee33 --budget-pct 1
    dlme cluster --case ieee33 --scenarios pool.csv -k 4 --seed 7
    dlme audit --case tutorial6 --fd-check 100
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .baselines import MeritOrderError, carbon_emission_flow, compute_rodm
from .clustering import ClusteringError, cluster_scenarios, sse_curve
from .diffcone import SingularSystemError
from .dr import BudgetError, evaluate
from .emissions import EmissionModel, compute_dlme, fd_audit, sample_entries
from .grid import (
    CaseParseError,
    CaseValidationError,
    base_scenario,
    load_case,
    load_scenarios,
    scenarios_csv,
)
from .hsde import SolverError, SolverSettings
from .reports import (
    SIGNAL_TYPES,
    atomic_write,
    dispatch_csv,
    hourly_summary,
    report_csv,
    summary_svg,
    write_json,
    write_matrix,
)
from .scheduler import build_program, constraint_violations, program_text, solve_dispatch

log = logging.getLogger("dlme")

EXIT_OK = 0
EXIT_AUDIT = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_VALIDATION = 4
EXIT_SOLVER = 5
EXIT_INFEASIBLE = 6

SHIPPED = {
    "tutorial6": ("tutorial6.json", "tutorial6_scenarios.csv"),
    "ieee33": ("ieee33.json", "ieee33_typical.csv"),
}
SHIPPED_POOL = {"ieee33": "ieee33_pool.csv"}

UNITS = {"dlme": "tCO2/MWh", "dlme_q": "tCO2/MVArh", "dlae": "tCO2/MWh", "rodm": "tCO2/MWh"}


@dataclass
class RunConfig:
    case: str
    scenarios: list = field(default_factory=list)
    out: Path = Path("out")
    seed: int = 0
    settings: SolverSettings = field(default_factory=SolverSettings)
    signals: tuple = SIGNAL_TYPES
    budget_pct: float = 1.0
    budget_mode: str = "hourly"
    reactive: bool = False
    fd_check: int = 0
    exclude_kinks: bool = True
    dump_program: bool = False
    plots: bool = False
    clusters: int = 4


def data_path(name: str) -> Path:
    return Path(str(resources.files("dlme") / "data" / name))


def resolve_case(spec: str) -> Path:
    """A file path, or the name of a shipped case."""
    p = Path(spec)
    if p.exists() or spec not in SHIPPED:
        return p
    return data_path(SHIPPED[spec][0])


def load_inputs(cfg: RunConfig, pool: bool = False):
    case = load_case(resolve_case(cfg.case))
    paths = [Path(s) for s in cfg.scenarios]
    if not paths:
        shipped = SHIPPED_POOL if pool else {k: v[1] for k, v in SHIPPED.items()}
        if cfg.case in shipped and not Path(cfg.case).exists():
            paths = [data_path(shipped[cfg.case])]
    scenarios = []
    for p in paths:
        scenarios.extend(load_scenarios(p, case))
    if not scenarios:
        if pool:
            raise CaseValidationError("cluster needs a scenario pool (--scenarios)")
        scenarios = [base_scenario(case)]
    labels = [s.label for s in scenarios]
    if len(set(labels)) != len(labels):
        raise CaseValidationError("scenario labels must be unique across --scenarios files")
    return case, scenarios


def _kkt(bundle) -> dict:
    return bundle.kkt.as_dict() if bundle.kkt else {}


def cmd_solve(cfg: RunConfig) -> int:
    case, scenarios = load_inputs(cfg)
    model = EmissionModel.from_case(case)
    for sc in scenarios:
        prog = build_program(case, sc)
        if cfg.dump_program:
            atomic_write(cfg.out / f"program_{sc.label}.txt", program_text(prog))
        sol, bundle = solve_dispatch(prog, cfg.settings, sc.label)
        atomic_write(cfg.out / f"dispatch_{sc.label}.csv", dispatch_csv(sol, case))
        diag = {
            "case": case.name,
            "scenario": sc.label,
            "status": sol.status,
            "objective": sol.objective,
            "emission_t": model.total(sol),
            "kkt": _kkt(bundle),
            "residual": sol.residual,
            "solver": bundle.info.as_dict(),
            "constraint_violations": constraint_violations(sol, case, sc),
        }
        write_json(cfg.out / f"diagnostics_{sc.label}.json", diag)
        print(f"{sc.label}: {sol.status}, emission {model.total(sol):.6g} t, objective {sol.objective:.6g}")
    return EXIT_OK


def _signal_matrices(case, sc, cfg, model, need_dlme: bool):
    out, dlme = {}, None
    if need_dlme:
        dlme = compute_dlme(case, sc, cfg.settings, model)
        out["dlme"] = dlme.active
        out["dlme_q"] = dlme.reactive
        base = (dlme.dispatch, dlme.bundle)
    else:
        base = solve_dispatch(build_program(case, sc), cfg.settings, sc.label)
    if "dlae" in cfg.signals:
        out["dlae"] = carbon_emission_flow(case, base[0], sc, model).node
    if "rodm" in cfg.signals:
        out["rodm"] = compute_rodm(case, sc, model)
    return out, dlme, base


def _audit_entries(dlme, case, sc, cfg, model, kinds):
    samples = []
    for k, which in enumerate(kinds):
        samples += sample_entries(dlme, cfg.fd_check, seed=cfg.seed + k, which=which)
    rows = fd_audit(dlme, case, sc, samples, cfg.settings, model=model)
    worst = max((r["abs_error"] for r in rows), default=0.0)
    return {
        "scenario": sc.label,
        "samples": len(rows),
        "failures": sum(not r["pass"] for r in rows),
        "max_abs_deviation": worst,
        "entries": rows,
    }


def cmd_signals(cfg: RunConfig) -> int:
    case, scenarios = load_inputs(cfg)
    model = EmissionModel.from_case(case)
    need_dlme = bool({"dlme", "dlme_q"} & set(cfg.signals)) or cfg.fd_check > 0
    combined = {"case": case.name, "signals": list(cfg.signals), "scenarios": {}}
    for sc in scenarios:
        mats, dlme, _ = _signal_matrices(case, sc, cfg, model, need_dlme)
        entry = {"matrices": {}, "summary": {}}
        for name in cfg.signals:
            write_matrix(cfg.out / f"{name}_{sc.label}.csv", mats[name], case)
            entry["matrices"][name] = mats[name]
            entry["summary"][name] = hourly_summary(mats[name])
            if cfg.plots:
                summary_svg(cfg.out / f"{name}_{sc.label}.svg", entry["summary"][name],
                            f"{name} {sc.label}", UNITS[name])
        if dlme is not None:
            entry["flags"] = {"dlme": dlme.active_flags, "dlme_q": dlme.reactive_flags}
            entry["kink_hours"] = list(dlme.kink_hours)
            entry["emission_t"] = dlme.emission
            entry["diagnostics"] = dlme.diagnostics
        if cfg.fd_check > 0:
            kinds = [w for s, w in (("dlme", "active"), ("dlme_q", "reactive")) if s in cfg.signals] or ["active"]
            audit = _audit_entries(dlme, case, sc, cfg, model, kinds)
            write_json(cfg.out / f"fd_audit_{sc.label}.json", audit)
            entry["fd_audit"] = {k: audit[k] for k in ("samples", "failures", "max_abs_deviation")}
            print(f"{sc.label}: fd audit {audit['samples'] - audit['failures']}/{audit['samples']} within "
                  f"tolerance, max deviation {audit['max_abs_deviation']:.3g}")
        combined["scenarios"][sc.label] = entry
        print(f"{sc.label}: wrote {', '.join(cfg.signals)}")
    write_json(cfg.out / "signals.json", combined)
    return EXIT_OK


def cmd_dr(cfg: RunConfig) -> int:
    case, scenarios = load_inputs(cfg)
    model = EmissionModel.from_case(case)
    if cfg.reactive:
        chosen = [s for s in cfg.signals if s == "dlme_q"] or ["dlme_q"]
    else:
        chosen = [s for s in cfg.signals if s != "dlme_q"]
    if not chosen:
        raise CaseValidationError("no active signal selected for demand response")
    run_cfg = RunConfig(**{**cfg.__dict__, "signals": tuple(s for s in chosen if s in ("dlae", "rodm"))})
    need_dlme = any(s.startswith("dlme") for s in chosen)
    reports, rows = [], []
    for sc in scenarios:
        mats, dlme, base = _signal_matrices(case, sc, run_cfg, model, need_dlme)
        exclude = {}
        if cfg.exclude_kinks and dlme is not None:
            exclude = {"dlme": dlme.active_flags, "dlme_q": dlme.reactive_flags}
        signals = {s: mats[s] for s in chosen}
        rep = evaluate(case, sc, signals, cfg.budget_pct, cfg.reactive, exclude, cfg.settings, model,
                       base=base, mode=cfg.budget_mode)
        reports.append(rep.as_dict())
        row = {"case": case.name, "scenario": sc.label, "budget": rep.budget, "initial": rep.initial}
        for s in chosen:
            row[f"post_{s}"] = rep.post[s]
            row[f"reduction_{s}"] = rep.reduction[s]
        for s, v in rep.enhance.items():
            row[f"enhance_{s}_pct"] = v
        rows.append(row)
        print(f"{sc.label}: initial {rep.initial:.6g} t, "
              + ", ".join(f"{s} -{rep.reduction[s]:.4g}" for s in chosen))
    columns = ["case", "scenario", "budget", "initial"]
    columns += [f"post_{s}" for s in chosen] + [f"reduction_{s}" for s in chosen]
    columns += sorted({k for r in rows for k in r if k.startswith("enhance_")})
    write_json(cfg.out / "dr_report.json", {"budget_pct": cfg.budget_pct, "reactive": cfg.reactive,
                                            "mode": cfg.budget_mode, "reports": reports})
    atomic_write(cfg.out / "dr_report.csv", report_csv(rows, columns))
    return EXIT_OK


def cmd_cluster(cfg: RunConfig) -> int:
    case, pool = load_inputs(cfg, pool=True)
    centroids, sse, sizes = cluster_scenarios(pool, cfg.clusters, cfg.seed)
    ks = range(1, min(10, len(pool)) + 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        curve = {}
        for k in ks:
            try:
                curve[k] = sse_curve(pool, [k], cfg.seed)[k]
            except ClusteringError:
                break
    atomic_write(cfg.out / "typical_days.csv", scenarios_csv(centroids, case))
    write_json(cfg.out / "cluster.json", {
        "pool_size": len(pool), "k": cfg.clusters, "seed": cfg.seed, "sse": sse, "sizes": sizes,
        "labels": [c.label for c in centroids], "elbow": [{"k": k, "sse": v} for k, v in curve.items()],
    })
    print(f"{len(pool)} days -> {cfg.clusters} typical days, sizes {sizes}, SSE {sse:.6g}")
    return EXIT_OK


def cmd_audit(cfg: RunConfig) -> int:
    case, scenarios = load_inputs(cfg)
    model = EmissionModel.from_case(case)
    n = cfg.fd_check if cfg.fd_check > 0 else 100
    audit_cfg = RunConfig(**{**cfg.__dict__, "fd_check": n})
    result = {"case": case.name, "scenarios": {}}
    ok = True
    for sc in scenarios:
        dlme = compute_dlme(case, sc, cfg.settings, model)
        fd = _audit_entries(dlme, case, sc, audit_cfg, model, ["active", "reactive"])
        cef = carbon_emission_flow(case, dlme.dispatch, sc, model)
        gap = float(np.max(np.abs(cef.audit()))) if case.horizon else 0.0
        lo = float(np.min(cef.node - cef.source_min[None, :]))
        hi = float(np.max(cef.node - cef.source_max[None, :]))
        kkt = _kkt(dlme.bundle)
        entry = {
            "kkt": kkt,
            "fd": fd,
            "cef_conservation_max_t": gap,
            "cef_bound_violation": max(-lo, hi, 0.0),
            "flagged_active": int(dlme.active_flags.sum()),
            "flagged_reactive": int(dlme.reactive_flags.sum()),
        }
        passed = (fd["failures"] == 0 and gap <= 1e-6 and entry["cef_bound_violation"] <= 1e-9
                  and max(kkt.values(), default=0.0) <= max(cfg.settings.kkt_tol, 1e-6))
        entry["pass"] = passed
        ok &= passed
        result["scenarios"][sc.label] = entry
        print(f"{sc.label}: fd {fd['samples'] - fd['failures']}/{fd['samples']}, cef gap {gap:.2e} t, "
              f"{'PASS' if passed else 'FAIL'}")
    result["pass"] = ok
    write_json(cfg.out / "audit.json", result)
    return EXIT_OK if ok else EXIT_AUDIT


COMMANDS = {"solve": cmd_solve, "signals": cmd_signals, "dr": cmd_dr, "cluster": cmd_cluster, "audit": cmd_audit}

DEFAULTS = {
    "case": None,
    "scenarios": [],
    "out": "out",
    "seed": 0,
    "tol": SolverSettings.tol,
    "max_iters": SolverSettings.max_iters,
    "kkt_tol": SolverSettings.kkt_tol,
    "no_scaling": False,
    "signals": ",".join(SIGNAL_TYPES),
    "budget_pct": 1.0,
    "budget_mode": "hourly",
    "reactive": False,
    "fd_check": 0,
    "exclude_kinks": True,
    "dump_program": False,
    "plots": False,
    "clusters": 4,
    "verbose": False,
}


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    g = p.add_argument_group("common options")
    g.add_argument("--case", help="case JSON file or shipped case name (tutorial6, ieee33)")
    g.add_argument("--scenarios", nargs="+", help="scenario CSV file(s)")
    g.add_argument("--out", help="output directory (default: out)")
    g.add_argument("--seed", type=int, help="seed for clustering and audit sampling (default: 0)")
    g.add_argument("--tol", type=float, help="embedding residual tolerance")
    g.add_argument("--max-iters", type=int, help="splitting iteration limit")
    g.add_argument("--kkt-tol", type=float, help="acceptance tolerance on KKT residuals")
    g.add_argument("--no-scaling", action="store_true", help="disable problem equilibration")
    g.add_argument("--signals", help=f"comma-separated subset of {','.join(SIGNAL_TYPES)}")
    g.add_argument("--budget-pct", type=float, help="DR budget as percent of peak demand (default: 1)")
    g.add_argument("--budget-mode", choices=["hourly", "daily"], help="per-hour or whole-day budget")
    g.add_argument("--reactive", action="store_true", help="reactive-power demand response")
    g.add_argument("--fd-check", type=int, metavar="N", help="finite-difference audit on N entries per signal")
    g.add_argument("--exclude-kinks", action=argparse.BooleanOptionalAction,
                   help="keep flagged DLME entries out of DR allocation (default: on)")
    g.add_argument("--dump-program", action="store_true", help="write the canonical conic program")
    g.add_argument("--plots", action="store_true", help="write per-hour summary plots (SVG)")
    g.add_argument("-k", "--clusters", type=int, help="number of typical days (cluster)")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="dlme", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", metavar="command")
    helps = {
        "solve": "solve the dispatch and write schedules",
        "signals": "compute emission signal matrices",
        "dr": "evaluate signal-guided demand response",
        "cluster": "reduce a scenario pool to typical days",
        "audit": "finite-difference and conservation audit",
    }
    for name, text in helps.items():
        sub.add_parser(name, help=text, parents=[common])
    return parser


def make_config(args, parser) -> RunConfig:
    opts = {**DEFAULTS, **{k: v for k, v in vars(args).items() if k in DEFAULTS}}
    if not opts["case"]:
        parser.error("--case is required")
    signals = tuple(s.strip() for s in opts["signals"].split(",") if s.strip())
    bad = [s for s in signals if s not in SIGNAL_TYPES]
    if bad or not signals:
        parser.error(f"--signals must be a subset of {','.join(SIGNAL_TYPES)} (got {opts['signals']!r})")
    if opts["fd_check"] < 0 or opts["clusters"] < 1:
        parser.error("--fd-check must be >= 0 and -k >= 1")
    if opts["tol"] <= 0 or opts["kkt_tol"] <= 0 or opts["max_iters"] < 1:
        parser.error("--tol and --kkt-tol must be positive and --max-iters >= 1")
    settings = SolverSettings(tol=opts["tol"], kkt_tol=opts["kkt_tol"], max_iters=opts["max_iters"],
                              scale=not opts["no_scaling"])
    return RunConfig(
        case=opts["case"],
        scenarios=list(opts["scenarios"]),
        out=Path(opts["out"]),
        seed=opts["seed"],
        settings=settings,
        signals=signals,
        budget_pct=opts["budget_pct"],
        budget_mode=opts["budget_mode"],
        reactive=opts["reactive"],
        fd_check=opts["fd_check"],
        exclude_kinks=opts["exclude_kinks"],
        dump_program=opts["dump_program"],
        plots=opts["plots"],
        clusters=opts["clusters"],
    )


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    verbose = getattr(args, "verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if not verbose:
        warnings.simplefilter("ignore")
    try:
        cfg = make_config(args, parser)
    except SystemExit as exc:
        return int(exc.code or 0)
    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](cfg)
    except (CaseParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (CaseValidationError, BudgetError, ClusteringError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except MeritOrderError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverError as exc:
        print(f"solver: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE if exc.status in ("infeasible", "unbounded") else EXIT_SOLVER
    except SingularSystemError as exc:
        print(f"solver: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    log.info("%s finished in %.1f s", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
