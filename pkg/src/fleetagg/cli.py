"""Command-line entry point.

Exit codes: 0 success, 1 usage or guard error, 2 infeasible.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields
from pathlib import Path
from typing import Sequence

import numpy as np

from fleetagg import experiments as ex
from fleetagg.dispatch import InfeasibleProfileError, check_aggregate_feasible, disaggregate, schedule_matrix
from fleetagg.network import METHODS as NETWORK_METHODS
from fleetagg.network import (
    build_constraint_sets,
    congestion_profile,
    desk_replica,
    solve_network,
    validate_area_profiles,
)
from fleetagg.reduction import DEFAULT_EXHAUSTIVE_GUARD, HorizonTooLargeError
from fleetagg.scenario import (
    KINDS,
    SchemaError,
    ScenarioSpec,
    instance_to_dict,
    load_instance,
    random_uc_instance,
    read_series_csv,
    save_instance,
)
from fleetagg.ucsolver.model import SOLVER_TOL

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2
ALL_METHODS = ex.METHODS + tuple(m.lower() for m in NETWORK_METHODS)
TWOAREA_COLUMNS = ("schema_version", "p_bar_gw", "method", "status", "objective", "congested_slots",
                   "max_price_gap", "all_feasible")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _single_method(args) -> str:
    m = (args.method or "").lower()
    if m not in ex.METHODS:
        raise UsageError(f"--method must be one of {', '.join(ex.METHODS)} for this command")
    return m


# ----------------------------------------------------------------- commands
def cmd_gen(args) -> int:
    spec = ScenarioSpec(args.kind, args.steps, args.devices, args.seed, p_max=args.p_max)
    inst = random_uc_instance(spec)
    if args.out:
        save_instance(inst, args.out)
    else:
        _write(json.dumps(instance_to_dict(inst), indent=1), None)
    return EXIT_OK


def cmd_reduce(args) -> int:
    inst = load_instance(args.instance)
    m = _single_method(args)
    if m == "m1":
        raise UsageError("m1 has no aggregate constraints")
    cs = ex.select_constraints(m, inst.fleet, np.asarray(inst.inflexible) / inst.fleet_scale, args.t_guard)
    _write(cs.to_json(indent=1), args.out)
    return EXIT_OK


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    m = _single_method(args)
    sol, rep = ex.run_method(inst, m, t_guard=args.t_guard, check_feasible=m != "m1", tol=args.tol)
    payload = {"report": rep.to_dict(), "solution": sol.to_dict()}
    _write(json.dumps(payload, indent=1), args.out)
    return EXIT_OK if sol.status == "optimal" else EXIT_INFEASIBLE


def _profile(args, inst) -> np.ndarray:
    if args.profile:
        path = Path(args.profile)
        if path.suffix.lower() == ".json":
            data = json.loads(path.read_text())
            return np.asarray(data["d"] if isinstance(data, dict) else data, dtype=float)
        return read_series_csv(path)
    m = _single_method(args)
    sol, _ = ex.run_method(inst, m, t_guard=args.t_guard, tol=args.tol)
    if sol.status != "optimal":
        raise InfeasibleProfileError(f"{m} solve ended with status {sol.status}")
    return np.maximum(sol.d, 0.0) / inst.fleet_scale


def cmd_dispatch(args) -> int:
    inst = load_instance(args.instance)
    d = _profile(args, inst)
    report = check_aggregate_feasible(inst.fleet, d)
    payload = {"profile_kw": d.tolist(), "feasibility": report.to_dict()}
    code = EXIT_OK
    if report.feasible:
        try:
            scheds = disaggregate(inst.fleet, d)
            payload["schedules_kw"] = schedule_matrix(scheds).tolist()
        except InfeasibleProfileError as exc:
            payload["schedules_kw"] = None
            payload["disaggregation_error"] = str(exc)
            code = EXIT_INFEASIBLE
    else:
        code = EXIT_INFEASIBLE
    _write(json.dumps(payload, indent=1), args.out)
    return code


def cmd_twoarea(args) -> int:
    methods = [m.upper() for m in (args.method or "mm1,mm3,mm4").split(",")]
    bad = [m for m in methods if m not in NETWORK_METHODS]
    if bad:
        raise UsageError(f"unknown two-area method {bad[0]!r}; expected mm1..mm4")
    p_bars = [float(v) for v in args.p_bar.split(",")]
    devices = tuple(int(v) for v in args.devices.split(","))
    if len(devices) != 2:
        raise UsageError("--devices takes two counts, e.g. 4000,6000")
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    base = desk_replica(p_bars[0], seed=args.seed, devices=devices)
    # selections first, so a guard error stops the run before any solve
    sets = {m: build_constraint_sets(base.with_method(m), guard=args.t_guard or DEFAULT_EXHAUSTIVE_GUARD)
            for m in methods}
    any_infeasible = False
    rows = []
    for m in methods:
        problem = base.with_method(m)
        for pb in p_bars:
            sol = solve_network(problem.with_capacity(pb), constraint_sets=sets[m])
            (out / f"{m.lower()}_pbar_{pb:g}.json").write_text(sol.to_json(indent=1))
            feasible = ""
            if m != "MM1" and sol.status == "optimal":
                feasible = int(validate_area_profiles(sol, problem.areas).all_feasible)
            optimal = sol.status == "optimal"
            any_infeasible |= not optimal
            rows.append([ex.CSV_SCHEMA_VERSION, f"{pb:g}", m, sol.status, repr(sol.objective),
                         congestion_profile(sol).count if optimal else "",
                         repr(float(sol.price_gap().max())) if optimal else "", feasible])
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TWOAREA_COLUMNS)
        w.writerows(rows)
    return EXIT_INFEASIBLE if any_infeasible else EXIT_OK


def _config(cls, path: str | None, **overrides):
    data = json.loads(Path(path).read_text()) if path else {}
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise UsageError(f"unknown {cls.__name__} field {unknown[0]!r}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**data)


def cmd_bench(args) -> int:
    out = args.out
    if args.experiment == "timing":
        cfg = _config(ex.TimingConfig, args.config)
        rows = ex.run_timing(cfg)
        if out:
            ex.write_timing_csv(rows, out)
        else:
            w = csv.writer(sys.stdout)
            w.writerow(ex.TIMING_COLUMNS)
            for r in rows:
                w.writerow(r.as_row())
        return EXIT_OK
    if args.experiment == "success":
        cfg = _config(ex.SuccessConfig, args.config, count=args.count, seed=args.seed)
        summary = ex.run_success_rate(cfg)
        if out:
            ex.write_success_csv(summary, out)
        for m in cfg.methods:
            print(f"{m}: success {summary.rates[m]:.1%}, mean gap on misses {summary.mean_gap_on_failure[m]:.3g}",
                  file=sys.stderr)
        return EXIT_OK
    cfg = _config(ex.EquivalenceConfig, args.config, count=args.count, seed=args.seed)
    results = ex.run_equivalence(cfg)
    cols = ("instance", "method", "status", "objective", "rel_gap", "success", "feasible", "constraints",
            "selection_ms", "solve_ms")
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(("schema_version",) + cols)
        for reps in results:
            for r in reps:
                d = r.to_dict()
                w.writerow([ex.CSV_SCHEMA_VERSION] + ["" if d[c] is None else d[c] for c in cols])
    finally:
        if out:
            fh.close()
    return EXIT_OK


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fleetagg", description="Aggregate flexibility of charging fleets in dispatch problems.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, instance=True):
        if instance:
            sp.add_argument("--instance", required=True, help="instance JSON file")
        sp.add_argument("--method", help="m1..m5 (single bus) or mm1..mm4 (two areas)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help="output file (directory for twoarea)")
        sp.add_argument("--t-guard", type=int, dest="t_guard",
                        help="largest horizon allowed for enumerating methods (default 20 / 24)")
        sp.add_argument("--tol", type=float, default=SOLVER_TOL, help="solver tolerance")

    g = sub.add_parser("gen", help="generate a seeded random instance")
    common(g, instance=False)
    g.add_argument("--kind", choices=KINDS, default="uniform_subsets")
    g.add_argument("--steps", type=int, default=8)
    g.add_argument("--devices", type=int, default=10)
    g.add_argument("--p-max", type=float, default=1.0, dest="p_max", help="rated power per device (kW)")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("reduce", help="select aggregate constraints")
    common(r)
    r.set_defaults(func=cmd_reduce)

    s = sub.add_parser("solve", help="solve the single-bus dispatch")
    common(s)
    s.set_defaults(func=cmd_solve)

    d = sub.add_parser("dispatch", help="check and disaggregate an aggregate profile")
    common(d)
    d.add_argument("--profile", help="profile in kW (JSON list, JSON with key 'd', or CSV); "
                                     "solved with --method when absent")
    d.set_defaults(func=cmd_dispatch)

    t = sub.add_parser("twoarea", help="two-area desk replica over a list of line capacities "
                                       "(methods as a comma list, default mm1,mm3,mm4)")
    common(t, instance=False)
    t.add_argument("--p-bar", default="0.5,5,12,14,16,20", dest="p_bar", help="comma-separated capacities (GW)")
    t.add_argument("--devices", default="4000,6000", help="device counts of areas 1 and 2")
    t.set_defaults(func=cmd_twoarea, seed=2021)

    b = sub.add_parser("bench", help="equivalence, success-rate or timing experiment")
    common(b, instance=False)
    b.add_argument("--experiment", choices=("equivalence", "success", "timing"), default="equivalence")
    b.add_argument("--config", help="JSON file with experiment settings")
    b.add_argument("--count", type=int, help="number of instances")
    b.set_defaults(func=cmd_bench, seed=None)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.method and args.method.lower() not in ALL_METHODS and args.command != "twoarea":
        parser.error(f"unknown method {args.method!r}")
    try:
        return args.func(args)
    except (UsageError, HorizonTooLargeError, SchemaError, FileNotFoundError, ValueError) as exc:
        if isinstance(exc, InfeasibleProfileError):
            print(f"fleetagg: infeasible: {exc}", file=sys.stderr)
            return EXIT_INFEASIBLE
        print(f"fleetagg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
