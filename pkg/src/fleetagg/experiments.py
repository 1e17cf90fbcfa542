"""Benchmark harness: method runners, equivalence, success-rate and timing studies.

Method tags:

``m1``  per-device model
``m2``  aggregate model with every slot-set constraint
``m3``  aggregate model with the exact per-cardinality selection
``m4``  aggregate model with Greedy I constraints
``m5``  aggregate model with Greedy II constraints
"""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from fleetagg.dispatch import check_aggregate_feasible
from fleetagg.fleet import Device, Fleet
from fleetagg.reduction import (
    DEFAULT_COMBINATORIAL_GUARD,
    DEFAULT_EXHAUSTIVE_GUARD,
    ConstraintSet,
    HorizonTooLargeError,
    combinatorial_selection,
    exhaustive_constraints,
    greedy_selection_1,
    greedy_selection_2,
)
from fleetagg.scenario import (
    Instance,
    ScenarioSpec,
    bundled_demand_profile,
    generate_fleet,
    random_uc_instance,
)
from fleetagg.ucsolver import Aggregate, CostFunction, Generator, PerDevice, Solution, UcProblem, solve
from fleetagg.ucsolver.model import SOLVER_TOL

METHODS = ("m1", "m2", "m3", "m4", "m5")
SUCCESS_RTOL = 1e-6
CSV_SCHEMA_VERSION = 1
TIMING_COLUMNS = ("schema_version", "method", "T", "N", "seed", "selection_ms", "solve_ms", "total_ms",
                  "constraints", "status")
SUCCESS_COLUMNS = ("schema_version", "seed", "method", "objective", "oracle_objective", "rel_gap", "success")


@dataclass
class ExperimentReport:
    method: str
    instance: str
    objective: float
    solve_ms: float
    selection_ms: float
    constraints: int
    status: str
    success: bool | None = None  # only with an oracle objective
    rel_gap: float | None = None
    feasible: bool | None = None  # flow verdict on the aggregate profile

    def to_dict(self) -> dict:
        return asdict(self)


def select_constraints(method: str, fleet: Fleet, inflexible: Sequence[float], t_guard: int | None = None,
                       override: bool = False) -> ConstraintSet | None:
    """Constraint set for an aggregate method; ``None`` for the per-device model."""
    method = method.lower()
    if method == "m1":
        return None
    if method == "m2":
        return exhaustive_constraints(fleet, t_guard or DEFAULT_EXHAUSTIVE_GUARD, override)
    if method == "m3":
        return combinatorial_selection(fleet, inflexible, t_guard or DEFAULT_COMBINATORIAL_GUARD, override)
    if method == "m4":
        return greedy_selection_1(fleet, inflexible)
    if method == "m5":
        return greedy_selection_2(fleet, inflexible)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def _problem(inst: Instance, cs: ConstraintSet | None, per_device: bool) -> UcProblem:
    fm = PerDevice(inst.fleet) if per_device else Aggregate.from_fleet(inst.fleet, cs)
    return UcProblem(inst.horizon, inst.generators, inst.inflexible, fm, inst.fleet_scale)


def run_method(inst: Instance, method: str, t_guard: int | None = None, override: bool = False,
               check_feasible: bool = False, label: str = "", tol: float = SOLVER_TOL
               ) -> tuple[Solution, ExperimentReport]:
    method = method.lower()
    inflexible_kw = np.asarray(inst.inflexible, dtype=float) / inst.fleet_scale
    t0 = time.perf_counter()
    cs = select_constraints(method, inst.fleet, inflexible_kw, t_guard, override)
    t1 = time.perf_counter()
    sol = solve(_problem(inst, cs, method == "m1"), tol=tol)
    t2 = time.perf_counter()
    feasible = None
    if check_feasible and method != "m1" and sol.status == "optimal":
        feasible = check_aggregate_feasible(inst.fleet, np.maximum(sol.d, 0.0) / inst.fleet_scale).feasible
    rep = ExperimentReport(method, label, float(sol.objective), 1e3 * (t2 - t1), 1e3 * (t1 - t0),
                           0 if cs is None else len(cs), sol.status, feasible=feasible)
    return sol, rep


def _score(reports: list[ExperimentReport], rtol: float) -> None:
    oracle = next(r for r in reports if r.method == "m1")
    for r in reports:
        if r.method == "m1" or oracle.status != "optimal":
            continue
        r.rel_gap = (r.objective - oracle.objective) / max(abs(oracle.objective), 1e-300)
        r.success = r.status == "optimal" and abs(r.rel_gap) <= rtol


# ----------------------------------------------------------- equivalence
@dataclass
class EquivalenceConfig:
    count: int = 100
    num_steps: int = 8
    num_devices: Sequence[int] = (5, 10, 20)
    kind: str = "uniform_subsets"
    seed: int = 0
    methods: Sequence[str] = METHODS
    t_guard: int = 10
    success_rtol: float = SUCCESS_RTOL
    check_feasible: bool = True


def run_equivalence(config: EquivalenceConfig) -> list[list[ExperimentReport]]:
    """Solve every instance with every method; M1 is the oracle for the success flags."""
    if config.num_steps > config.t_guard:
        raise HorizonTooLargeError(f"equivalence study enumerates 2^T sets; T={config.num_steps} exceeds "
                                   f"guard {config.t_guard}")
    methods = ["m1"] + [m for m in config.methods if m != "m1"]
    out = []
    for i in range(config.count):
        seed = config.seed + i
        n = config.num_devices[i % len(config.num_devices)]
        inst = random_uc_instance(ScenarioSpec(config.kind, config.num_steps, n, seed))
        label = f"{config.kind}:T={config.num_steps}:N={n}:seed={seed}"
        reps = [run_method(inst, m, t_guard=config.t_guard, check_feasible=config.check_feasible, label=label)[1]
                for m in methods]
        _score(reps, config.success_rtol)
        out.append(reps)
    return out


# ---------------------------------------------------------- success rate
def success_instance(seed: int, num_steps: int = 24, num_devices: int = 10, full_availability: bool = False
                     ) -> Instance:
    """Greedy-study instance: 1 kW devices on random subsets against the bundled demand shape (kW).

    The demand shape is tiled or cut to ``num_steps`` slots.  One quadratic
    unit serves everything.
    """
    fleet = generate_fleet(ScenarioSpec("uniform_subsets", num_steps, num_devices, seed))
    if full_availability:
        full = fleet.horizon.full
        rng = np.random.Generator(np.random.PCG64(seed))
        devs = [Device(d.p_max, float(rng.uniform(0.0, d.p_max * fleet.step_hours * num_steps)), full)
                for d in fleet.devices]
        fleet = Fleet(devs, fleet.horizon)
    demand = np.resize(bundled_demand_profile(), num_steps)
    gens = [Generator(0.0, 1e3, CostFunction.quadratic(1.0, 0.0))]
    return Instance(fleet, demand, gens, 1.0, {"study": "success", "seed": seed})


@dataclass
class SuccessConfig:
    count: int = 1000
    num_steps: int = 24
    num_devices: int = 10
    seed: int = 0
    methods: Sequence[str] = ("m4", "m5")
    rtol: float = SUCCESS_RTOL
    full_availability: bool = False


@dataclass
class SuccessSummary:
    count: int
    rates: dict  # method -> fraction of instances matching the oracle
    mean_gap_on_failure: dict  # method -> mean relative gap over misses (nan if none)
    reports: list = field(default_factory=list, repr=False)


def run_success_rate(config: SuccessConfig) -> SuccessSummary:
    rows = []
    for i in range(config.count):
        seed = config.seed + i
        inst = success_instance(seed, config.num_steps, config.num_devices, config.full_availability)
        label = f"success:T={config.num_steps}:N={config.num_devices}:seed={seed}"
        reps = [run_method(inst, m, label=label)[1] for m in ["m1", *config.methods]]
        _score(reps, config.rtol)
        rows.append(reps)
    rates, gaps = {}, {}
    for m in config.methods:
        mine = [r for reps in rows for r in reps if r.method == m]
        rates[m] = float(np.mean([bool(r.success) for r in mine])) if mine else float("nan")
        missed = [abs(r.rel_gap) for r in mine if not r.success and r.rel_gap is not None]
        gaps[m] = float(np.mean(missed)) if missed else float("nan")
    return SuccessSummary(config.count, rates, gaps, rows)


def write_success_csv(summary: SuccessSummary, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUCCESS_COLUMNS)
        for reps in summary.reports:
            oracle = next(r for r in reps if r.method == "m1")
            seed = oracle.instance.rsplit("=", 1)[-1]
            for r in reps:
                if r.method != "m1":
                    w.writerow([CSV_SCHEMA_VERSION, seed, r.method, repr(r.objective), repr(oracle.objective),
                                "" if r.rel_gap is None else repr(r.rel_gap), int(bool(r.success))])


# ---------------------------------------------------------------- timing
@dataclass
class TimingConfig:
    num_steps: Sequence[int] = (8, 16, 24)
    num_devices: Sequence[int] = (10, 100, 1000, 10000)
    methods: Sequence[str] = METHODS
    seeds: Sequence[int] = (0,)
    # cells beyond these horizons are recorded as "skipped" rather than run
    max_steps: dict = field(default_factory=lambda: {"m2": 16, "m3": 16})
    # Greedy I degenerates to enumeration once the fleet dominates the score
    max_devices: dict = field(default_factory=lambda: {"m4": 100})


@dataclass
class TimingRow:
    method: str
    T: int
    N: int
    seed: int
    selection_ms: float
    solve_ms: float
    constraints: int
    status: str

    @property
    def total_ms(self) -> float:
        return self.selection_ms + self.solve_ms

    def as_row(self) -> list:
        return [CSV_SCHEMA_VERSION, self.method, self.T, self.N, self.seed, f"{self.selection_ms:.3f}",
                f"{self.solve_ms:.3f}", f"{self.total_ms:.3f}", self.constraints, self.status]


def _warm_up() -> None:
    inst = random_uc_instance(ScenarioSpec("uniform_subsets", 4, 3, 0))
    for m in METHODS:
        run_method(inst, m)


def run_timing(config: TimingConfig, out: str | Path | None = None) -> list[TimingRow]:
    """Wall-clock grid over (method, T, N, seed); rows are sorted before writing."""
    _warm_up()
    rows = []
    for T in config.num_steps:
        for N in config.num_devices:
            for seed in config.seeds:
                inst = random_uc_instance(ScenarioSpec("uniform_subsets", T, N, seed))
                for m in config.methods:
                    if T > config.max_steps.get(m, T) or N > config.max_devices.get(m, N):
                        rows.append(TimingRow(m, T, N, seed, float("nan"), float("nan"), 0, "skipped"))
                        continue
                    _, rep = run_method(inst, m, override=True)
                    rows.append(TimingRow(m, T, N, seed, rep.selection_ms, rep.solve_ms, rep.constraints,
                                          rep.status))
    rows.sort(key=lambda r: (r.method, r.T, r.N, r.seed))
    if out is not None:
        write_timing_csv(rows, out)
    return rows


def write_timing_csv(rows: Iterable[TimingRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TIMING_COLUMNS)
        for r in rows:
            w.writerow(r.as_row())


def selection_times(method: str, seeds: Sequence[int], num_steps: int = 24, num_devices: int = 20,
                    repeats: int = 1) -> np.ndarray:
    """Constraint-selection wall-clock (ms, best of ``repeats``) on timing-grid instances."""
    out = []
    for seed in seeds:
        inst = random_uc_instance(ScenarioSpec("uniform_subsets", num_steps, num_devices, seed))
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            select_constraints(method, inst.fleet, inst.inflexible, override=True)
            best = min(best, time.perf_counter() - t0)
        out.append(1e3 * best)
    return np.array(out)
