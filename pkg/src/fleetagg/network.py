"""Multi-area dispatch with capacity-limited tie-lines.

Each area has its own generators, inflexible demand and fleet.  A tie-line
carries ``p(t)`` from ``from_area`` to ``to_area`` (negative values flow the
other way) with ``|p(t)| <= p_bar``.  Four fleet models are available:

``MM1``  every device is a decision variable
``MM2``  exhaustive aggregate constraints per area
``MM3``  Greedy II constraints per area plus per-slot power caps
``MM4``  Greedy II constraints on the merged fleet, bounding the summed
         demand of all areas, plus per-area totals and per-slot caps
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from fleetagg.dispatch import FeasibilityReport, check_aggregate_feasible
from fleetagg.fleet import Fleet, TimeHorizon
from fleetagg.reduction import (
    DEFAULT_EXHAUSTIVE_GUARD,
    exhaustive_constraints,
    greedy_selection_2,
)
from fleetagg.scenario import ScenarioSpec, bundled_demand_profile, generate_fleet
from fleetagg.ucsolver import Aggregate, AreaModel, CostFunction, Generator, LineModel, PerDevice, solve_areas

METHODS = ("MM1", "MM2", "MM3", "MM4")
CONGESTION_RTOL = 1e-6


@dataclass
class Area:
    id: Hashable
    generators: list[Generator]
    inflexible: np.ndarray
    fleet: Fleet

    def __post_init__(self):
        self.inflexible = np.asarray(self.inflexible, dtype=float)
        if len(self.inflexible) != self.fleet.num_steps:
            raise ValueError(f"area {self.id!r}: inflexible demand must have one value per slot")


@dataclass(frozen=True)
class TieLine:
    from_area: Hashable
    to_area: Hashable
    p_bar: float

    def __post_init__(self):
        if not self.p_bar >= 0:
            raise ValueError("tie-line capacity must be non-negative")
        if self.from_area == self.to_area:
            raise ValueError("tie-line must join two different areas")


@dataclass
class NetworkProblem:
    areas: list[Area]
    lines: list[TieLine]
    horizon: TimeHorizon
    method: str = "MM1"
    fleet_scale: float = 1.0  # fleet kW -> problem power unit

    def __post_init__(self):
        self.method = self.method.upper()
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        ids = [a.id for a in self.areas]
        if len(set(ids)) != len(ids):
            raise ValueError("area ids must be unique")
        for line in self.lines:
            if line.from_area not in ids or line.to_area not in ids:
                raise ValueError(f"tie-line {line} references an unknown area")
        for a in self.areas:
            if a.fleet.horizon != self.horizon:
                raise ValueError(f"area {a.id!r}: fleet horizon differs from the problem horizon")

    def index(self, area_id: Hashable) -> int:
        return [a.id for a in self.areas].index(area_id)

    def with_method(self, method: str) -> "NetworkProblem":
        return NetworkProblem(self.areas, self.lines, self.horizon, method, self.fleet_scale)

    def with_capacity(self, p_bar: float) -> "NetworkProblem":
        lines = [TieLine(l.from_area, l.to_area, p_bar) for l in self.lines]
        return NetworkProblem(self.areas, lines, self.horizon, self.method, self.fleet_scale)


@dataclass
class NetworkSolution:
    status: str
    method: str
    objective: float
    area_ids: list
    d: np.ndarray  # (areas, T)
    g: list[np.ndarray]  # per area (generators, T)
    p: np.ndarray  # (lines, T)
    lam: np.ndarray  # (areas, T) marginal prices
    lines: list[TieLine]
    fleet_scale: float
    kkt_residual: float = np.nan
    iterations: int = 0
    constraint_sets: dict = field(default_factory=dict, repr=False)
    u: list[np.ndarray | None] = field(default_factory=list, repr=False)

    def price_gap(self) -> np.ndarray:
        """Per-slot spread between the highest and lowest area price."""
        return self.lam.max(axis=0) - self.lam.min(axis=0)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "method": self.method,
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
            "areas": [str(a) for a in self.area_ids],
            "d": self.d.tolist(),
            "g": [g.tolist() for g in self.g],
            "p": self.p.tolist(),
            "lambda": self.lam.tolist(),
            "lines": [{"from": str(l.from_area), "to": str(l.to_area), "p_bar": l.p_bar} for l in self.lines],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _area_caps(fleet: Fleet) -> np.ndarray:
    return fleet.slot_power_caps()


def build_constraint_sets(problem: NetworkProblem, guard: int = DEFAULT_EXHAUSTIVE_GUARD,
                          override: bool = False) -> dict:
    """Constraint sets used by the aggregate methods, keyed by area id (and ``"merged"`` for MM4)."""
    m = problem.method
    sf = problem.fleet_scale  # scorer works in fleet units (kW)
    out = {}
    if m == "MM2":
        for a in problem.areas:
            out[a.id] = exhaustive_constraints(a.fleet, guard=guard, override=override)
    elif m == "MM3":
        for a in problem.areas:
            out[a.id] = greedy_selection_2(a.fleet, a.inflexible / sf)
    elif m == "MM4":
        merged = problem.areas[0].fleet
        for a in problem.areas[1:]:
            merged = merged.merged(a.fleet)
        total = np.sum([a.inflexible for a in problem.areas], axis=0)
        out["merged"] = greedy_selection_2(merged, total / sf).with_caps(None)
    return out


def solve_network(problem: NetworkProblem, guard: int = DEFAULT_EXHAUSTIVE_GUARD, override: bool = False,
                  constraint_sets: dict | None = None) -> NetworkSolution:
    """Cost-minimal dispatch of all areas under the chosen fleet model.

    ``MM2`` raises :class:`HorizonTooLargeError` beyond ``guard`` slots unless
    ``override`` is set.  Precomputed ``constraint_sets`` may be passed to
    avoid repeating the selection across a capacity sweep.
    """
    m = problem.method
    sets = constraint_sets if constraint_sets is not None else build_constraint_sets(problem, guard, override)
    sf = problem.fleet_scale
    models, joint = [], None
    for a in problem.areas:
        if m == "MM1":
            fm = PerDevice(a.fleet)
        elif m in ("MM2", "MM3"):
            fm = Aggregate.from_fleet(a.fleet, sets[a.id])
        else:
            fm = Aggregate(None, a.fleet.total_energy(), _area_caps(a.fleet))
        models.append(AreaModel(a.generators, a.inflexible, fm, sf))
    if m == "MM4":
        joint = sets["merged"]
    lines = [LineModel(problem.index(l.from_area), problem.index(l.to_area), l.p_bar) for l in problem.lines]
    raw = solve_areas(models, lines, problem.horizon, joint=joint)
    return NetworkSolution(
        raw.status, m, raw.objective, [a.id for a in problem.areas], np.array(raw.d), raw.g, raw.p,
        np.array(raw.lam), list(problem.lines), sf, raw.kkt_residual, raw.iterations, sets, raw.u)


@dataclass
class CongestionProfile:
    flags: np.ndarray  # bool per slot
    degenerate: bool = False  # zero-capacity line: areas are decoupled

    @property
    def count(self) -> int:
        return int(self.flags.sum())


def congestion_profile(solution: NetworkSolution, line: int | TieLine = 0) -> CongestionProfile:
    """Slots where the line runs at capacity; a zero-capacity line is reported as degenerate."""
    idx = solution.lines.index(line) if isinstance(line, TieLine) else int(line)
    p_bar = solution.lines[idx].p_bar
    T = solution.p.shape[1]
    if p_bar <= 0:
        return CongestionProfile(np.zeros(T, dtype=bool), degenerate=True)
    flags = np.abs(solution.p[idx]) >= p_bar - CONGESTION_RTOL * max(1.0, p_bar)
    return CongestionProfile(flags)


@dataclass
class AreaValidation:
    per_area: dict  # area id -> FeasibilityReport
    merged: FeasibilityReport | None = None

    @property
    def all_feasible(self) -> bool:
        return all(r.feasible for r in self.per_area.values()) and (self.merged is None or self.merged.feasible)

    def to_dict(self) -> dict:
        return {
            "per_area": {str(k): v.to_dict() for k, v in self.per_area.items()},
            "merged": None if self.merged is None else self.merged.to_dict(),
            "all_feasible": self.all_feasible,
        }


def validate_area_profiles(solution: NetworkSolution, areas: Sequence[Area]) -> AreaValidation:
    """Check every area's demand profile against its own fleet (and the merged fleet for MM4)."""
    sf = solution.fleet_scale
    per_area = {}
    for k, a in enumerate(areas):
        per_area[a.id] = check_aggregate_feasible(a.fleet, np.maximum(solution.d[k], 0.0) / sf)
    merged = None
    if solution.method == "MM4":
        fleet = areas[0].fleet
        for a in areas[1:]:
            fleet = fleet.merged(a.fleet)
        merged = check_aggregate_feasible(fleet, np.maximum(solution.d.sum(axis=0), 0.0) / sf)
    return AreaValidation(per_area, merged)


# ------------------------------------------------------------ desk replica
REPLICA_COSTS = ((1e4, 1.5e4), (2e4, 1.4e4))  # (a: GBP/GW^2h, b: GBP/GWh) for areas 1 and 2
REPLICA_G_MAX = 60.0  # GW
REPLICA_DEVICES = (4000, 6000)
REPLICA_P_MAX_KW = 5000.0


def desk_replica(p_bar: float, method: str = "MM1", seed: int = 2021, devices: Sequence[int] = REPLICA_DEVICES,
                 inflexible: Sequence[Sequence[float]] | None = None) -> NetworkProblem:
    """Scaled two-area case: 1000x fewer devices, each 1000x more powerful.

    Windows start around 18:00 (sd 1 h) and last about 10 h (sd 2 h),
    wrapping past midnight; targets are uniform up to a full window of
    charging.  Both areas use the bundled demand profile unless
    ``inflexible`` is given.  Power is in GW, device data in kW/kWh.  The
    line runs from area 2 to area 1, so ``g1 + p = D1 + d1`` and a negative
    ``p`` carries power from area 1 to area 2.
    """
    T = 24
    horizon = TimeHorizon(T)
    base = bundled_demand_profile()
    demands = inflexible if inflexible is not None else (base, base)
    areas = []
    for k, (n, (a, b), dem) in enumerate(zip(devices, REPLICA_COSTS, demands)):
        spec = ScenarioSpec("contiguous_normal", T, n, seed + k, p_max=REPLICA_P_MAX_KW,
                            start_mean=18.0, start_std=1.0, duration_mean=10.0, duration_std=2.0)
        gen = Generator(0.0, REPLICA_G_MAX, CostFunction.quadratic(a, b))
        areas.append(Area(k + 1, [gen], np.asarray(dem, dtype=float), generate_fleet(spec)))
    return NetworkProblem(areas, [TieLine(2, 1, p_bar)], horizon, method, fleet_scale=1e-6)
