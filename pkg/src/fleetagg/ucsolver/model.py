"""Unit-commitment dispatch models with a storage fleet, compiled to the QP form of :mod:`qp`.

One compiler serves both the single-bus problems and the multi-area network
problems: an area owns generators, an inflexible demand series and a fleet
model; tie-lines move power between areas.

Units: generator powers, inflexible demand, reported ``d``, ``g`` and line
flows are in the problem's power unit (kW for a desk fleet, GW for the grid
replica).  Device data stay in kW/kWh; ``fleet_scale`` converts kW to the
problem unit.  Costs are hourly rates, so the objective is
``sum_t step_hours * sum_i C_i(g_i(t))``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from fleetagg.fleet import Fleet, TimeHorizon
from fleetagg.reduction import ConstraintSet
from fleetagg.ucsolver.costs import Generator
from fleetagg.ucsolver.qp import QP, solve_qp

SOLVER_TOL = 1e-12
KKT_TOL = 1e-8
MAX_ITER = 200


class InfeasibleProblemError(RuntimeError):
    pass


@dataclass
class PerDevice:
    fleet: Fleet


@dataclass
class Aggregate:
    """Aggregate fleet: total energy, optional per-slot caps and optional support constraints."""

    constraints: ConstraintSet | None
    total_energy: float  # kWh
    caps: np.ndarray | None = None  # kW; falls back to constraints.per_slot_caps

    def slot_caps(self) -> np.ndarray | None:
        if self.caps is not None:
            return np.asarray(self.caps, dtype=float)
        if self.constraints is not None and self.constraints.per_slot_caps is not None:
            return np.asarray(self.constraints.per_slot_caps, dtype=float)
        return None

    @classmethod
    def from_fleet(cls, fleet: Fleet, constraints: ConstraintSet | None) -> "Aggregate":
        return cls(constraints, fleet.total_energy())


FleetModel = PerDevice | Aggregate | None


@dataclass
class AreaModel:
    generators: list[Generator]
    inflexible: np.ndarray
    fleet_model: FleetModel = None
    fleet_scale: float = 1.0


@dataclass
class LineModel:
    from_area: int
    to_area: int
    p_bar: float


@dataclass
class UcProblem:
    horizon: TimeHorizon
    generators: list[Generator]
    inflexible: np.ndarray
    fleet_model: FleetModel = None
    fleet_scale: float = 1.0

    def __post_init__(self):
        self.inflexible = np.asarray(self.inflexible, dtype=float)
        if len(self.inflexible) != self.horizon.num_steps:
            raise ValueError("inflexible demand must have one value per slot")

    def area(self) -> AreaModel:
        return AreaModel(self.generators, self.inflexible, self.fleet_model, self.fleet_scale)


@dataclass
class RawSolution:
    """Area-indexed primal and dual values shared by single-bus and network solutions."""

    status: str
    objective: float
    g: list[np.ndarray]  # per area (n_gen, T)
    d: list[np.ndarray]  # per area (T,)
    u: list[np.ndarray | None]  # per area (N, T) in kW, per-device models only
    p: np.ndarray  # (n_lines, T)
    lam: list[np.ndarray]  # per area (T,) balance duals, cost per energy unit
    energy_duals: list[np.ndarray]  # per area
    mu: list[np.ndarray]  # per area aggregate-row duals
    mu_joint: np.ndarray
    iterations: int = 0
    kkt_residual: float = np.nan


@dataclass
class Solution:
    status: str
    objective: float
    d: np.ndarray
    g: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    u: np.ndarray | None = None
    energy_duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    kkt_residual: float = np.nan
    iterations: int = 0

    @classmethod
    def from_raw(cls, raw: RawSolution) -> "Solution":
        return cls(raw.status, raw.objective, raw.d[0], raw.g[0], raw.lam[0], raw.mu[0], raw.u[0],
                   raw.energy_duals[0], raw.kkt_residual, raw.iterations)

    def to_raw(self) -> RawSolution:
        return RawSolution(self.status, self.objective, [self.g], [self.d], [self.u], np.zeros((0, len(self.d))),
                           [self.lam], [self.energy_duals], [self.mu], np.zeros(0), self.iterations, self.kkt_residual)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
            "d": self.d.tolist(),
            "g": self.g.tolist(),
            "lambda": self.lam.tolist(),
            "mu": self.mu.tolist(),
            "u": None if self.u is None else self.u.tolist(),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _empty_csr(rows: int, cols: int) -> sp.csr_matrix:
    return sp.csr_matrix((rows, cols))


class CompiledModel:
    """Scaled QP plus the bookkeeping needed to map QP vectors to named quantities."""

    def __init__(self, areas: Sequence[AreaModel], lines: Sequence[LineModel], horizon: TimeHorizon,
                 joint: ConstraintSet | None = None):
        self.areas = list(areas)
        self.lines = list(lines)
        self.horizon = horizon
        self.joint = joint
        T, h = horizon.num_steps, horizon.step_hours
        self.T, self.h = T, h
        self.rho = self._power_scale()
        rho = self.rho
        rates = []
        for a in self.areas:
            for gen in a.generators:
                if gen.cost.kind == "piecewise_linear":
                    rates.append(max(gen.cost.slopes) * rho * h)
                else:
                    rates.append((gen.cost.a * rho + gen.cost.b) * rho * h)
        self.kappa = max([r for r in rates if r > 0], default=1.0)
        self._build()

    def _power_scale(self) -> float:
        # peak load the generators must serve; g_max only as a fallback
        peak = 0.0
        for a in self.areas:
            fleet_peak = 0.0
            fm = a.fleet_model
            if isinstance(fm, PerDevice):
                fleet_peak = float(fm.fleet.slot_power_caps().max(initial=0.0))
            elif isinstance(fm, Aggregate):
                caps = fm.slot_caps()
                fleet_peak = float(caps.max(initial=0.0)) if caps is not None else fm.total_energy / self.h
            peak = max(peak, float(np.abs(a.inflexible).max(initial=0.0)) + fleet_peak * a.fleet_scale)
        if peak > 0:
            return peak
        gmax = [g.g_max for a in self.areas for g in a.generators]
        return max([v for v in gmax if v > 0], default=1.0)

    # ------------------------------------------------------------------ build
    def _build(self):
        T, h, rho, kappa = self.T, self.h, self.rho, self.kappa
        q, c, lb, ub = [], [], [], []

        def add_var(qi, ci, lo, hi):
            q.append(qi)
            c.append(ci)
            lb.append(lo)
            ub.append(hi)
            return len(c) - 1

        eq_rows, eq_rhs = [], []  # list of (cols, coefs)
        in_rows, in_rhs = [], []
        self.const_cost = 0.0
        self.gen_cols, self.gen_base = [], []
        self.fleet_info = []
        self.bal_rows = []

        balance = [[([], []) for _ in range(T)] for _ in self.areas]
        bal_const = [np.array(a.inflexible, dtype=float).copy() for a in self.areas]

        for ai, area in enumerate(self.areas):
            cols_a, base_a = [], []
            for gen in area.generators:
                cost = gen.cost
                if gen.fixed:
                    cols_a.append(None)
                    base_a.append(gen.g_min)
                    bal_const[ai] -= gen.g_min
                    self.const_cost += T * h * float(cost(gen.g_min))
                    continue
                if cost.kind == "piecewise_linear":
                    bp = np.asarray(cost.breakpoints)
                    cols = np.array([[add_var(0.0, s * rho * h / kappa, 0.0, w / rho)
                                      for s, w in zip(cost.slopes, np.diff(bp))] for _ in range(T)])
                    base = bp[0]
                else:
                    cols = np.array([[add_var(2 * cost.a * rho**2 * h / kappa, cost.b * rho * h / kappa,
                                              gen.g_min / rho, gen.g_max / rho)] for _ in range(T)])
                    base = 0.0
                for t in range(T):
                    for col in cols[t]:
                        balance[ai][t][0].append(col)
                        balance[ai][t][1].append(1.0)
                bal_const[ai] -= base
                cols_a.append(cols)
                base_a.append(base)
            self.gen_cols.append(cols_a)
            self.gen_base.append(base_a)

            # fleet
            fm, sf = area.fleet_model, area.fleet_scale
            info = {"kind": None}
            if isinstance(fm, PerDevice):
                fleet = fm.fleet
                info = {"kind": "device", "N": len(fleet), "cols": {}, "rows": {}, "fixed": np.zeros((len(fleet), T))}
                for j, dev in enumerate(fleet.devices):
                    slots = np.array(dev.availability.slots) - 1
                    full = dev.p_max * h * len(slots)
                    if dev.e_target <= 1e-12 * max(full, 1e-300):
                        continue
                    if dev.e_target >= full * (1 - 1e-12):
                        info["fixed"][j, slots] = dev.p_max
                        bal_const[ai][slots] += dev.p_max * sf
                        continue
                    cols = np.array([add_var(0.0, 0.0, 0.0, dev.p_max * sf / rho) for _ in slots])
                    for t, col in zip(slots, cols):
                        balance[ai][t][0].append(col)
                        balance[ai][t][1].append(-1.0)
                    info["cols"][j] = (slots, cols)
                    info["rows"][j] = len(eq_rows)
                    eq_rows.append((cols, np.full(len(cols), h)))
                    eq_rhs.append(dev.e_target * sf / rho)
            elif isinstance(fm, Aggregate):
                caps = fm.slot_caps()
                info = {"kind": "aggregate", "cols": np.full(T, -1), "total_row": None, "ineq": []}
                if fm.total_energy > 1e-12:
                    for t in range(T):
                        hi = np.inf if caps is None else caps[t] * sf / rho
                        if hi <= 0:
                            continue
                        col = add_var(0.0, 0.0, 0.0, hi)
                        info["cols"][t] = col
                        balance[ai][t][0].append(col)
                        balance[ai][t][1].append(-1.0)
                    live = info["cols"][info["cols"] >= 0]
                    info["total_row"] = len(eq_rows)
                    eq_rows.append((live, np.full(len(live), h)))
                    eq_rhs.append(fm.total_energy * sf / rho)
                    if fm.constraints is not None:
                        nlive = len(live)
                        for con in fm.constraints:
                            cols = [info["cols"][t - 1] for t in con.support if info["cols"][t - 1] >= 0]
                            # a row covering every live slot duplicates the total-energy equality
                            if len(cols) == nlive and con.rhs >= fm.total_energy * (1 - 1e-12):
                                info["ineq"].append(None)
                                continue
                            info["ineq"].append(len(in_rows))
                            in_rows.append((np.array(cols, dtype=int), np.ones(len(cols))))
                            in_rhs.append(con.rhs * sf / (h * rho))
            self.fleet_info.append(info)

        self.line_cols = []
        for li, line in enumerate(self.lines):
            if line.p_bar <= 0:
                self.line_cols.append(None)
                continue
            cols = np.array([add_var(0.0, 0.0, -line.p_bar / rho, line.p_bar / rho) for _ in range(T)])
            for t in range(T):
                balance[line.from_area][t][0].append(cols[t])
                balance[line.from_area][t][1].append(-1.0)
                balance[line.to_area][t][0].append(cols[t])
                balance[line.to_area][t][1].append(1.0)
            self.line_cols.append(cols)

        self.joint_rows = []
        if self.joint is not None:
            sf = self.areas[0].fleet_scale
            all_live = sum(int((info["cols"] >= 0).sum()) for info in self.fleet_info if info["kind"] == "aggregate")
            total = sum(a.fleet_model.total_energy for a in self.areas if isinstance(a.fleet_model, Aggregate))
            for con in self.joint:
                cols = [info["cols"][t - 1] for info in self.fleet_info if info["kind"] == "aggregate"
                        for t in con.support if info["cols"][t - 1] >= 0]
                if len(cols) == all_live and con.rhs >= total * (1 - 1e-12):
                    self.joint_rows.append(None)
                    continue
                self.joint_rows.append(len(in_rows))
                in_rows.append((np.array(cols, dtype=int), np.ones(len(cols))))
                in_rhs.append(con.rhs * sf / (h * rho))

        for ai in range(len(self.areas)):
            rows = []
            for t in range(T):
                cols, coefs = balance[ai][t]
                rows.append(len(eq_rows))
                eq_rows.append((np.array(cols, dtype=int), np.array(coefs)))
                eq_rhs.append(bal_const[ai][t] / rho)
            self.bal_rows.append(np.array(rows))

        n = len(c)
        self.n = n
        self.qp = QP(
            q=np.array(q), c=np.array(c),
            A=self._matrix(eq_rows, n), b=np.array(eq_rhs),
            G=self._matrix(in_rows, n), h=np.array(in_rhs),
            lb=np.array(lb), ub=np.array(ub),
        )

    @staticmethod
    def _matrix(rows, n) -> sp.csr_matrix:
        if not rows:
            return _empty_csr(0, n)
        ri = np.concatenate([np.full(len(cols), i) for i, (cols, _) in enumerate(rows)])
        ci = np.concatenate([np.asarray(cols, dtype=int) for cols, _ in rows])
        vals = np.concatenate([np.asarray(v, dtype=float) for _, v in rows])
        return sp.csr_matrix((vals, (ri, ci)), shape=(len(rows), n))

    # ------------------------------------------------------------ unpacking
    def unpack(self, x: np.ndarray, y: np.ndarray, z: np.ndarray, status: str, iterations: int) -> RawSolution:
        T, rho, kappa, h = self.T, self.rho, self.kappa, self.h
        gs, ds, us, lams, eds, mus = [], [], [], [], [], []
        for ai, area in enumerate(self.areas):
            g = np.zeros((len(area.generators), T))
            for i, cols in enumerate(self.gen_cols[ai]):
                if cols is None:
                    g[i] = self.gen_base[ai][i]
                else:
                    g[i] = self.gen_base[ai][i] + x[cols].sum(axis=1) * rho
            gs.append(g)
            info, sf = self.fleet_info[ai], area.fleet_scale
            if info["kind"] == "device":
                u = info["fixed"].copy()
                ed = np.zeros(info["N"])
                for j, (slots, cols) in info["cols"].items():
                    u[j, slots] = x[cols] * rho / sf
                    ed[j] = y[info["rows"][j]] * kappa / rho
                us.append(u)
                ds.append(u.sum(axis=0) * sf)
                eds.append(ed)
                mus.append(np.zeros(0))
            elif info["kind"] == "aggregate":
                d = np.zeros(T)
                live = info["cols"] >= 0
                d[live] = x[info["cols"][live]] * rho
                ds.append(d)
                us.append(None)
                eds.append(np.array([y[info["total_row"]] * kappa / rho]) if info["total_row"] is not None else np.zeros(0))
                mus.append(np.array([0.0 if r is None else z[r] * kappa / (rho * h) for r in info["ineq"]]))
            else:
                ds.append(np.zeros(T))
                us.append(None)
                eds.append(np.zeros(0))
                mus.append(np.zeros(0))
            lams.append(-y[self.bal_rows[ai]] * kappa / (rho * h))
        p = np.zeros((len(self.lines), T))
        for li, cols in enumerate(self.line_cols):
            if cols is not None:
                p[li] = x[cols] * rho
        mu_joint = np.array([0.0 if r is None else z[r] * kappa / (rho * h) for r in self.joint_rows])
        raw = RawSolution(status, np.nan, gs, ds, us, p, lams, eds, mus, mu_joint, iterations)
        raw.objective = self.objective_of(raw)
        return raw

    def objective_of(self, raw: RawSolution) -> float:
        total = 0.0
        for ai, area in enumerate(self.areas):
            for i, gen in enumerate(area.generators):
                total += self.h * float(np.sum(gen.cost(raw.g[ai][i])))
        return total

    def pack(self, raw: RawSolution) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Inverse of :meth:`unpack`: named values back to scaled QP vectors."""
        T, rho, kappa, h = self.T, self.rho, self.kappa, self.h
        x = np.zeros(self.n)
        y = np.zeros(self.qp.A.shape[0])
        z = np.zeros(self.qp.G.shape[0])
        for ai, area in enumerate(self.areas):
            for i, cols in enumerate(self.gen_cols[ai]):
                if cols is None:
                    continue
                gen = area.generators[i]
                if gen.cost.kind == "piecewise_linear":
                    widths = np.diff(gen.cost.breakpoints)
                    excess = raw.g[ai][i] - self.gen_base[ai][i]
                    lo = np.concatenate([[0.0], np.cumsum(widths)[:-1]])
                    seg = np.clip(excess[:, None] - lo[None, :], 0.0, widths[None, :])
                    x[cols] = seg / rho
                else:
                    x[cols[:, 0]] = raw.g[ai][i] / rho
            info, sf = self.fleet_info[ai], area.fleet_scale
            if info["kind"] == "device":
                for j, (slots, cols) in info["cols"].items():
                    x[cols] = raw.u[ai][j, slots] * sf / rho
                    if len(raw.energy_duals[ai]):
                        y[info["rows"][j]] = raw.energy_duals[ai][j] * rho / kappa
            elif info["kind"] == "aggregate":
                live = info["cols"] >= 0
                x[info["cols"][live]] = raw.d[ai][live] / rho
                if info["total_row"] is not None and len(raw.energy_duals[ai]):
                    y[info["total_row"]] = raw.energy_duals[ai][0] * rho / kappa
                for k, r in enumerate(info["ineq"]):
                    if r is not None:
                        z[r] = raw.mu[ai][k] * rho * h / kappa
            y[self.bal_rows[ai]] = -raw.lam[ai] * rho * h / kappa
        for li, cols in enumerate(self.line_cols):
            if cols is not None:
                x[cols] = raw.p[li] / rho
        for k, r in enumerate(self.joint_rows):
            if r is not None:
                z[r] = raw.mu_joint[k] * rho * h / kappa
        return x, y, z

    # ------------------------------------------------------------- checking
    def kkt_residual(self, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> float:
        """Worst scaled violation of primal/dual feasibility, stationarity and complementarity.

        Bound multipliers are not inputs: each variable takes the bound dual
        that best cancels its stationarity residual, which is then charged
        through complementarity against the distance to that bound.
        """
        qp = self.qp
        bnorm = 1.0 + max(np.abs(qp.b).max(initial=0.0), np.abs(qp.h).max(initial=0.0))
        cnorm = 1.0 + np.abs(qp.c).max(initial=0.0)
        scale_obj = 1.0 + abs(qp.objective(x))
        r = qp.q * x + qp.c + qp.A.T @ y + qp.G.T @ z
        L, U = np.isfinite(qp.lb), np.isfinite(qp.ub)
        zl = np.where(L, np.maximum(r, 0.0), 0.0)
        zu = np.where(U, np.maximum(-r, 0.0), 0.0)
        stat = np.abs(r - zl + zu).max(initial=0.0) / cnorm
        comp_b = (np.where(L, zl * np.abs(x - np.where(L, qp.lb, 0.0)), 0.0)
                  + np.where(U, zu * np.abs(np.where(U, qp.ub, 0.0) - x), 0.0))
        slack = qp.h - qp.G @ x
        primal = max(
            np.abs(qp.A @ x - qp.b).max(initial=0.0),
            np.maximum(-slack, 0.0).max(initial=0.0),
            np.maximum(np.where(L, qp.lb - x, 0.0), 0.0).max(initial=0.0),
            np.maximum(np.where(U, x - qp.ub, 0.0), 0.0).max(initial=0.0),
        ) / bnorm
        dual = np.maximum(-z, 0.0).max(initial=0.0)
        comp = max(comp_b.max(initial=0.0), np.abs(z * slack).max(initial=0.0)) / scale_obj
        return float(max(stat, primal, dual, comp))

    def solve(self, tol: float = SOLVER_TOL, max_iter: int = MAX_ITER) -> RawSolution:
        res = solve_qp(self.qp, tol=tol, accept_tol=KKT_TOL, max_iter=max_iter)
        raw = self.unpack(res.x, res.y, res.z, res.status, res.iterations)
        if res.status == "optimal":
            raw.kkt_residual = self.kkt_residual(*self.pack(raw))
        return raw


def _precheck(areas: Sequence[AreaModel], lines: Sequence[LineModel]) -> str | None:
    """Cheap infeasibility screen before building the QP."""
    total_cap = sum(g.g_max for a in areas for g in a.generators)
    total_load = sum(np.asarray(a.inflexible) for a in areas)
    if np.any(total_load > total_cap + 1e-9 * max(1.0, total_cap)):
        return "inflexible demand exceeds total generation capacity"
    for ai, a in enumerate(areas):
        cap = sum(g.g_max for g in a.generators) + sum(l.p_bar for l in lines if ai in (l.from_area, l.to_area))
        if np.any(np.asarray(a.inflexible) > cap + 1e-9 * max(1.0, cap)):
            return "area demand exceeds local generation plus import capacity"
    return None


def solve_areas(areas: Sequence[AreaModel], lines: Sequence[LineModel], horizon: TimeHorizon,
                joint: ConstraintSet | None = None, tol: float = SOLVER_TOL) -> RawSolution:
    why = _precheck(areas, lines)
    if why is not None:
        T = horizon.num_steps
        empty = [np.zeros(0) for _ in areas]
        return RawSolution("infeasible", np.nan, [np.zeros((len(a.generators), T)) for a in areas],
                           [np.zeros(T) for _ in areas], [None for _ in areas], np.zeros((len(lines), T)),
                           [np.zeros(T) for _ in areas], empty, empty, np.zeros(0))
    return CompiledModel(areas, lines, horizon, joint).solve(tol=tol)


def solve_per_device(problem: UcProblem, tol: float = SOLVER_TOL) -> Solution:
    """Per-device model: one decision variable per device and available slot."""
    if problem.fleet_model is not None and not isinstance(problem.fleet_model, PerDevice):
        raise TypeError("solve_per_device needs a PerDevice fleet model")
    return Solution.from_raw(solve_areas([problem.area()], [], problem.horizon, tol=tol))


def solve_aggregate(problem: UcProblem, tol: float = SOLVER_TOL) -> Solution:
    """Aggregate model: demand profile ``d`` bounded by the supplied constraint set."""
    if problem.fleet_model is not None and not isinstance(problem.fleet_model, Aggregate):
        raise TypeError("solve_aggregate needs an Aggregate fleet model")
    return Solution.from_raw(solve_areas([problem.area()], [], problem.horizon, tol=tol))


def solve(problem: UcProblem, tol: float = SOLVER_TOL) -> Solution:
    return Solution.from_raw(solve_areas([problem.area()], [], problem.horizon, tol=tol))


def kkt_residual(problem: UcProblem, solution: Solution) -> float:
    """Scaled KKT violation of ``solution`` for ``problem``, recomputed from its named fields."""
    if solution.status != "optimal":
        raise ValueError("kkt_residual needs an optimal solution")
    model = CompiledModel([problem.area()], [], problem.horizon)
    return model.kkt_residual(*model.pack(solution.to_raw()))


def marginal_prices(solution: Solution) -> np.ndarray:
    """Per-slot marginal price of energy (duals of the power-balance rows)."""
    if solution.status != "optimal":
        raise ValueError("marginal prices need an optimal solution")
    return np.asarray(solution.lam, dtype=float).copy()
