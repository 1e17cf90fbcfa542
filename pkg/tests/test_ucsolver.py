import json
from dataclasses import replace

import numpy as np
import pytest

from fleetagg import Fleet, TimeHorizon
from fleetagg.experiments import run_method
from fleetagg.reduction import ConstraintSet, exhaustive_constraints
from fleetagg.scenario import ScenarioSpec, random_uc_instance
from fleetagg.ucsolver import (
    Aggregate,
    CostFunction,
    Generator,
    PerDevice,
    UcProblem,
    kkt_residual,
    marginal_prices,
    solve,
    solve_aggregate,
    solve_per_device,
)

from oracles import small_fleet, waterfill

QUAD = Generator(0.0, 10.0, CostFunction.quadratic(1.0, 0.0))
D3 = np.array([3.0, 1.0, 2.0])


def _two_devices():
    return small_fleet([(1.0, 1.0, [1, 2, 3]), (1.0, 1.0, [1, 2, 3])], 3)


# ------------------------------------------------------------------ costs
def test_cost_function_validation():
    with pytest.raises(ValueError):
        CostFunction.quadratic(-1.0)
    with pytest.raises(ValueError):
        CostFunction.piecewise_linear([0, 1, 2], [2.0, 1.0])
    with pytest.raises(ValueError):
        CostFunction.piecewise_linear([0, 1], [1.0, 2.0])
    with pytest.raises(ValueError):
        Generator(2.0, 1.0)
    with pytest.raises(ValueError):
        Generator(0.0, 5.0, CostFunction.piecewise_linear([0, 4], [1.0]))


def test_cost_values():
    assert CostFunction.quadratic(2.0, 3.0)(2.0) == 14.0
    pwl = CostFunction.piecewise_linear([0, 5, 10], [1.0, 3.0])
    assert pwl(7.0) == 5.0 + 6.0
    assert pwl.derivative(7.0) == 3.0
    assert CostFunction.from_dict(pwl.to_dict()) == pwl


# --------------------------------------------------------------- per-device
def test_no_fleet_dispatch_follows_demand():
    sol = solve(UcProblem(TimeHorizon(3), [QUAD], D3))
    assert sol.status == "optimal"
    np.testing.assert_allclose(sol.g[0], D3, atol=1e-9)
    assert sol.objective == pytest.approx(14.0, rel=1e-12)


def test_waterfilling_per_device():
    fleet = _two_devices()
    sol = solve_per_device(UcProblem(TimeHorizon(3), [QUAD], D3, PerDevice(fleet)))
    expect = waterfill(D3, 2.0)
    np.testing.assert_allclose(expect, [0.0, 1.5, 0.5], atol=1e-9)
    np.testing.assert_allclose(sol.d, expect, atol=1e-7)
    assert sol.objective == pytest.approx(21.5, rel=1e-9)


@pytest.mark.parametrize("seed", range(6))
def test_per_device_equals_exhaustive_small(seed):
    inst = random_uc_instance(ScenarioSpec("uniform_subsets", 4, 3, seed))
    m1 = run_method(inst, "m1")[0]
    m2 = run_method(inst, "m2")[0]
    assert m1.objective == pytest.approx(m2.objective, rel=1e-7)


@pytest.mark.parametrize("seed", range(4))
def test_per_device_schedules_are_valid(seed):
    inst = random_uc_instance(ScenarioSpec("contiguous_normal", 12, 15, seed))
    sol = run_method(inst, "m1")[0]
    u = sol.u
    for j, dev in enumerate(inst.fleet.devices):
        outside = np.ones(12, dtype=bool)
        outside[np.array(dev.availability.slots) - 1] = False
        assert np.all(u[j] >= -1e-9) and np.all(u[j] <= dev.p_max + 1e-9)
        assert np.all(np.abs(u[j][outside]) <= 1e-12)
        assert u[j].sum() == pytest.approx(dev.e_target, abs=1e-8)
    np.testing.assert_allclose(sol.g.sum(axis=0), inst.inflexible + u.sum(axis=0), rtol=1e-8, atol=1e-8)


def test_per_device_rejects_aggregate_model():
    with pytest.raises(TypeError):
        solve_per_device(UcProblem(TimeHorizon(3), [QUAD], D3, Aggregate(None, 1.0)))
    with pytest.raises(TypeError):
        solve_aggregate(UcProblem(TimeHorizon(3), [QUAD], D3, PerDevice(_two_devices())))


# ---------------------------------------------------------------- aggregate
def test_waterfilling_exhaustive_aggregate():
    fleet = _two_devices()
    prob = UcProblem(TimeHorizon(3), [QUAD], D3, Aggregate.from_fleet(fleet, exhaustive_constraints(fleet)))
    sol = solve_aggregate(prob)
    np.testing.assert_allclose(sol.d, [0.0, 1.5, 0.5], atol=1e-7)
    assert sol.objective == pytest.approx(21.5, rel=1e-9)


def test_single_full_support_gives_flat_profile():
    fleet = small_fleet([(2.0, 3.0, [1, 2, 3, 4]), (1.0, 2.0, [2, 3, 4])], 4)
    whole = exhaustive_constraints(fleet)
    only_full = ConstraintSet([c for c in whole if c.support.mask == 0b1111], "custom", 4)
    sol = solve(UcProblem(TimeHorizon(4), [QUAD], np.full(4, 2.0), Aggregate.from_fleet(fleet, only_full)))
    np.testing.assert_allclose(sol.d, np.full(4, 5.0 / 4), atol=1e-8)


def test_removing_constraints_never_raises_the_optimum():
    inst = random_uc_instance(ScenarioSpec("uniform_subsets", 6, 8, 3))
    full = exhaustive_constraints(inst.fleet)
    rng = np.random.default_rng(3)
    prev = None
    keep = list(full.constraints)
    for _ in range(4):
        sol = solve(UcProblem(inst.horizon, inst.generators, inst.inflexible,
                              Aggregate.from_fleet(inst.fleet, ConstraintSet(keep, "custom", 6))))
        if prev is not None:
            assert sol.objective <= prev * (1 + 1e-9)
        prev = sol.objective
        keep = [keep[i] for i in sorted(rng.choice(len(keep), len(keep) // 2, replace=False))]


@pytest.mark.parametrize("method", ["m1", "m2", "m5"])
def test_affine_cost_objective_is_price_times_energy(method):
    # flat price: every feasible schedule is optimal, so only the objective is compared
    inst = random_uc_instance(ScenarioSpec("uniform_subsets", 5, 6, 8))
    inst.generators = [Generator(0.0, 100.0, CostFunction.affine(2.0))]
    sol = run_method(inst, method)[0]
    assert sol.objective == pytest.approx(2.0 * (inst.inflexible.sum() + inst.fleet.total_energy()), rel=1e-8)


def test_piecewise_and_affine_costs():
    pwl = Generator(0.0, 10.0, CostFunction.piecewise_linear([0, 5, 10], [1.0, 3.0]))
    sol = solve(UcProblem(TimeHorizon(2), [pwl], [3.0, 7.0]))
    assert sol.objective == pytest.approx(3.0 + 5.0 + 6.0, rel=1e-8)
    cheap = Generator(0.0, 4.0, CostFunction.affine(1.0))
    dear = Generator(0.0, 10.0, CostFunction.affine(2.0))
    sol = solve(UcProblem(TimeHorizon(1), [cheap, dear], [6.0]))
    assert sol.objective == pytest.approx(4.0 + 4.0, rel=1e-8)
    assert sol.lam[0] == pytest.approx(2.0, rel=1e-6)


def test_fixed_generator_injection():
    fixed = Generator(1.0, 1.0, CostFunction.quadratic(1.0, 0.0))
    sol = solve(UcProblem(TimeHorizon(3), [fixed, QUAD], D3))
    np.testing.assert_allclose(sol.g[0], 1.0)
    np.testing.assert_allclose(sol.g[1], D3 - 1.0, atol=1e-9)
    assert sol.objective == pytest.approx(3.0 + 4.0 + 0.0 + 1.0, rel=1e-9)


def test_step_hours_scale_energy_and_cost():
    fleet = small_fleet([(2.0, 1.0, [1, 2])], 2, step_hours=0.5)
    sol = solve(UcProblem(TimeHorizon(2, 0.5), [QUAD], [1.0, 2.0], PerDevice(fleet)))
    assert sol.d.sum() * 0.5 == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(sol.d, waterfill([1.0, 2.0], 2.0), atol=1e-7)


def test_infeasible_generation_is_reported():
    small = Generator(0.0, 2.0, CostFunction.quadratic(1.0))
    sol = solve(UcProblem(TimeHorizon(3), [small], D3))
    assert sol.status == "infeasible"
    with pytest.raises(ValueError):
        kkt_residual(UcProblem(TimeHorizon(3), [small], D3), sol)
    with pytest.raises(ValueError):
        marginal_prices(sol)


def test_fleet_exceeding_capacity_is_infeasible():
    fleet = small_fleet([(5.0, 5.0, [1])], 1)
    sol = solve(UcProblem(TimeHorizon(1), [Generator(0.0, 3.0)], [0.0], PerDevice(fleet)))
    assert sol.status != "optimal"


# ---------------------------------------------------------------------- KKT
def _waterfill_problem():
    return UcProblem(TimeHorizon(3), [QUAD], D3, Aggregate(None, 2.0))


def test_kkt_of_analytic_point():
    prob = _waterfill_problem()
    sol = solve(prob)
    hand = replace(sol, d=np.array([0.0, 1.5, 0.5]), g=np.array([[3.0, 2.5, 2.5]]), lam=np.array([6.0, 5.0, 5.0]),
                   energy_duals=np.array([-5.0]))
    assert kkt_residual(prob, hand) <= 1e-8


def test_kkt_detects_perturbation():
    prob = _waterfill_problem()
    sol = solve(prob)
    d = sol.d + np.array([0.1, -0.1, 0.0])
    bad = replace(sol, d=d, g=(D3 + d)[None, :])
    assert kkt_residual(prob, bad) > 1e-3


@pytest.mark.parametrize("method", ["m1", "m2", "m3", "m5"])
def test_reported_optimal_has_small_residual(method):
    inst = random_uc_instance(ScenarioSpec("uniform_subsets", 8, 10, 21))
    sol = run_method(inst, method)[0]
    assert sol.status == "optimal" and sol.kkt_residual <= 1e-8


# ------------------------------------------------------------------- prices
def test_interior_price_is_derivative():
    sol = solve(_waterfill_problem())
    assert marginal_prices(sol)[1] == pytest.approx(5.0, rel=1e-8)
    np.testing.assert_allclose(marginal_prices(sol), 2 * sol.g[0], rtol=1e-7)


def test_price_at_capped_generator():
    cheap = Generator(0.0, 2.0, CostFunction.quadratic(1.0, 0.0))
    dear = Generator(0.0, 10.0, CostFunction.quadratic(1.0, 10.0))
    sol = solve(UcProblem(TimeHorizon(2), [cheap, dear], [3.0, 4.0]))
    np.testing.assert_allclose(sol.g[0], 2.0, atol=1e-7)
    assert np.all(sol.lam >= 2 * 1.0 * 2.0 + 0.0 - 1e-7)


@pytest.mark.parametrize("seed", range(3))
def test_price_matches_finite_difference(seed):
    inst = random_uc_instance(ScenarioSpec("uniform_subsets", 6, 8, 40 + seed))
    base = run_method(inst, "m2")[0]
    eps = 1e-4
    for t in range(6):
        bumped = inst.inflexible.copy()
        bumped[t] += eps
        prob = UcProblem(inst.horizon, inst.generators, bumped,
                         Aggregate.from_fleet(inst.fleet, exhaustive_constraints(inst.fleet)))
        fd = (solve(prob).objective - base.objective) / eps
        assert fd == pytest.approx(base.lam[t], rel=1e-2)


def test_solution_json_fields():
    sol = solve(_waterfill_problem())
    data = json.loads(sol.to_json())
    assert set(data) == {"status", "objective", "kkt_residual", "iterations", "d", "g", "lambda", "mu", "u"}
    assert data["status"] == "optimal" and data["u"] is None


def test_empty_fleet_model_variants_agree():
    fleet = Fleet([], TimeHorizon(3))
    a = solve(UcProblem(TimeHorizon(3), [QUAD], D3, PerDevice(fleet)))
    b = solve(UcProblem(TimeHorizon(3), [QUAD], D3, Aggregate.from_fleet(fleet, exhaustive_constraints(fleet))))
    assert a.objective == pytest.approx(14.0) and b.objective == pytest.approx(14.0)
