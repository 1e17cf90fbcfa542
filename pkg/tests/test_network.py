import json

import numpy as np
import pytest

from fleetagg import TimeHorizon
from fleetagg.experiments import run_method
from fleetagg.network import (
    REPLICA_COSTS,
    Area,
    NetworkProblem,
    TieLine,
    build_constraint_sets,
    congestion_profile,
    desk_replica,
    solve_network,
    validate_area_profiles,
)
from fleetagg.reduction import HorizonTooLargeError
from fleetagg.scenario import Instance, ScenarioSpec, generate_fleet, uniform_demand
from fleetagg.ucsolver import CostFunction, Generator

T = 6


def _areas(seed=0, n=(6, 9)):
    out = []
    for k, (a, b) in enumerate([(1.0, 2.0), (2.0, 0.5)]):
        fleet = generate_fleet(ScenarioSpec("uniform_subsets", T, n[k], seed + k))
        dem = uniform_demand(T, 2.0, 10.0, seed + 10 + k)
        out.append(Area(k + 1, [Generator(0.0, 100.0, CostFunction.quadratic(a, b))], dem, fleet))
    return out


def _problem(p_bar, method="MM1", seed=0):
    return NetworkProblem(_areas(seed), [TieLine(1, 2, p_bar)], TimeHorizon(T), method)


def _single(area, method):
    inst = Instance(area.fleet, area.inflexible, area.generators)
    return run_method(inst, method, t_guard=10)[0]


# ---------------------------------------------------------------- validation
def test_validation_errors():
    with pytest.raises(ValueError):
        TieLine(1, 2, -1.0)
    with pytest.raises(ValueError):
        TieLine(1, 1, 1.0)
    areas = _areas()
    with pytest.raises(ValueError):
        NetworkProblem(areas, [TieLine(1, 3, 1.0)], TimeHorizon(T))
    with pytest.raises(ValueError):
        NetworkProblem([areas[0], areas[0]], [], TimeHorizon(T))
    with pytest.raises(ValueError):
        NetworkProblem(areas, [], TimeHorizon(T), "MM9")
    with pytest.raises(ValueError):
        NetworkProblem(areas, [], TimeHorizon(T + 1))
    with pytest.raises(ValueError):
        Area(3, [], np.zeros(T + 1), areas[0].fleet)


# -------------------------------------------------------------- decoupling
@pytest.mark.parametrize("method,single", [("MM1", "m1"), ("MM2", "m2"), ("MM3", "m5")])
def test_zero_capacity_decouples(method, single):
    prob = _problem(0.0, method)
    sol = solve_network(prob)
    assert sol.status == "optimal"
    parts = [_single(a, single) for a in prob.areas]
    assert sol.objective == pytest.approx(sum(p.objective for p in parts), rel=1e-7)
    assert congestion_profile(sol).degenerate
    assert congestion_profile(sol).count == 0


def test_huge_capacity_equalises_prices():
    sol = solve_network(_problem(1e4))
    assert sol.status == "optimal"
    assert sol.price_gap().max() <= 1e-4
    assert congestion_profile(sol).count == 0


@pytest.mark.parametrize("p_bar", [0.5, 2.0, 1e4])
def test_balance_and_line_limits(p_bar):
    prob = _problem(p_bar)
    sol = solve_network(prob)
    a1, a2 = prob.areas
    p = sol.p[0]
    # the line runs from area 1 to area 2
    np.testing.assert_allclose(sol.g[0].sum(axis=0) - p, a1.inflexible + sol.d[0], atol=1e-7)
    np.testing.assert_allclose(sol.g[1].sum(axis=0) + p, a2.inflexible + sol.d[1], atol=1e-7)
    assert np.all(np.abs(p) <= p_bar + 1e-9)
    assert sol.kkt_residual <= 1e-8


@pytest.mark.parametrize("p_bar", [0.5, 2.0, 5.0])
def test_price_gap_implies_congestion_and_direction(p_bar):
    sol = solve_network(_problem(p_bar, seed=3))
    cong = congestion_profile(sol)
    gap = sol.lam[1] - sol.lam[0]
    for t in range(T):
        if abs(gap[t]) > 1e-6 * max(1.0, np.abs(sol.lam).max()):
            assert cong.flags[t]
            # power flows from the cheaper area to the dearer one
            assert np.sign(sol.p[0, t]) == np.sign(gap[t])


# -------------------------------------------------------------- relaxations
@pytest.mark.parametrize("p_bar", [0.0, 0.5, 2.0, 1e4])
@pytest.mark.parametrize("seed", range(3))
def test_reduced_methods_lower_bound_mm1(p_bar, seed):
    ref = solve_network(_problem(p_bar, "MM1", seed)).objective
    for m in ("MM2", "MM3", "MM4"):
        sol = solve_network(_problem(p_bar, m, seed))
        assert sol.status == "optimal"
        assert sol.objective <= ref + 1e-7 * abs(ref)
    mm2 = solve_network(_problem(p_bar, "MM2", seed)).objective
    assert mm2 == pytest.approx(ref, rel=1e-7)


@pytest.mark.parametrize("seed", range(3))
def test_strictly_lower_objective_is_flagged(seed):
    for p_bar in (0.5, 2.0, 1e4):
        ref = solve_network(_problem(p_bar, "MM1", seed)).objective
        for m in ("MM3", "MM4"):
            prob = _problem(p_bar, m, seed)
            sol = solve_network(prob)
            check = validate_area_profiles(sol, prob.areas)
            if sol.objective < ref - 1e-6 * abs(ref):
                assert not check.all_feasible


def test_mm1_profiles_always_feasible():
    prob = _problem(1.0)
    sol = solve_network(prob)
    check = validate_area_profiles(sol, prob.areas)
    assert check.all_feasible and check.merged is None


def test_mm4_uses_merged_selection():
    prob = _problem(1e4, "MM4")
    sets = build_constraint_sets(prob)
    assert set(sets) == {"merged"} and len(sets["merged"]) == T
    sol = solve_network(prob, constraint_sets=sets)
    check = validate_area_profiles(sol, prob.areas)
    assert check.merged is not None
    assert set(check.to_dict()) == {"per_area", "merged", "all_feasible"}


def test_mm2_guard():
    with pytest.raises(HorizonTooLargeError):
        solve_network(desk_replica(1.0, "MM2", devices=(3, 3)))


# --------------------------------------------------------------- replica
def test_replica_layout():
    prob = desk_replica(5.0, devices=(40, 60))
    assert [a.id for a in prob.areas] == [1, 2]
    assert [len(a.fleet) for a in prob.areas] == [40, 60]
    for area, (a, b) in zip(prob.areas, REPLICA_COSTS):
        assert area.generators[0].cost.a == a and area.generators[0].cost.b == b
    assert prob.lines == [TieLine(2, 1, 5.0)]
    assert prob.fleet_scale == 1e-6
    assert all(d.p_max == 5000.0 for a in prob.areas for d in a.fleet.devices)


def test_small_replica_patterns():
    base = desk_replica(0.5, devices=(40, 60))
    congested = solve_network(base)
    assert congestion_profile(congested).count == 24
    mm3 = solve_network(base.with_method("MM3"))
    assert mm3.objective == pytest.approx(congested.objective, rel=1e-6)
    free = solve_network(base.with_capacity(1000.0))
    mm4 = solve_network(base.with_method("MM4").with_capacity(1000.0))
    assert mm4.objective == pytest.approx(free.objective, rel=1e-6)
    assert free.price_gap().max() <= 1e-4
    # negative flow carries power from area 1 into area 2 under heavy congestion
    assert np.all(congested.p[0] < 0)


def test_solution_json():
    sol = solve_network(_problem(1.0))
    data = json.loads(sol.to_json())
    assert {"status", "method", "objective", "d", "g", "p", "lambda", "lines", "areas"} <= set(data)
    assert data["lines"] == [{"from": "1", "to": "2", "p_bar": 1.0}]
