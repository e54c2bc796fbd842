import math
import random

import pytest

from vrpd.construct import InfeasibleInstanceError, greedy_initialize
from vrpd.instance import Fleet, GeneratorSpec, generate_instance
from vrpd.operators import NS_MOVES, Move, apply_move
from vrpd.solution import (EvalConfig, InfeasibleSolutionError, SearchScorer, Solution, Sortie, TruckRoute,
                           arc_usage, canonical_hash, check_feasibility, clone_solution, evaluate, load_solution,
                           save_solution, simulate_timeline)

from conftest import make_instance

ONE_TRUCK = Fleet(num_trucks=1, num_drones=1, truck_drone_capacity=1)


def single_customer():
    return make_instance([(3, 4, 8.0)], fleet=ONE_TRUCK)


def sync_instance():
    # A(10,0) by truck, B(5,5) by drone, hub H at A's location
    return make_instance([(10, 0, 8.0), (5, 5, 2.0)], hubs=[(10, 0)], fleet=ONE_TRUCK)


def sync_solution():
    return Solution([TruckRoute(0, [0, 1, 3, 0])], [Sortie(0, 0, [2], 2)], "t", 0)


def test_evaluate_single_customer():
    res = evaluate(single_customer(), Solution([TruckRoute(0, [0, 1, 0])], [], "t", 0))
    assert res.feasible
    assert res.operational_time == pytest.approx(14.0)
    assert res.total_cost == pytest.approx(114.0)


def test_empty_solution_on_empty_instance():
    inst = make_instance([], fleet=ONE_TRUCK)
    res = evaluate(inst, Solution([], [], "t", 0))
    assert res.feasible and res.total_cost == 0.0 and res.operational_time == 0.0


def test_synchronisation_wait():
    inst, sol = sync_instance(), sync_solution()
    tl = simulate_timeline(inst, sol)
    st = tl.sorties[0]
    flight = 2 * math.hypot(5, 5) / 2.0
    assert st.landing_time == pytest.approx(flight)
    assert st.truck_arrival == pytest.approx(10.0)
    assert st.drone_wait == pytest.approx(2.9289, abs=1e-4)
    assert st.truck_wait == pytest.approx(0.0)
    truck = tl.trucks[0]
    assert truck.departure[2] == pytest.approx(10.0)
    res = evaluate(inst, sol)
    assert res.operational_time == pytest.approx(20.0)
    # drone cost: 0.2 * 7.0711
    assert res.total_cost - (100.0 + 20.0) == pytest.approx(1.41421, abs=1e-4)


def test_truck_waits_for_late_drone():
    inst = make_instance([(1, 0, 8.0), (20, 20, 2.0)], hubs=[(2, 0)], fleet=Fleet(num_trucks=1, num_drones=1))
    sol = Solution([TruckRoute(0, [0, 1, 3, 0])], [Sortie(0, 0, [2], 2)], "t", 0)
    st = simulate_timeline(inst, sol).sorties[0]
    assert st.drone_wait == pytest.approx(0.0)
    assert st.truck_wait == pytest.approx(st.landing_time - 2.0)


def test_trivial_solution_is_feasible():
    inst = make_instance([(1, 2, 3.0), (4, 1, 2.0), (-3, 2, 9.0)], fleet=ONE_TRUCK)
    assert check_feasibility(inst, Solution([TruckRoute(0, [0, 1, 2, 3, 0])], [], "t", 0)) == []


def test_payload_violation():
    inst = make_instance([(1, 1, 3.0), (2, 1, 3.0), (5, 5, 8.0)], fleet=Fleet(num_trucks=1, num_drones=1))
    sol = Solution([TruckRoute(0, [0, 3, 0])], [Sortie(0, 0, [1, 2], 2)], "t", 0)
    names = [v.name for v in check_feasibility(inst, sol)]
    assert names == ["DronePayloadExceeded"]


def test_customer_served_twice():
    inst = make_instance([(1, 1, 3.0), (2, 1, 8.0)], fleet=Fleet(num_trucks=1, num_drones=1))
    sol = Solution([TruckRoute(0, [0, 1, 2, 0])], [Sortie(0, 0, [1], 3)], "t", 0)
    names = {v.name for v in check_feasibility(inst, sol)}
    assert "CustomerMultiplyServed" in names
    res = evaluate(inst, sol)
    assert not res.feasible and res.operational_time == math.inf and res.total_cost == math.inf


def test_timeline_rejects_infeasible():
    inst = make_instance([(1, 1, 3.0)], fleet=ONE_TRUCK)
    with pytest.raises(InfeasibleSolutionError):
        simulate_timeline(inst, Solution([], [], "t", 0))


def test_no_sortie_time_is_route_sum(inst12):
    sol = greedy_initialize(inst12, 0)
    sol.sorties = []
    served = {c for r in sol.routes for c in r.stops}
    missing = [c for c in inst12.customers if c not in served]
    sol.routes[0].stops[-1:-1] = missing
    tt = inst12.truck_times
    res = evaluate(inst12, sol)
    direct = max(sum(tt[a][b] for a, b in zip(r.stops, r.stops[1:])) for r in sol.routes)
    assert res.feasible
    assert res.operational_time == pytest.approx(direct, abs=1e-9)


def test_hash_and_clone(inst12):
    sol = greedy_initialize(inst12, 1)
    dup = clone_solution(sol)
    assert canonical_hash(dup) == canonical_hash(sol)
    dup.sorties.reverse()
    dup.routes.reverse()
    assert canonical_hash(dup) == canonical_hash(sol)
    dup.routes[0].stops[1], dup.routes[0].stops[2] = dup.routes[0].stops[2], dup.routes[0].stops[1]
    assert canonical_hash(dup) != canonical_hash(sol)


def test_greedy_initialize(inst12):
    for seed in range(5):
        assert check_feasibility(inst12, greedy_initialize(inst12, seed)) == []
    inst20 = generate_instance(GeneratorSpec(20, seed=42))
    assert greedy_initialize(inst20, 7) == greedy_initialize(inst20, 7)
    one = make_instance([(3, 4, 8.0)], fleet=ONE_TRUCK)
    assert [r.stops for r in greedy_initialize(one, 0).routes] == [[0, 1, 0]]


def test_greedy_initialize_rejects_overloaded_instance():
    inst = make_instance([(1, 1, 80.0), (2, 2, 80.0)], fleet=Fleet(num_trucks=1, num_drones=1))
    with pytest.raises(InfeasibleInstanceError):
        greedy_initialize(inst, 0)


def test_solution_round_trip(tmp_path, inst12):
    sol = greedy_initialize(inst12, 0)
    save_solution(inst12, sol, tmp_path / "s.json")
    back = load_solution(tmp_path / "s.json")
    assert canonical_hash(back) == canonical_hash(sol)


def _random_solutions(inst, n, seed):
    rng = random.Random(seed)
    sol = greedy_initialize(inst, seed)
    for _ in range(n):
        out = apply_move(inst, sol, Move(NS_MOVES[rng.randrange(8)]), rng)
        yield out.solution
        if rng.random() < 0.5:
            sol = out.solution


def independent_cost(inst, sol):
    """F per route + C^T * truck arc time + C^D * drone flight time."""
    tt, dt, c = inst.truck_times, inst.drone_times, inst.costs
    truck = sum(tt[a][b] for r in sol.routes for a, b in zip(r.stops, r.stops[1:]))
    drone = 0.0
    for s in sol.sorties:
        stops = next(r.stops for r in sol.routes if r.truck == s.truck)
        path = [stops[s.launch_pos], *s.customers, stops[s.retrieval_pos]]
        drone += sum(dt[a][b] for a, b in zip(path, path[1:]))
    return c.truck_fixed * len(sol.routes) + c.truck_per_time * truck + c.drone_per_time * drone


def test_evaluator_properties(inst30):
    scorer = SearchScorer(inst30)
    cost_scorer = SearchScorer(inst30, "cost")
    seen = 0
    for sol in _random_solutions(inst30, 400, 5):
        res = evaluate(inst30, sol)
        assert evaluate(inst30, sol) == res
        assert scorer(sol) == res.operational_time
        assert cost_scorer(sol) == res.total_cost
        if res.feasible:
            seen += 1
            assert res.total_cost == pytest.approx(independent_cost(inst30, sol), rel=1e-12)
            assert res.total_cost >= inst30.costs.truck_fixed * res.truck_count
            for arriving, departing in arc_usage(inst30, sol).hub_balance(inst30).values():
                assert arriving == departing
    assert seen > 100


def test_config_variants(inst12):
    sol = greedy_initialize(inst12, 0)
    base = evaluate(inst12, sol)
    summed = evaluate(inst12, sol, EvalConfig(time_mode="sum"))
    assert summed.operational_time == pytest.approx(sum(base.per_truck_completion))
    per_arc = evaluate(inst12, sol, EvalConfig(fixed_cost="arc"))
    arcs = sum(len(r.stops) - 1 for r in sol.routes)
    assert per_arc.total_cost - base.total_cost == pytest.approx(inst12.costs.truck_fixed * (arcs - len(sol.routes)))
