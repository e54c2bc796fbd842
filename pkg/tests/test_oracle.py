import itertools
import math
import random

import pytest

from vrpd.engines import SearchBudget, solve_ns
from vrpd.instance import Fleet, GeneratorSpec, generate_instance
from vrpd.oracle import OracleRefusal, brute_force_oracle
from vrpd.solution import Solution, Sortie, TruckRoute, check_feasibility, evaluate

from conftest import make_instance, random_tiny


def naive_optimum(inst):
    """Enumerate every solution of the modelled class and evaluate each one."""
    cs, hubs = list(inst.customers), list(inst.hubs)
    K = inst.fleet.num_trucks
    modes = [[(k, m) for k in range(K) for m in (("truck", "drone") if inst.eligible[c] else ("truck",))] for c in cs]
    best = math.inf

    def routes_for(truck_custs):
        for r in range(len(hubs) + 1):
            for hs in itertools.permutations(hubs, r):
                for perm in itertools.permutations(truck_custs + list(hs)):
                    yield [0, *perm, 0]

    def sortie_options(stops, drone_custs):
        slots = [(lp, rp) for lp in range(len(stops) - 1) for rp in range(lp + 1, len(stops))
                 if inst.is_retrieval[stops[rp]]]
        return itertools.product(slots, repeat=len(drone_custs))

    for assign in itertools.product(*modes):
        per_truck = []
        for k in range(K):
            tc = [c for c, (kk, m) in zip(cs, assign) if kk == k and m == "truck"]
            dc = [c for c, (kk, m) in zip(cs, assign) if kk == k and m == "drone"]
            options = []
            if not tc and not dc:
                options.append(None)
            else:
                for stops in routes_for(tc):
                    for placement in sortie_options(stops, dc):
                        options.append((stops, [(lp, c, rp) for c, (lp, rp) in zip(dc, placement)]))
            per_truck.append(options)
        for combo in itertools.product(*per_truck):
            routes, sorties = [], []
            for k, opt in enumerate(combo):
                if opt is None:
                    continue
                stops, srt = opt
                routes.append(TruckRoute(k, list(stops)))
                sorties += [Sortie(k, lp, [c], rp) for lp, c, rp in srt]
            t = evaluate(inst, Solution(routes, sorties, inst.name, inst.seed)).operational_time
            best = min(best, t)
    return best


@pytest.mark.parametrize("seed", range(30))
def test_oracle_matches_naive_enumeration(seed):
    rng = random.Random(seed)
    inst = random_tiny(seed, n=rng.randint(1, 3), trucks=rng.randint(1, 2), drones=rng.randint(1, 2))
    res = brute_force_oracle(inst)
    naive = naive_optimum(inst)
    assert res.feasible == math.isfinite(naive)
    assert res.operational_time == pytest.approx(naive, abs=1e-9)
    if res.feasible:
        assert check_feasibility(inst, res.solution) == []
        assert evaluate(inst, res.solution).operational_time == pytest.approx(res.operational_time, abs=1e-9)


def test_oracle_examples():
    one = make_instance([(3, 4, 8.0)], fleet=Fleet(num_trucks=1, num_drones=1))
    assert brute_force_oracle(one).operational_time == pytest.approx(2 * 7.0)
    two = make_instance([(3, 4, 8.0), (-2, 6, 9.0)], fleet=Fleet(num_trucks=1, num_drones=1))
    tt = two.truck_times
    orders = [tt[0][1] + tt[1][2] + tt[2][0], tt[0][2] + tt[2][1] + tt[1][0]]
    assert brute_force_oracle(two).operational_time == pytest.approx(min(orders))
    empty = make_instance([], fleet=Fleet(num_trucks=1, num_drones=1))
    assert brute_force_oracle(empty).operational_time == 0.0


def test_oracle_refuses_nine_customers():
    with pytest.raises(OracleRefusal):
        brute_force_oracle(generate_instance(GeneratorSpec(9, seed=1)))


def test_oracle_reports_infeasible():
    inst = make_instance([(1, 1, 60.0), (2, 2, 60.0)], fleet=Fleet(num_trucks=1, num_drones=1))
    res = brute_force_oracle(inst)
    assert not res.feasible and res.solution is None


def test_oracle_is_deterministic():
    inst = generate_instance(GeneratorSpec(6, seed=4, fleet=Fleet(num_trucks=2, num_drones=1)))
    a, b = brute_force_oracle(inst), brute_force_oracle(inst)
    assert a.operational_time == b.operational_time and a.solution == b.solution


@pytest.mark.parametrize("seed", range(8))
def test_solvers_never_beat_oracle(seed):
    inst = generate_instance(GeneratorSpec(5 + seed % 3, seed=seed, fleet=Fleet(num_trucks=2, num_drones=1)))
    opt = brute_force_oracle(inst).operational_time
    tr = solve_ns(inst, SearchBudget(max_iterations=3000), seed=seed)
    assert tr.best_score >= opt - 1e-6
    assert all(r.score_after >= opt - 1e-6 for r in tr.records)
