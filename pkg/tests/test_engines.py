import csv
import random

import pytest

import vrpd.engines as engines
from vrpd.construct import greedy_initialize
from vrpd.engines import (SHUFFLE, BudgetError, ComponentSet, MAParams, SearchBudget, ShuffleConfig, UniformPolicy,
                          run_component_loop, solve_ma, solve_ns)
from vrpd.instance import Fleet, GeneratorSpec, generate_instance
from vrpd.operators import NS_MOVES, MoveKind, OperatorError
from vrpd.solution import check_feasibility, clone_solution

from conftest import make_instance


def wall_free(trace):
    return [(r.iter, r.move_kind, r.score_before, r.score_after, r.accepted, r.shuffled) for r in trace.records]


def check_trace(trace, k=None):
    best = trace.initial_score
    for r in trace.records:
        if not r.shuffled:
            assert r.accepted == (r.score_after < r.score_before - 1e-9)
        best = min(best, r.score_after)
    curve = trace.best_so_far()
    assert all(b <= a for a, b in zip(curve, curve[1:]))
    assert trace.best_score == pytest.approx(min([trace.initial_score] + [r.score_after for r in trace.records]))
    assert check_feasibility_ok(trace)


def check_feasibility_ok(trace):
    return trace.best_eval.feasible


def test_budget_requires_a_cap():
    with pytest.raises(BudgetError):
        SearchBudget()


def test_zero_iterations(inst12):
    tr = solve_ns(inst12, SearchBudget(max_iterations=0), seed=1)
    assert tr.records == [] and tr.best_score == tr.initial_score and tr.total_actions == 0
    init = greedy_initialize(inst12, 1)
    assert tr.best_solution == init


def test_one_customer_stays_at_initial():
    inst = make_instance([(3, 4, 8.0)], fleet=Fleet(num_trucks=1, num_drones=1))
    tr = solve_ns(inst, SearchBudget(max_iterations=500), seed=0)
    assert tr.best_score == tr.initial_score == pytest.approx(14.0)


def test_uniform_loop_equals_solve_ns(inst12):
    budget = SearchBudget(max_iterations=3000)
    a = solve_ns(inst12, budget, k=25, seed=4)
    b = run_component_loop(ComponentSet(), inst12, budget, UniformPolicy(NS_MOVES), 25, 4)
    assert wall_free(a) == wall_free(b)


def test_noop_policy_keeps_initial():
    inst = make_instance([(3, 4, 8.0), (5, 1, 9.0), (2, 2, 7.0)], fleet=Fleet(num_trucks=1, num_drones=1))
    components = ComponentSet(shuffler=ShuffleConfig(enabled=False))
    tr = run_component_loop(components, inst, SearchBudget(max_iterations=400),
                            UniformPolicy([MoveKind.SortieRemoval]), k=10, seed=0)
    assert tr.best_score == tr.initial_score
    tr = run_component_loop(ComponentSet(), inst, SearchBudget(max_iterations=400),
                            UniformPolicy([MoveKind.SortieRemoval]), k=10, seed=0)
    # 400 failures, each shuffle consumes one slot: floor(400 / (k + 1))
    assert tr.shuffle_count == sum(r.shuffled for r in tr.records) == 400 // 11


def test_shuffle_fires_after_k_failures(inst12):
    k = 7
    tr = solve_ns(inst12, SearchBudget(max_iterations=4000), k=k, seed=2)
    check_trace(tr)
    streak = 0
    for r in tr.records:
        if r.shuffled:
            assert streak == k
            streak = 0
        elif r.accepted:
            streak = 0
        else:
            streak += 1
        assert streak <= k
    assert tr.shuffle_count == sum(r.shuffled for r in tr.records) > 0


def test_k_one_shuffles_on_every_failure(inst12):
    tr = solve_ns(inst12, SearchBudget(max_iterations=300), k=1, seed=2)
    for prev, cur in zip(tr.records, tr.records[1:]):
        if not prev.shuffled and not prev.accepted:
            assert cur.shuffled


def test_no_shuffle_flag(inst12):
    tr = solve_ns(inst12, SearchBudget(max_iterations=2000), k=5, seed=2, shuffle_enabled=False)
    assert tr.shuffle_count == 0 and not any(r.shuffled for r in tr.records)


def test_ns_determinism(inst30):
    budget = SearchBudget(max_iterations=2000)
    a, b = solve_ns(inst30, budget, seed=9), solve_ns(inst30, budget, seed=9)
    assert wall_free(a) == wall_free(b)
    assert a.best_solution == b.best_solution


def test_iteration_and_wall_budgets(inst30):
    tr = solve_ns(inst30, SearchBudget(max_iterations=123), seed=0)
    assert tr.total_actions == len(tr.records) == 123
    tr = solve_ns(inst30, SearchBudget(max_wall_seconds=0.3), seed=0)
    gaps = [b.elapsed_s - a.elapsed_s for a, b in zip(tr.records, tr.records[1:])]
    assert tr.wall_seconds <= 0.3 + max(gaps + [0.05]) + 0.05


def test_target_and_stall_stops(inst12):
    full = solve_ns(inst12, SearchBudget(max_iterations=3000), seed=3)
    target = full.initial_score - 1.0
    tr = solve_ns(inst12, SearchBudget(max_iterations=3000, target_score=target), seed=3)
    if full.best_score <= target:
        assert tr.best_score <= target and tr.total_actions < 3000
    tr = solve_ns(inst12, SearchBudget(max_iterations=100_000, stall_shuffles=3), k=10, seed=3)
    assert tr.total_actions < 100_000
    tail = [r for r in tr.records if r.shuffled][-3:]
    assert len(tail) == 3


def test_trace_csv(tmp_path, inst12):
    tr = solve_ns(inst12, SearchBudget(max_iterations=200), k=5, seed=3)
    tr.write_csv(tmp_path / "t.csv")
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert list(rows[0]) == list(engines.TRACE_COLUMNS)
    assert len(rows) == 200
    assert any(r["move_kind"] == SHUFFLE for r in rows)


def test_ma_param_validation():
    with pytest.raises(OperatorError):
        MAParams(pop_size=1)
    with pytest.raises(OperatorError):
        MAParams(pop_size=4, elite_count=5)


def test_ma_pure_elitism(inst12):
    params = MAParams(pop_size=2, elite_count=2, shuffle_enabled=False)
    tr = solve_ma(inst12, SearchBudget(max_iterations=50), params, seed=1)
    assert tr.total_actions == 50
    assert len(set(tr.generation_best)) == 1
    tr = solve_ma(inst12, SearchBudget(max_iterations=200), MAParams(pop_size=2, elite_count=2), seed=1)
    gb = tr.generation_best
    assert all(y <= x for x, y in zip(gb, gb[1:]))


def test_ma_identical_population_without_mutation(inst12, monkeypatch):
    base = greedy_initialize(inst12, 0)
    monkeypatch.setattr(engines, "initial_population", lambda inst, n, seed, config=None: [clone_solution(base)
                                                                                           for _ in range(n)])
    params = MAParams(pop_size=6, elite_count=1, mutation_rate=0.0, local_search_depth=0, shuffle_enabled=False)
    tr = solve_ma(inst12, SearchBudget(max_iterations=300), params, seed=1)
    assert tr.best_score == tr.initial_score
    assert len(set(tr.generation_best)) == 1


def test_ma_trace_and_determinism(inst12):
    budget = SearchBudget(max_iterations=3000)
    a = solve_ma(inst12, budget, MAParams(pop_size=10), seed=5)
    b = solve_ma(inst12, budget, MAParams(pop_size=10), seed=5)
    assert wall_free(a) == wall_free(b)
    check_trace(a)
    gb = a.generation_best
    assert all(y <= x for x, y in zip(gb, gb[1:]))
    assert a.best_score <= a.initial_score
    assert check_feasibility(inst12, a.best_solution) == []
