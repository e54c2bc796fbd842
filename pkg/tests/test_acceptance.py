"""Acceptance criteria C1-C7. Each test prints one PASS/FAIL line (also
collected in the terminal summary) and asserts the criterion.

Pinned tolerances and protocols are module constants below.
"""

import math
import os
import resource
import statistics
import subprocess
import sys
import time

import pytest
from scipy import stats

from vrpd.engines import MAParams, SearchBudget, solve_ma, solve_ns
from vrpd.harness import ExperimentPlan, ablation_series, run_ablation
from vrpd.instance import Fleet, GeneratorSpec, generate_instance, save_instance
from vrpd.oracle import brute_force_oracle
from vrpd.rl import RlParams, solve_rl_ma
from vrpd.solution import check_feasibility, load_solution

from conftest import report

pytestmark = pytest.mark.acceptance

# C1
C1_INSTANCES = 50
C1_ITERATIONS = 50_000
C1_TOL_MEMETIC = 0.02
C1_TOL_NS = 0.05
C1_REQUIRED = 45
C1_LIMIT_S = 15 * 60
# C2
C2_INSTANCES = 20
C2_CUSTOMERS = 50
C2_ITERATIONS = 100_000
C2_ALPHA = 0.05
C2_LIMIT_S = 60 * 60
# C3
C3_SEEDS = 10
C3_CUSTOMERS = 20
C3_ITERATIONS = 20_000
C3_WINDOW = 200
C3_REQUIRED = 8
C3_LIMIT_S = 10 * 60
# C4: runs stop after C4_STALL consecutive shuffles without a new best
C4_K = [5, 15, 30, 60, 120]
C4_SEEDS = 10
C4_CUSTOMERS = 30
C4_STALL = 500
C4_CAP = 400_000
C4_WALL_INVERSION = 0.05
C4_PLATEAU = 0.01
C4_LIMIT_S = 45 * 60
# C5
C5_CUSTOMERS = 200
C5_WALL_BUDGET_S = 30 * 60
C5_ITERATIONS = 30_000
C5_MEMORY_BYTES = 1 << 30
# C7
C7_SEEDS = 20
C7_CUSTOMERS = 20
C7_ITERATIONS = 5_000
C7_ALPHA = 0.05


def c1_instance(i):
    return generate_instance(GeneratorSpec(5 + i % 4, seed=i, fleet=Fleet(num_trucks=2, num_drones=1)))


def test_c1_oracle_equivalence():
    t0 = time.perf_counter()
    budget = SearchBudget(max_iterations=C1_ITERATIONS)
    hits = {"ns": 0, "ma": 0, "rl-ma": 0}
    worst = {"ns": 0.0, "ma": 0.0, "rl-ma": 0.0}
    for i in range(C1_INSTANCES):
        inst = c1_instance(i)
        opt = brute_force_oracle(inst).operational_time
        got = {
            "ns": solve_ns(inst, budget, seed=i).best_score,
            "ma": solve_ma(inst, budget, seed=i).best_score,
            "rl-ma": solve_rl_ma(inst, budget, seed=i).best_score,
        }
        for name, val in got.items():
            assert val >= opt - 1e-6, f"{name} beat the oracle on instance {i}"
            gap = val / opt - 1.0
            worst[name] = max(worst[name], gap)
            tol = C1_TOL_NS if name == "ns" else C1_TOL_MEMETIC
            hits[name] += gap <= tol + 1e-12
    wall = time.perf_counter() - t0
    ok = (hits["ma"] >= C1_REQUIRED and hits["rl-ma"] >= C1_REQUIRED and hits["ns"] >= C1_REQUIRED
          and wall < C1_LIMIT_S)
    detail = (f"within tol: MA {hits['ma']}/50, RL+MA {hits['rl-ma']}/50 (2%), NS {hits['ns']}/50 (5%); "
              f"worst gaps MA {worst['ma']:.3%} RL+MA {worst['rl-ma']:.3%} NS {worst['ns']:.3%}; wall {wall:.0f}s")
    assert report("C1 oracle equivalence", ok, detail), detail


def test_c2_directional_quality():
    t0 = time.perf_counter()
    budget = SearchBudget(max_iterations=C2_ITERATIONS)
    res = {"rl-ma": [], "ma": [], "ns": []}
    for i in range(C2_INSTANCES):
        inst = generate_instance(GeneratorSpec(C2_CUSTOMERS, seed=1000 + i))
        res["rl-ma"].append(solve_rl_ma(inst, budget, seed=i).best_score)
        res["ma"].append(solve_ma(inst, budget, seed=i).best_score)
        res["ns"].append(solve_ns(inst, budget, seed=i).best_score)
    wall = time.perf_counter() - t0
    means = {k: statistics.fmean(v) for k, v in res.items()}
    wins = sum(a < b for a, b in zip(res["rl-ma"], res["ma"]))
    losses = sum(a > b for a, b in zip(res["rl-ma"], res["ma"]))
    p = stats.binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue if wins + losses else 1.0
    order_ok = means["rl-ma"] <= means["ma"] <= means["ns"]
    ok = order_ok and p < C2_ALPHA and wall < C2_LIMIT_S
    detail = (f"means RL+MA {means['rl-ma']:.2f}, MA {means['ma']:.2f}, NS {means['ns']:.2f} "
              f"(ordering {'holds' if order_ok else 'violated'}); RL+MA<MA sign test {wins}-{losses}, p={p:.2e}; "
              f"wall {wall:.0f}s")
    assert report("C2 directional quality", ok, detail), detail


def moving_average(xs, w):
    out, acc = [], 0.0
    for i, x in enumerate(xs):
        acc += x
        if i >= w:
            acc -= xs[i - w]
        if i >= w - 1:
            out.append(acc / w)
    return out


def test_c3_reward_convergence():
    t0 = time.perf_counter()
    up = 0
    gaps = []
    for s in range(C3_SEEDS):
        inst = generate_instance(GeneratorSpec(C3_CUSTOMERS, seed=2000 + s))
        tr = solve_rl_ma(inst, SearchBudget(max_iterations=C3_ITERATIONS), seed=s)
        ma = moving_average([r.r_t for r in tr.rewards], C3_WINDOW)
        q = len(ma) // 4
        first, last = statistics.fmean(ma[:q]), statistics.fmean(ma[-q:])
        gaps.append(last - first)
        up += last > first
    wall = time.perf_counter() - t0
    p = stats.binomtest(up, C3_SEEDS, 0.5, alternative="greater").pvalue
    ok = up >= C3_REQUIRED and wall < C3_LIMIT_S
    detail = (f"final-quarter MA reward > first quarter on {up}/{C3_SEEDS} seeds (sign test p={p:.3g}); "
              f"median gain {statistics.median(gaps):+.4f}; wall {wall:.0f}s")
    assert report("C3 reward convergence", ok, detail), detail


def non_decreasing_with_one_inversion(xs, tol):
    drops = [(a, b) for a, b in zip(xs, xs[1:]) if b < a]
    return len(drops) == 0 or (len(drops) == 1 and drops[0][1] >= drops[0][0] * (1 - tol))


def test_c4_ablation_trends(tmp_path):
    t0 = time.perf_counter()
    plan = ExperimentPlan(customer_counts=[C4_CUSTOMERS], algorithms=["rl-ma"], replicates=C4_SEEDS,
                          budget=SearchBudget(max_iterations=C4_CAP, stall_shuffles=C4_STALL), k_values=C4_K,
                          base_seed=3000)
    groups = run_ablation(plan, output=tmp_path / "ablation.csv")
    series = ablation_series(groups)
    wall = time.perf_counter() - t0
    walls = [s["median_wall_seconds"] for s in series]
    times = [s["median_operational_time"] for s in series]
    wall_ok = non_decreasing_with_one_inversion(walls, C4_WALL_INVERSION)
    quality_ok = all(b <= a for a, b in zip(times, times[1:]))
    i60, i120 = C4_K.index(60), C4_K.index(120)
    plateau = (times[i60] - times[i120]) / times[i60]
    plateau_ok = plateau <= C4_PLATEAU
    ok = wall_ok and quality_ok and plateau_ok and wall < C4_LIMIT_S
    detail = (f"median wall {['%.1f' % w for w in walls]} ({'ok' if wall_ok else 'violated'}); "
              f"median op-time {['%.2f' % t for t in times]} (non-increasing {'ok' if quality_ok else 'violated'}); "
              f"60->120 gain {plateau:.2%} ({'ok' if plateau_ok else 'violated'}); wall {wall:.0f}s")
    assert report("C4 ablation trends", ok, detail), detail


def test_c5_scale_smoke(tmp_path):
    inst = generate_instance(GeneratorSpec(C5_CUSTOMERS, seed=5000))
    path = tmp_path / "i200.json"
    save_instance(inst, path)
    out = tmp_path / "sol.json"
    cmd = [sys.executable, "-m", "vrpd.cli", "solve", str(path), "--algo", "rl-ma", "--seed", "0",
           "--max-seconds", str(C5_WALL_BUDGET_S), "--max-iters", str(C5_ITERATIONS), "--out", str(out)]
    t0 = time.perf_counter()
    proc = subprocess.run(cmd, capture_output=True, text=True, timeout=C5_WALL_BUDGET_S + 300)
    wall = time.perf_counter() - t0
    peak = resource.getrusage(resource.RUSAGE_CHILDREN).ru_maxrss * 1024
    feasible = proc.returncode == 0 and check_feasibility(inst, load_solution(out)) == []
    ok = feasible and wall < C5_WALL_BUDGET_S and peak < C5_MEMORY_BYTES
    detail = (f"exit {proc.returncode}, feasible={feasible}, wall {wall:.0f}s, "
              f"peak RSS {peak / 2**20:.0f} MiB")
    assert report("C5 scale smoke", ok, detail), detail + proc.stderr


INVARIANT_TESTS = [
    "tests/test_operators.py::test_moves_conserve_customers",
    "tests/test_solution.py::test_evaluator_properties",
    "tests/test_rl.py::test_rl_trace_invariants",
    "tests/test_rl.py::test_distribution_validity",
    "tests/test_rl.py::test_gradient_matches_finite_differences",
    "tests/test_harness_cli.py::test_cli_solve_is_byte_identical",
    "tests/test_instance.py::test_metric_properties",
]


def test_c6_invariant_suites():
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *INVARIANT_TESTS],
                          cwd=root, capture_output=True, text=True)
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0
    assert report("C6 invariant suites", ok, summary), proc.stdout[-3000:]


def test_c7_baseline_reduction():
    inst = generate_instance(GeneratorSpec(C7_CUSTOMERS, seed=7000))
    budget = SearchBudget(max_iterations=C7_ITERATIONS)
    frozen = RlParams(lr=0.0)
    learned, uniform = [], []
    identical = True
    for s in range(C7_SEEDS):
        a = solve_rl_ma(inst, budget, MAParams(), frozen, seed=s)
        b = solve_rl_ma(inst, budget, MAParams(), frozen, seed=100 + s, uniform=True)
        learned.append(a.best_score)
        uniform.append(b.best_score)
        if s == 0:
            c = solve_rl_ma(inst, budget, MAParams(), frozen, seed=s, uniform=True)
            identical = [r.score_after for r in a.records] == [r.score_after for r in c.records]
    p = stats.ks_2samp(learned, uniform).pvalue
    ok = p > C7_ALPHA and identical
    detail = (f"KS on best score at iteration {C7_ITERATIONS} over {C7_SEEDS} seeds: p={p:.3f}; "
              f"same-seed trace identical to uniform: {identical}")
    assert report("C7 baseline reduction", ok, detail), detail
