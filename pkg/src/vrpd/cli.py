"""Command-line entry point: generate, solve, benchmark, ablate, oracle."""

from __future__ import annotations

import argparse
import json
import sys
from typing import List, Optional

from .engines import BudgetError, MAParams, SearchBudget, solve_ma, solve_ns
from .harness import ablation_series, load_plan, run_ablation, run_benchmark, summarize
from .instance import CostModel, Fleet, GeneratorSpec, InstanceError, generate_instance, load_instance, save_instance
from .operators import OperatorError
from .oracle import brute_force_oracle
from .rl import RlError, RlParams, load_policy, save_policy, solve_rl_ma
from .solution import save_solution

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_INTERNAL = 0, 1, 2, 3
DEFAULT_ITERATIONS = 50_000


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vrpd", description="Truck-and-drone routing solvers (NS, MA, RL+MA).")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("generate", help="write a random instance file")
    g.add_argument("--customers", type=int, required=True)
    g.add_argument("--hubs", type=int, default=None, help="default: max(1, customers // 10)")
    g.add_argument("--area", type=float, default=100.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--demand", type=int, nargs=2, default=(1, 10), metavar=("LO", "HI"))
    g.add_argument("--trucks", type=int, default=None, help="default: sized from total demand")
    g.add_argument("--drones", type=int, default=None)
    g.add_argument("--drones-per-truck", type=int, default=None)
    g.add_argument("--endurance", type=float, default=None)
    g.add_argument("--name", default=None)
    g.add_argument("--out", required=True)

    s = sub.add_parser("solve", help="run one solver on one instance")
    s.add_argument("instance")
    s.add_argument("--algo", choices=("rl-ma", "ma", "ns"), default="rl-ma")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-iters", type=int, default=None, help=f"default {DEFAULT_ITERATIONS} when --max-seconds is unset")
    s.add_argument("--max-seconds", type=float, default=None)
    s.add_argument("--w1", type=float, default=1.0)
    s.add_argument("--w2", type=float, default=0.1)
    s.add_argument("--lr", type=float, default=0.001)
    s.add_argument("--k", type=int, default=60)
    s.add_argument("--objective", choices=("time", "cost"), default="time")
    s.add_argument("--no-shuffle", action="store_true")
    s.add_argument("--trace", default=None, help="per-iteration CSV")
    s.add_argument("--out", default=None, help="solution JSON")
    s.add_argument("--policy-in", default=None, help="warm-start policy (rl-ma)")
    s.add_argument("--policy-out", default=None, help="export learned policy (rl-ma)")

    for name, text in (("benchmark", "run a benchmark plan"), ("ablate", "run a k-ablation plan")):
        b = sub.add_parser(name, help=text)
        b.add_argument("plan")
        b.add_argument("--out", default=None, help="results CSV (overrides the plan)")
        b.add_argument("--workers", type=int, default=None)

    o = sub.add_parser("oracle", help="exact optimum of a tiny instance")
    o.add_argument("instance")
    o.add_argument("--out", default=None)
    return p


def _generate(a) -> int:
    fleet = None
    if any(v is not None for v in (a.trucks, a.drones, a.drones_per_truck, a.endurance)):
        base = Fleet()
        trucks = a.trucks or base.num_trucks
        fleet = Fleet(
            num_trucks=trucks,
            num_drones=a.drones if a.drones is not None else trucks,
            truck_drone_capacity=a.drones_per_truck or base.truck_drone_capacity,
            drone_endurance=a.endurance or base.drone_endurance,
        )
    spec = GeneratorSpec(a.customers, a.hubs, a.area, fleet, CostModel(), a.seed, tuple(a.demand), a.name)
    inst = generate_instance(spec)
    save_instance(inst, a.out)
    print(json.dumps({"instance": inst.name, "customers": len(inst.customers), "hubs": len(inst.hubs),
                      "trucks": inst.fleet.num_trucks, "drones": inst.fleet.num_drones, "out": a.out}))
    return EXIT_OK


def _solve(a) -> int:
    inst = load_instance(a.instance)
    iters = a.max_iters
    if iters is None and a.max_seconds is None:
        iters = DEFAULT_ITERATIONS
    budget = SearchBudget(max_iterations=iters, max_wall_seconds=a.max_seconds)
    if a.algo != "rl-ma" and (a.policy_in or a.policy_out):
        raise UsageError("--policy-in/--policy-out apply to --algo rl-ma only")
    if a.algo == "ns":
        trace = solve_ns(inst, budget, a.k, a.seed, not a.no_shuffle, objective=a.objective)
    elif a.algo == "ma":
        trace = solve_ma(inst, budget, MAParams(shuffle_enabled=not a.no_shuffle), a.seed, a.objective)
    else:
        rl = RlParams(w1=a.w1, w2=a.w2, lr=a.lr, k=a.k, shuffle_enabled=not a.no_shuffle)
        policy = load_policy(a.policy_in) if a.policy_in else None
        if policy is not None:
            policy.learning_rate = a.lr
        trace = solve_rl_ma(inst, budget, MAParams(), rl, a.seed, a.objective, policy=policy)
        if a.policy_out:
            save_policy(trace.policy, a.policy_out)
    if a.out:
        save_solution(inst, trace.best_solution, a.out, trace.best_eval)
    if a.trace:
        trace.write_csv(a.trace)
    ev = trace.best_eval
    print(json.dumps({"algorithm": a.algo, "instance": inst.name, "seed": a.seed, "feasible": ev.feasible,
                      "operational_time": ev.operational_time, "total_cost": ev.total_cost,
                      "initial_score": trace.initial_score, "iterations": trace.total_actions,
                      "shuffles": trace.shuffle_count, "wall_seconds": round(trace.wall_seconds, 3)}))
    return EXIT_OK


def _benchmark(a) -> int:
    plan = load_plan(a.plan)
    records = run_benchmark(plan, a.out, a.workers)
    print(json.dumps({"records": len(records), "cells": summarize(records)}, indent=2))
    return EXIT_OK


def _ablate(a) -> int:
    plan = load_plan(a.plan)
    groups = run_ablation(plan, a.out, a.workers)
    print(json.dumps({"records": sum(len(v) for v in groups.values()), "series": ablation_series(groups)}, indent=2))
    return EXIT_OK


def _oracle(a) -> int:
    inst = load_instance(a.instance)
    res = brute_force_oracle(inst)
    if res.feasible and a.out:
        save_solution(inst, res.solution, a.out)
    print(json.dumps({"instance": inst.name, "feasible": res.feasible,
                      "operational_time": res.operational_time if res.feasible else None}))
    return EXIT_OK


COMMANDS = {"generate": _generate, "solve": _solve, "benchmark": _benchmark, "ablate": _ablate, "oracle": _oracle}
VALIDATION_ERRORS = (InstanceError, BudgetError, OperatorError, RlError, ValueError, FileNotFoundError)


def cli_main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
