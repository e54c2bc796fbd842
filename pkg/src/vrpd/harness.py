"""Benchmark sweeps and the k ablation, with crash-safe CSV output."""

from __future__ import annotations

import csv
import json
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .engines import MAParams, SearchBudget, solve_ma, solve_ns
from .instance import CostModel, Fleet, GeneratorSpec, InstanceError, generate_instance
from .rl import RlParams, solve_rl_ma

ALGORITHMS = ("rl-ma", "ma", "ns")
WORKERS_ENV = "VRPD_WORKERS"


class PlanError(InstanceError):
    pass


@dataclass
class ExperimentPlan:
    customer_counts: List[int]
    algorithms: List[str] = field(default_factory=lambda: list(ALGORITHMS))
    replicates: int = 1
    budget: SearchBudget = field(default_factory=lambda: SearchBudget(max_iterations=10_000))
    k_values: List[int] = field(default_factory=lambda: [60])
    base_seed: int = 0
    output: Optional[str] = None
    n_hubs: Optional[int] = None
    area_side: float = 100.0
    fleet: Optional[Fleet] = None
    costs: CostModel = field(default_factory=CostModel)
    demand_range: Tuple[int, int] = (1, 10)
    w1: float = 1.0
    w2: float = 0.1
    lr: float = 0.001
    k: int = 60
    objective: str = "time"
    shuffle: bool = True
    ma: MAParams = field(default_factory=MAParams)
    workers: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise PlanError("replicates must be >= 1")
        if not self.customer_counts or any(n < 1 for n in self.customer_counts):
            raise PlanError("customer_counts must be a non-empty list of positive integers")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad or not self.algorithms:
            raise PlanError(f"algorithms must be a non-empty subset of {ALGORITHMS}, got {self.algorithms}")
        if any(k < 1 for k in self.k_values):
            raise PlanError("k values must be >= 1")
        if self.objective not in ("time", "cost"):
            raise PlanError("objective must be 'time' or 'cost'")
        if self.workers < 1:
            raise PlanError("workers must be >= 1")

    def seed(self, replicate: int) -> int:
        return self.base_seed + replicate

    def spec(self, n: int, replicate: int) -> GeneratorSpec:
        return GeneratorSpec(n, self.n_hubs, self.area_side, self.fleet, self.costs, self.seed(replicate),
                             tuple(self.demand_range))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fleet"] = None if self.fleet is None else asdict(self.fleet)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentPlan":
        if not isinstance(doc, dict):
            raise PlanError("plan must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise PlanError(f"unknown plan fields: {sorted(extra)}")
        d = dict(doc)
        try:
            if "budget" in d:
                d["budget"] = SearchBudget(**d["budget"])
            if d.get("fleet") is not None:
                d["fleet"] = Fleet(**d["fleet"])
            if "costs" in d:
                d["costs"] = CostModel(**d["costs"])
            if "ma" in d:
                d["ma"] = MAParams(**d["ma"])
            if "demand_range" in d:
                d["demand_range"] = tuple(d["demand_range"])
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise PlanError(f"invalid plan: {exc}") from exc


def load_plan(path) -> ExperimentPlan:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise PlanError(f"{path}: not valid JSON ({exc})") from exc
    return ExperimentPlan.from_dict(doc)


@dataclass
class BenchmarkRecord:
    instance_name: str
    instance_seed: int
    n_customers: int
    algorithm: str
    replicate: int
    k: int
    w1: float
    w2: float
    operational_time: float
    total_cost: float
    wall_seconds: float
    iterations_used: int
    shuffle_count: int
    error: str = ""

    @property
    def cell(self) -> tuple:
        return (self.n_customers, self.algorithm, self.replicate, self.k)


RECORD_COLUMNS = tuple(f.name for f in fields(BenchmarkRecord))
_INT_COLUMNS = {"instance_seed", "n_customers", "replicate", "k", "iterations_used", "shuffle_count"}
_FLOAT_COLUMNS = {"w1", "w2", "operational_time", "total_cost", "wall_seconds"}


def _record_from_row(row: dict) -> BenchmarkRecord:
    vals = {}
    for name in RECORD_COLUMNS:
        raw = row[name]
        if name in _INT_COLUMNS:
            vals[name] = int(raw)
        elif name in _FLOAT_COLUMNS:
            vals[name] = float(raw) if raw != "" else math.nan
        else:
            vals[name] = raw
    return BenchmarkRecord(**vals)


def _record_to_row(rec: BenchmarkRecord) -> list:
    out = []
    for name in RECORD_COLUMNS:
        v = getattr(rec, name)
        if isinstance(v, float):
            out.append("" if math.isnan(v) else repr(v))
        else:
            out.append(v)
    return out


def read_records(path) -> List[BenchmarkRecord]:
    """Parse a results file, ignoring a truncated trailing line."""
    p = Path(path)
    if not p.exists() or p.stat().st_size == 0:
        return []
    text = p.read_text()
    if not text.endswith("\n"):
        text = text[: text.rfind("\n") + 1]
    rows = list(csv.DictReader(text.splitlines()))
    out = []
    for row in rows:
        if None in row or any(row.get(c) is None for c in RECORD_COLUMNS):
            continue
        out.append(_record_from_row(row))
    return out


class _Writer:
    """Single append-only writer; each record is flushed as one full line."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if self.path.exists() and self.path.stat().st_size:
            text = self.path.read_text()
            if not text.endswith("\n"):
                # drop a line cut short by a crash
                self.path.write_text(text[: text.rfind("\n") + 1])
        fresh = not self.path.exists() or self.path.stat().st_size == 0
        self.fh = open(self.path, "a", newline="")
        self.csv = csv.writer(self.fh)
        if fresh:
            self.csv.writerow(RECORD_COLUMNS)
            self.fh.flush()

    def write(self, rec: BenchmarkRecord) -> None:
        self.csv.writerow(_record_to_row(rec))
        self.fh.flush()
        os.fsync(self.fh.fileno())

    def close(self) -> None:
        self.fh.close()


def run_cell(plan: ExperimentPlan, n: int, algorithm: str, replicate: int, k: int) -> BenchmarkRecord:
    """Generate the cell's instance, run one solver, and time it."""
    inst = generate_instance(plan.spec(n, replicate))
    seed = plan.seed(replicate)
    base = dict(instance_name=inst.name, instance_seed=inst.seed, n_customers=n, algorithm=algorithm,
                replicate=replicate, k=k, w1=plan.w1, w2=plan.w2)
    t0 = time.perf_counter()
    try:
        if algorithm == "ns":
            trace = solve_ns(inst, plan.budget, k, seed, plan.shuffle, objective=plan.objective)
        elif algorithm == "ma":
            ma = MAParams(**{**asdict(plan.ma), "shuffle_enabled": plan.shuffle and plan.ma.shuffle_enabled})
            trace = solve_ma(inst, plan.budget, ma, seed, plan.objective)
        else:
            rl = RlParams(w1=plan.w1, w2=plan.w2, lr=plan.lr, k=k, shuffle_enabled=plan.shuffle)
            trace = solve_rl_ma(inst, plan.budget, plan.ma, rl, seed, plan.objective)
    except Exception as exc:  # recorded, the sweep carries on
        wall = max(round(time.perf_counter() - t0, 3), 0.001)
        return BenchmarkRecord(**base, operational_time=math.nan, total_cost=math.nan, wall_seconds=wall,
                               iterations_used=0, shuffle_count=0, error=f"{type(exc).__name__}: {exc}")
    wall = max(round(time.perf_counter() - t0, 3), 0.001)
    ev = trace.best_eval
    return BenchmarkRecord(**base, operational_time=ev.operational_time, total_cost=ev.total_cost,
                           wall_seconds=wall, iterations_used=trace.total_actions, shuffle_count=trace.shuffle_count)


def _cells(plan: ExperimentPlan, ablation: bool) -> List[tuple]:
    algos = ["rl-ma"] if ablation else list(plan.algorithms)
    ks = list(dict.fromkeys(plan.k_values)) if ablation else [plan.k]
    return [(n, a, rep, k) for n in plan.customer_counts for rep in range(plan.replicates) for k in ks for a in algos]


def _worker_count(plan: ExperimentPlan, workers: Optional[int]) -> int:
    if workers is not None:
        return max(1, workers)
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise PlanError(f"{WORKERS_ENV} must be an integer, got {env!r}") from exc
    return plan.workers


def _run(plan: ExperimentPlan, ablation: bool, output=None, workers: Optional[int] = None) -> List[BenchmarkRecord]:
    cells = _cells(plan, ablation)
    output = output or plan.output
    done: Dict[tuple, BenchmarkRecord] = {}
    if output:
        for rec in read_records(output):
            done.setdefault(rec.cell, rec)
    todo = [c for c in cells if c not in done]
    writer = _Writer(output) if output else None
    n_workers = _worker_count(plan, workers)
    try:
        if n_workers == 1 or len(todo) <= 1:
            for cell in todo:
                rec = run_cell(plan, *cell)
                done[cell] = rec
                if writer:
                    writer.write(rec)
        else:
            with ProcessPoolExecutor(max_workers=n_workers) as pool:
                futures = {pool.submit(run_cell, plan, *cell): cell for cell in todo}
                for fut in as_completed(futures):
                    rec = fut.result()
                    done[futures[fut]] = rec
                    if writer:
                        writer.write(rec)
    finally:
        if writer:
            writer.close()
    records = [done[c] for c in cells]
    if output:
        write_summary(plan, records, Path(output).with_suffix(".json"), ablation)
    return records


def run_benchmark(plan: ExperimentPlan, output=None, workers: Optional[int] = None) -> List[BenchmarkRecord]:
    """One record per (customer count, algorithm, replicate); resumes from `output`."""
    return _run(plan, False, output, workers)


def run_ablation(plan: ExperimentPlan, output=None, workers: Optional[int] = None) -> Dict[int, List[BenchmarkRecord]]:
    """RL+MA only, sweeping k with everything else fixed."""
    if len(set(plan.k_values)) < 2:
        raise PlanError("ablation needs at least two distinct k values")
    records = _run(plan, True, output, workers)
    groups: Dict[int, List[BenchmarkRecord]] = {k: [] for k in dict.fromkeys(plan.k_values)}
    for rec in records:
        groups[rec.k].append(rec)
    return groups


def _median(values: Iterable[float]) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return statistics.median(vals) if vals else math.nan


def ablation_series(groups: Dict[int, List[BenchmarkRecord]]) -> List[dict]:
    """Median wall time and operational time per k, in k order."""
    return [{"k": k, "median_wall_seconds": _median(r.wall_seconds for r in recs),
             "median_operational_time": _median(r.operational_time for r in recs), "runs": len(recs)}
            for k, recs in sorted(groups.items())]


def summarize(records: Sequence[BenchmarkRecord]) -> List[dict]:
    cells: Dict[tuple, List[BenchmarkRecord]] = {}
    for rec in records:
        cells.setdefault((rec.n_customers, rec.algorithm, rec.k), []).append(rec)
    out = []
    for (n, algo, k), recs in sorted(cells.items()):
        ok = [r for r in recs if not r.error]
        out.append({
            "n_customers": n, "algorithm": algo, "k": k, "runs": len(recs), "errors": len(recs) - len(ok),
            "mean_operational_time": statistics.fmean(r.operational_time for r in ok) if ok else None,
            "mean_wall_seconds": statistics.fmean(r.wall_seconds for r in ok) if ok else None,
        })
    return out


def write_summary(plan: ExperimentPlan, records: Sequence[BenchmarkRecord], path, ablation: bool = False) -> None:
    doc = {"kind": "ablation" if ablation else "benchmark", "plan": plan.to_dict(), "records": len(records),
           "cells": summarize(records)}
    Path(path).write_text(json.dumps(doc, indent=2, default=str) + "\n")
