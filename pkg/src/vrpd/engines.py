"""Component framework (initialize / modify / shuffle / evaluate) and the NS and MA baselines."""

from __future__ import annotations

import csv
import math
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .construct import greedy_initialize
from .instance import Instance
from .operators import (
    NS_MOVES,
    Move,
    MoveKind,
    MoveOutcome,
    OperatorError,
    apply_move,
    ma_crossover,
    ma_select,
    mutate,
    random_ns_move,
    shuffle,
)
from .solution import (DEFAULT_CONFIG, INF, EvalConfig, EvalResult, SearchScorer, Solution, clone_solution,
                       evaluate)

IMPROVE_TOL = 1e-9
SHUFFLE = "Shuffle"


class BudgetError(ValueError):
    pass


@dataclass
class SearchBudget:
    """Stopping rule. `stall_shuffles` stops after that many consecutive
    shuffles that did not improve the best score."""

    max_iterations: Optional[int] = None
    max_wall_seconds: Optional[float] = None
    target_score: Optional[float] = None
    stall_shuffles: Optional[int] = None

    def __post_init__(self):
        if self.max_iterations is None and self.max_wall_seconds is None:
            raise BudgetError("set max_iterations and/or max_wall_seconds")
        if self.max_iterations is not None and self.max_iterations < 0:
            raise BudgetError("max_iterations must be >= 0")


@dataclass
class ShuffleConfig:
    strength: float = 0.2
    enabled: bool = True


@dataclass
class IterationRecord:
    iter: int
    move_kind: str
    score_before: float
    score_after: float
    accepted: bool
    elapsed_s: float
    shuffled: bool = False
    r_t: Optional[float] = None
    quality_term: Optional[float] = None
    speed_term: Optional[float] = None
    action_probs: Optional[Tuple[float, ...]] = None


@dataclass
class SearchTrace:
    algorithm: str
    records: List[IterationRecord]
    best_solution: Solution
    best_score: float
    best_eval: EvalResult
    initial_score: float
    total_actions: int
    shuffle_count: int
    wall_seconds: float
    generation_best: List[float] = field(default_factory=list)
    policy: Optional[object] = None
    rewards: list = field(default_factory=list)

    def best_so_far(self) -> List[float]:
        out = []
        best = self.initial_score
        for rec in self.records:
            if rec.score_after < best:
                best = rec.score_after
            out.append(best)
        return out

    def score_at(self, iteration: int) -> float:
        """Best score after `iteration` records (initial score at 0)."""
        curve = self.best_so_far()
        if iteration <= 0 or not curve:
            return self.initial_score
        return curve[min(iteration, len(curve)) - 1]

    def write_csv(self, path) -> None:
        write_trace_csv(self, path)


TRACE_COLUMNS = ("iter", "move_kind", "score_before", "score_after", "accepted", "shuffled", "elapsed_s")
REWARD_COLUMNS = ("r_t", "quality_term", "speed_term", "action_probs")


def write_trace_csv(trace: SearchTrace, path) -> None:
    with_rl = any(r.r_t is not None or r.action_probs is not None for r in trace.records)
    cols = TRACE_COLUMNS + (REWARD_COLUMNS if with_rl else ())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in trace.records:
            row = [r.iter, r.move_kind, repr(r.score_before), repr(r.score_after), int(r.accepted),
                   int(r.shuffled), f"{r.elapsed_s:.3f}"]
            if with_rl:
                probs = "" if r.action_probs is None else " ".join(f"{p:.6f}" for p in r.action_probs)
                row += ["" if r.r_t is None else repr(r.r_t),
                        "" if r.quality_term is None else repr(r.quality_term),
                        "" if r.speed_term is None else repr(r.speed_term), probs]
            w.writerow(row)


def make_scorer(inst: Instance, objective: str = "time", config: EvalConfig = DEFAULT_CONFIG):
    return SearchScorer(inst, objective, config)


class _Clock:
    def __init__(self, budget: SearchBudget):
        self.budget = budget
        self.start = time.perf_counter()
        self.used = 0

    def elapsed(self) -> float:
        return time.perf_counter() - self.start

    def exhausted(self, best: float = INF, stalled: int = 0) -> bool:
        b = self.budget
        if b.max_iterations is not None and self.used >= b.max_iterations:
            return True
        if b.max_wall_seconds is not None and self.elapsed() >= b.max_wall_seconds:
            return True
        if b.target_score is not None and best <= b.target_score:
            return True
        if b.stall_shuffles is not None and stalled >= b.stall_shuffles:
            return True
        return False


# -- generic component loop -------------------------------------------------


@dataclass
class LoopState:
    iteration: int
    actions_taken: int
    current_score: float
    previous_score: float
    initial_score: float
    max_iterations: Optional[int]
    fails: int
    elapsed: float
    max_wall_seconds: Optional[float]

    @property
    def progress(self) -> float:
        if self.max_iterations:
            return min(1.0, self.actions_taken / self.max_iterations)
        if self.max_wall_seconds:
            return min(1.0, self.elapsed / self.max_wall_seconds)
        return 0.0


class UniformPolicy:
    """Move selection uniformly at random; the heuristic baseline."""

    def __init__(self, kinds: Sequence[MoveKind]):
        self.kinds = tuple(kinds)

    def select(self, rng: random.Random, state: LoopState) -> MoveKind:
        return self.kinds[min(int(rng.random() * len(self.kinds)), len(self.kinds) - 1)]

    def observe(self, state: LoopState, kind: MoveKind, before: float, after: float, accepted: bool) -> dict:
        return {}

    def on_shuffle(self, state: LoopState) -> None:
        pass


def default_apply(inst: Instance, sol: Solution, kind: MoveKind, rng: random.Random) -> MoveOutcome:
    return apply_move(inst, sol, Move(kind), rng)


@dataclass
class ComponentSet:
    """The four universal components plus optional hooks.

    `apply` executes one modifier action; `on_step` sees every evaluated
    candidate (population-based heuristics use it to keep their pool).
    """

    initializer: Callable[[Instance, int], Solution] = greedy_initialize
    modifier: Tuple[MoveKind, ...] = NS_MOVES
    shuffler: ShuffleConfig = field(default_factory=ShuffleConfig)
    evaluator: Callable[..., EvalResult] = evaluate
    apply: Callable[[Instance, Solution, MoveKind, random.Random], MoveOutcome] = default_apply
    on_step: Optional[Callable[[object, Solution, float, bool], None]] = None

    def __post_init__(self):
        if not self.modifier:
            raise ValueError("modifier must hold at least one move kind")


def run_component_loop(
    components: ComponentSet,
    inst: Instance,
    budget: SearchBudget,
    policy,
    k: int = 60,
    seed: int = 0,
    objective: str = "time",
    config: EvalConfig = DEFAULT_CONFIG,
    algorithm: str = "loop",
    initial: Optional[Solution] = None,
    shuffle_best: bool = False,
) -> SearchTrace:
    """initialize -> repeat {select; apply; evaluate; accept if better;
    after k consecutive failures shuffle the current solution}.

    With `shuffle_best` the escape perturbs the best solution found so far
    instead of the current one.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    attr = "operational_time" if objective == "time" else "total_cost"
    evaluator = components.evaluator
    if evaluator is evaluate:
        score_of = make_scorer(inst, objective, config)
    else:
        def score_of(sol):
            return getattr(evaluator(inst, sol, config), attr)

    rng = random.Random(seed)
    clock = _Clock(budget)
    current = initial if initial is not None else components.initializer(inst, seed)
    cur_score = score_of(current)
    prev_score = cur_score
    best, best_score = current, cur_score
    records: List[IterationRecord] = []
    fails = 0
    stalled = 0
    shuffles = 0
    shuffle_on = components.shuffler.enabled
    strength = components.shuffler.strength

    initial_score = cur_score
    while not clock.exhausted(best_score, stalled):
        clock.used += 1
        if shuffle_on and fails >= k:
            shuffled = shuffle(inst, best if shuffle_best else current, rng, strength, objective)
            s = score_of(shuffled)
            records.append(IterationRecord(clock.used, SHUFFLE, cur_score, s, False, clock.elapsed(), True))
            prev_score, cur_score, current = cur_score, s, shuffled
            fails = 0
            shuffles += 1
            stalled += 1
            if s < best_score - IMPROVE_TOL:
                best, best_score = shuffled, s
                stalled = 0
            st = LoopState(clock.used, clock.used, cur_score, prev_score, initial_score,
                           budget.max_iterations, fails, clock.elapsed(), budget.max_wall_seconds)
            policy.on_shuffle(st)
            if components.on_step is not None:
                components.on_step(SHUFFLE, shuffled, s, False)
            continue
        st = LoopState(clock.used - 1, clock.used, cur_score, prev_score, initial_score,
                       budget.max_iterations, fails, clock.elapsed(), budget.max_wall_seconds)
        kind = policy.select(rng, st)
        outcome = components.apply(inst, current, kind, rng)
        s = score_of(outcome.solution) if outcome.applied else cur_score
        accepted = s < cur_score - IMPROVE_TOL
        st.actions_taken = clock.used
        extra = policy.observe(st, kind, cur_score, s, accepted)
        records.append(IterationRecord(clock.used, str(kind), cur_score, s, accepted, clock.elapsed(), False, **extra))
        if components.on_step is not None:
            components.on_step(kind, outcome.solution, s, accepted)
        if accepted:
            prev_score, cur_score, current = cur_score, s, outcome.solution
            fails = 0
            if s < best_score - IMPROVE_TOL:
                best, best_score = current, s
                stalled = 0
        else:
            prev_score = cur_score
            fails += 1
    return SearchTrace(algorithm, records, clone_solution(best), best_score, evaluate(inst, best, config),
                       initial_score, clock.used, shuffles, clock.elapsed())


def solve_ns(
    inst: Instance,
    budget: SearchBudget,
    k: int = 60,
    seed: int = 0,
    shuffle_enabled: bool = True,
    shuffle_strength: float = 0.2,
    objective: str = "time",
    config: EvalConfig = DEFAULT_CONFIG,
) -> SearchTrace:
    """Neighborhood search: uniform move choice, strict-improvement acceptance."""
    components = ComponentSet(shuffler=ShuffleConfig(shuffle_strength, shuffle_enabled))
    return run_component_loop(components, inst, budget, UniformPolicy(NS_MOVES), k, seed, objective, config, "ns")


# -- memetic algorithm --------------------------------------------------------


@dataclass
class MAParams:
    pop_size: int = 50
    elite_count: int = 5
    mutation_rate: float = 0.2
    local_search_depth: int = 20
    k_generations: int = 20
    shuffle_strength: float = 0.2
    shuffle_enabled: bool = True

    def __post_init__(self):
        if self.pop_size < 2:
            raise OperatorError("pop_size must be >= 2")
        if not 0 <= self.elite_count <= self.pop_size:
            raise OperatorError("elite_count must lie in [0, pop_size]")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise OperatorError("mutation_rate must lie in [0, 1]")
        if self.local_search_depth < 0 or self.k_generations < 1:
            raise OperatorError("local_search_depth must be >= 0 and k_generations >= 1")


def member_seeds(seed: int, n: int) -> List[int]:
    rng = random.Random(seed)
    return [rng.getrandbits(32) for _ in range(n)]


def initial_population(inst: Instance, n: int, seed: int, config: EvalConfig = DEFAULT_CONFIG) -> List[Solution]:
    return [greedy_initialize(inst, s, config) for s in member_seeds(seed, n)]


def solve_ma(
    inst: Instance,
    budget: SearchBudget,
    params: MAParams = MAParams(),
    seed: int = 0,
    objective: str = "time",
    config: EvalConfig = DEFAULT_CONFIG,
) -> SearchTrace:
    """Generational memetic algorithm.

    Every evaluated candidate costs one iteration and gets a trace record;
    a record is `accepted` when the candidate beats the score it was derived
    from (better parent, pre-mutation child, pre-move child).
    """
    score_of = make_scorer(inst, objective, config)
    rng = random.Random(seed)
    clock = _Clock(budget)
    pop = initial_population(inst, params.pop_size, seed, config)
    scores = [score_of(p) for p in pop]
    bi = min(range(len(pop)), key=lambda i: (scores[i], i))
    best, best_score = pop[bi], scores[bi]
    initial_score = best_score
    records: List[IterationRecord] = []
    gen_best: List[float] = [best_score]
    shuffles = 0
    stagnant = 0

    def log(kind, before, after, shuffled=False):
        clock.used += 1
        records.append(IterationRecord(clock.used, str(kind), before, after,
                                       (not shuffled) and after < before - IMPROVE_TOL, clock.elapsed(), shuffled))

    while not clock.exhausted(best_score):
        gen_start_best = best_score
        order = sorted(range(len(pop)), key=lambda i: (scores[i], i))
        nxt = [pop[i] for i in order[:params.elite_count]]
        nxt_scores = [scores[i] for i in order[:params.elite_count]]
        ranked = list(zip(pop, scores))
        if len(nxt) >= params.pop_size:
            # pure elitism: the generation still costs one iteration
            log(MoveKind.MaSelection, best_score, best_score)
        while len(nxt) < params.pop_size and not clock.exhausted(best_score):
            i, j = ma_select(ranked, rng)
            child = ma_crossover(inst, pop[i], pop[j], rng)
            cs = score_of(child)
            log(MoveKind.MaCrossover, min(scores[i], scores[j]), cs)
            if not clock.exhausted(best_score):
                out = mutate(inst, child, rng, params.mutation_rate)
                if out.applied:
                    ms = score_of(out.solution)
                    log(MoveKind.MaMutation, cs, ms)
                    child, cs = out.solution, ms
            for _ in range(params.local_search_depth):
                if clock.exhausted(best_score):
                    break
                out = random_ns_move(inst, child, rng)
                s = score_of(out.solution) if out.applied else cs
                log(out.move.kind, cs, s)
                if s < cs - IMPROVE_TOL:
                    child, cs = out.solution, s
            if cs < best_score - IMPROVE_TOL:
                best, best_score = child, cs
            nxt.append(child)
            nxt_scores.append(cs)
        pop, scores = nxt, nxt_scores
        gen_best.append(best_score)
        stagnant = stagnant + 1 if best_score >= gen_start_best - IMPROVE_TOL else 0
        if params.shuffle_enabled and stagnant >= params.k_generations and len(pop) > 1:
            worst = sorted(range(len(pop)), key=lambda i: (scores[i], i))[len(pop) // 2:]
            for w in worst:
                if clock.exhausted(best_score):
                    break
                shuffled = shuffle(inst, pop[w], rng, params.shuffle_strength, objective)
                s = score_of(shuffled)
                log(SHUFFLE, scores[w], s, shuffled=True)
                pop[w], scores[w] = shuffled, s
                shuffles += 1
                if s < best_score - IMPROVE_TOL:
                    best, best_score = shuffled, s
            stagnant = 0
    return SearchTrace("ma", records, clone_solution(best), best_score, evaluate(inst, best, config),
                       initial_score, clock.used, shuffles, clock.elapsed(), gen_best)
