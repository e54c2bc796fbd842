"""Online operator selection: a small policy network trained with REINFORCE
inside the component loop, giving the RL+MA solver."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .engines import (
    IMPROVE_TOL,
    ComponentSet,
    LoopState,
    MAParams,
    SearchBudget,
    SearchTrace,
    ShuffleConfig,
    UniformPolicy,
    initial_population,
    make_scorer,
    run_component_loop,
)
from .instance import Instance
from .operators import (
    NS_MOVES,
    Move,
    MoveKind,
    MoveOutcome,
    apply_move,
    ma_crossover,
    ma_select,
)
from .solution import DEFAULT_CONFIG, INF, EvalConfig, EvalResult, Solution, canonical_key

PROB_FLOOR = 1e-4
GRAD_CLIP = 5.0
BASELINE_DECAY = 0.99
DELTA_FLOOR = -1.0

# reproduction (selection + crossover) is one action: selection alone changes nothing
RL_MA_ACTIONS: Tuple[MoveKind, ...] = (MoveKind.MaCrossover, MoveKind.MaMutation, *NS_MOVES)


class RlError(ValueError):
    pass


def score_of(res: EvalResult) -> float:
    """Quality score S = -operational_time (higher is better); -inf if infeasible."""
    if not res.feasible:
        return -INF
    return -res.operational_time


@dataclass
class RlState:
    s_t: float
    s_prev: float
    actions_taken: int
    w1: float
    w2: float

    def __post_init__(self):
        if self.actions_taken < 0:
            raise RlError("actions_taken must be >= 0")
        check_weights(self.w1, self.w2)


def check_weights(w1: float, w2: float) -> None:
    if w1 < 0 or w2 < 0:
        raise RlError("reward weights must be non-negative")
    if w1 == 0 and w2 == 0:
        raise RlError("w1 and w2 cannot both be zero")


@dataclass
class FeatureVector:
    s_t_norm: float
    s_prev_norm: float
    progress: float
    w1: float
    w2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.s_t_norm, self.s_prev_norm, self.progress, self.w1, self.w2], dtype=float)


def normalise_score(s: float, s0: float) -> float:
    """S / |S_0|; scores are negative times so this lies around -1."""
    if s0 == 0:
        return 0.0 if s == 0 else math.copysign(1.0, s)
    return s / abs(s0)


def features(state: RlState, s0: float, max_iterations: int) -> FeatureVector:
    progress = min(1.0, state.actions_taken / max_iterations) if max_iterations else 0.0
    return FeatureVector(normalise_score(state.s_t, s0), normalise_score(state.s_prev, s0), progress,
                         state.w1, state.w2)


@dataclass
class RewardRecord:
    r_t: float
    quality_term: float
    speed_term: float
    action: str
    t: int


def compute_reward(f: FeatureVector, action: str = "", t: int = 0, per_step_cost: bool = False,
                   delta_floor: float = DELTA_FLOOR) -> RewardRecord:
    """r = w1 * (s_t_norm - s_prev_norm) - w2 * progress.

    Non-finite or very negative score changes are clamped at `delta_floor`.
    `per_step_cost` charges a flat w2 per action instead of the cumulative term.
    """
    check_weights(f.w1, f.w2)
    delta = f.s_t_norm - f.s_prev_norm
    if not math.isfinite(delta) or delta < delta_floor:
        delta = delta_floor
    quality = f.w1 * delta
    speed = f.w2 * (1.0 if per_step_cost else f.progress)
    return RewardRecord(quality - speed, quality, speed, action, t)


# -- policy network ----------------------------------------------------------


@dataclass
class PolicyParams:
    """5 -> h (tanh) -> n_actions logits. The output layer starts at zero so the
    initial policy is uniform."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    learning_rate: float = 0.05
    baseline: float = 0.0
    seed: int = 0

    @classmethod
    def init(cls, n_actions: int, hidden: int = 16, learning_rate: float = 0.05, seed: int = 0,
             n_features: int = 5) -> "PolicyParams":
        if n_actions < 1 or hidden < 1:
            raise RlError("layer sizes must be positive")
        rng = np.random.default_rng(seed)
        w1 = rng.normal(0.0, 1.0 / math.sqrt(n_features), size=(hidden, n_features))
        return cls(w1, np.zeros(hidden), np.zeros((n_actions, hidden)), np.zeros(n_actions),
                   learning_rate, 0.0, seed)

    @property
    def n_actions(self) -> int:
        return self.w2.shape[0]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(),
                            self.learning_rate, self.baseline, self.seed)

    def to_dict(self) -> dict:
        return {
            "layers": [self.w1.shape[1], self.w1.shape[0], self.w2.shape[0]],
            "w1": self.w1.ravel().tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.ravel().tolist(),
            "b2": self.b2.tolist(),
            "learning_rate": self.learning_rate,
            "baseline": self.baseline,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyParams":
        try:
            n_in, hidden, n_out = (int(v) for v in d["layers"])
            params = cls(
                np.asarray(d["w1"], dtype=float).reshape(hidden, n_in),
                np.asarray(d["b1"], dtype=float).reshape(hidden),
                np.asarray(d["w2"], dtype=float).reshape(n_out, hidden),
                np.asarray(d["b2"], dtype=float).reshape(n_out),
                float(d["learning_rate"]), float(d["baseline"]), int(d["seed"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise RlError(f"bad policy document: {exc}") from exc
        if not all(np.all(np.isfinite(a)) for a in (params.w1, params.b1, params.w2, params.b2)):
            raise RlError("policy weights must be finite")
        return params


def save_policy(params: PolicyParams, path) -> None:
    Path(path).write_text(json.dumps(params.to_dict(), indent=2) + "\n")


def load_policy(path) -> PolicyParams:
    return PolicyParams.from_dict(json.loads(Path(path).read_text()))


def _as_input(f) -> np.ndarray:
    x = f.as_array() if isinstance(f, FeatureVector) else np.asarray(f, dtype=float)
    if not np.all(np.isfinite(x)):
        raise RlError("features must be finite")
    return x


def _forward(params: PolicyParams, x: np.ndarray):
    h = np.tanh(params.w1 @ x + params.b1)
    z = params.w2 @ h + params.b2
    z = z - z.max()
    e = np.exp(z)
    soft = e / e.sum()
    return h, soft


def floor_probs(soft: np.ndarray, eps: float = PROB_FLOOR) -> np.ndarray:
    """Mix with the uniform distribution so every entry is >= eps."""
    return eps + (1.0 - len(soft) * eps) * soft


def policy_forward(params: PolicyParams, f) -> np.ndarray:
    _, soft = _forward(params, _as_input(f))
    return floor_probs(soft)


def log_prob(params: PolicyParams, f, action: int) -> float:
    return float(np.log(policy_forward(params, f)[action]))


def _grads(params: PolicyParams, x: np.ndarray, h: np.ndarray, soft: np.ndarray, action: int):
    n = len(soft)
    # d log p_a / d z_j = (1 - n eps) * s_a * (delta_aj - s_j) / p_a
    dz = -soft * ((1.0 - n * PROB_FLOOR) * soft[action] / (PROB_FLOOR + (1.0 - n * PROB_FLOOR) * soft[action]))
    dz[action] += (1.0 - n * PROB_FLOOR) * soft[action] / (PROB_FLOOR + (1.0 - n * PROB_FLOOR) * soft[action])
    dh = (params.w2.T @ dz) * (1.0 - h * h)
    return dz, dh


def grad_log_prob(params: PolicyParams, f, action: int):
    """Analytic gradient of log pi(action | f) w.r.t. (w1, b1, w2, b2)."""
    x = _as_input(f)
    h, soft = _forward(params, x)
    dz, dh = _grads(params, x, h, soft, action)
    return np.outer(dh, x), dh, np.outer(dz, h), dz


def _reinforce(params: PolicyParams, x: np.ndarray, h: np.ndarray, soft: np.ndarray, action: int,
               r_t: float) -> None:
    """In-place REINFORCE step given the forward pass that chose `action`."""
    advantage = r_t - params.baseline
    if advantage != 0.0 and params.learning_rate != 0.0:
        dz, dh = _grads(params, x, h, soft, action)
        # |outer(u, v)|^2 = |u|^2 |v|^2
        sq_dz = float(dz @ dz)
        sq_dh = float(dh @ dh)
        norm = math.sqrt(sq_dh * (float(x @ x) + 1.0) + sq_dz * (float(h @ h) + 1.0))
        scale = params.learning_rate * advantage
        if norm > GRAD_CLIP:
            scale *= GRAD_CLIP / norm
        params.w1 += np.outer(scale * dh, x)
        params.b1 += scale * dh
        params.w2 += np.outer(scale * dz, h)
        params.b2 += scale * dz
    params.baseline = BASELINE_DECAY * params.baseline + (1.0 - BASELINE_DECAY) * r_t


def policy_update(params: PolicyParams, f, action: int, r_t: float) -> PolicyParams:
    """One REINFORCE step with a moving-average baseline; returns new params."""
    if not 0 <= action < params.n_actions:
        raise RlError(f"action {action} out of range")
    out = params.copy()
    x = _as_input(f)
    h, soft = _forward(out, x)
    _reinforce(out, x, h, soft, action, r_t)
    return out


def sample_action(probs: np.ndarray, u: float) -> int:
    """Inverse-CDF draw from one uniform number."""
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if u < acc:
            return i
    return len(probs) - 1


# -- RL+MA solver -------------------------------------------------------------


@dataclass
class RlParams:
    w1: float = 1.0
    w2: float = 0.1
    lr: float = 0.001
    h: int = 16
    k: int = 60
    shuffle_strength: float = 0.2
    per_step_cost: bool = False
    shuffle_enabled: bool = True

    def __post_init__(self):
        check_weights(self.w1, self.w2)
        if self.k < 1:
            raise RlError("k must be >= 1")
        if self.lr < 0:
            raise RlError("learning rate must be >= 0")


class PolicySelector:
    """Move-selection callback for run_component_loop driven by the policy."""

    def __init__(self, kinds: Sequence[MoveKind], rl: RlParams, params: PolicyParams, initial_score: float,
                 max_iterations: int):
        self.kinds = tuple(kinds)
        self.rl = rl
        self.params = params.copy()
        self.s0 = -initial_score
        self.max_iterations = max_iterations
        self._cache = None
        self._probs: Optional[np.ndarray] = None
        self._action = -1
        self.rewards: List[RewardRecord] = []

    def _features(self, s_t: float, s_prev: float, loop: LoopState) -> FeatureVector:
        state = RlState(s_t, s_prev, loop.actions_taken, self.rl.w1, self.rl.w2)
        f = features(state, self.s0, self.max_iterations)
        if not self.max_iterations:
            f.progress = loop.progress
        return f

    def select(self, rng: random.Random, state: LoopState) -> MoveKind:
        f = self._features(-state.current_score, -state.previous_score, state)
        x = _as_input(f)
        h, soft = _forward(self.params, x)
        self._cache = (x, h, soft)
        self._probs = floor_probs(soft)
        self._action = sample_action(self._probs, rng.random())
        return self.kinds[self._action]

    def observe(self, state: LoopState, kind: MoveKind, before: float, after: float, accepted: bool) -> dict:
        post = self._features(-after, -before, state)
        rec = compute_reward(post, str(kind), state.actions_taken, self.rl.per_step_cost)
        self.rewards.append(rec)
        x, h, soft = self._cache
        _reinforce(self.params, x, h, soft, self._action, rec.r_t)
        return {"r_t": rec.r_t, "quality_term": rec.quality_term, "speed_term": rec.speed_term,
                "action_probs": tuple(self._probs.tolist())}

    def on_shuffle(self, state: LoopState) -> None:
        pass


class _Population:
    """MA population shared with the RL loop: parents for reproduction, and a
    pool that absorbs improving solutions (replacing its worst member)."""

    def __init__(self, members: List[Solution], scores: List[float]):
        self.members = members
        self.scores = scores
        self.keys = {canonical_key(m) for m in members}

    def offer(self, sol: Solution, score: float) -> None:
        worst = max(range(len(self.members)), key=lambda i: (self.scores[i], i))
        if score >= self.scores[worst] - IMPROVE_TOL:
            return
        key = canonical_key(sol)
        if key in self.keys:
            return
        self.keys.discard(canonical_key(self.members[worst]))
        self.members[worst] = sol
        self.scores[worst] = score
        self.keys.add(key)


def solve_rl_ma(
    inst: Instance,
    budget: SearchBudget,
    ma_params: MAParams = MAParams(),
    rl_params: RlParams = RlParams(),
    seed: int = 0,
    objective: str = "time",
    config: EvalConfig = DEFAULT_CONFIG,
    policy: Optional[PolicyParams] = None,
    uniform: bool = False,
) -> SearchTrace:
    """RL+MA: the policy picks reproduction, mutation or one of the NS moves
    for the incumbent at every step; improvements feed the population.

    `uniform` swaps the policy for uniform random selection over the same
    actions (the no-learning baseline).
    """
    score = make_scorer(inst, objective, config)
    members = initial_population(inst, ma_params.pop_size, seed, config)
    scores = [score(m) for m in members]
    pop = _Population(members, scores)
    best = min(range(len(members)), key=lambda i: (scores[i], i))
    incumbent = members[best]
    kinds = RL_MA_ACTIONS
    if policy is None:
        policy = PolicyParams.init(len(kinds), rl_params.h, rl_params.lr, seed)
    elif policy.n_actions != len(kinds):
        raise RlError(f"policy has {policy.n_actions} outputs, expected {len(kinds)}")
    horizon = budget.max_iterations or 0
    selector = PolicySelector(kinds, rl_params, policy, scores[best], horizon)
    chooser = UniformPolicy(kinds) if uniform else selector

    def apply(inst_: Instance, sol: Solution, kind: MoveKind, rng: random.Random) -> MoveOutcome:
        if kind is MoveKind.MaCrossover:
            i, j = ma_select(list(zip(pop.members, pop.scores)), rng)
            child = ma_crossover(inst_, pop.members[i], pop.members[j], rng)
            return MoveOutcome(child, True, Move(kind, (i, j)))
        if kind is MoveKind.MaMutation:
            return apply_move(inst_, sol, Move(kind, (1.0,)), rng)
        return apply_move(inst_, sol, Move(kind), rng)

    def on_step(kind, sol: Solution, s: float, accepted: bool) -> None:
        if accepted or kind is MoveKind.MaCrossover:
            pop.offer(sol, s)

    components = ComponentSet(
        modifier=kinds,
        shuffler=ShuffleConfig(rl_params.shuffle_strength, rl_params.shuffle_enabled),
        apply=apply,
        on_step=on_step,
    )
    trace = run_component_loop(components, inst, budget, chooser, rl_params.k, seed, objective, config,
                               "rl-ma", initial=incumbent, shuffle_best=True)
    if not uniform:
        trace.policy = selector.params
        trace.rewards = selector.rewards
    return trace
