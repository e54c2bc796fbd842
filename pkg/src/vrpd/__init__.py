"""Vehicle routing with drones: model, operators, NS / MA / RL+MA solvers, harness."""

from .construct import greedy_initialize
from .engines import (BudgetError, ComponentSet, IterationRecord, MAParams, SearchBudget, SearchTrace, ShuffleConfig,
                      UniformPolicy, run_component_loop, solve_ma, solve_ns)
from .harness import BenchmarkRecord, ExperimentPlan, PlanError, run_ablation, run_benchmark
from .instance import (CostModel, Fleet, GeneratorSpec, Instance, InstanceError, InstanceParseError, Node, NodeKind,
                       generate_instance, load_instance, save_instance)
from .operators import Move, MoveKind, MoveOutcome, OperatorError, apply_move, ma_crossover, ma_select, mutate, shuffle
from .oracle import OracleRefusal, OracleResult, brute_force_oracle
from .rl import (FeatureVector, PolicyParams, RewardRecord, RlParams, compute_reward, policy_forward, policy_update,
                 solve_rl_ma)
from .solution import (EvalConfig, EvalResult, Solution, Sortie, TruckRoute, check_feasibility, evaluate,
                       load_solution, operational_time, save_solution, simulate_timeline)

__version__ = "0.1.0"
