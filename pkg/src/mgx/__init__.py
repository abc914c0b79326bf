"""Self-play learners and exact planning for finite-horizon zero-sum Markov games."""
from .game import (GameError, MarkovGame, PolicyPair, ValueTables, bellman_backup, best_response_max,
                   best_response_min, duality_gap, exact_nash, one_sided_gaps, policy_value,
                   uniform_policy, validate_game)
from .matrix import (BimatrixSolution, MatrixGameError, exploitability, lemke_howson, nash_general_sum,
                     nash_zero_sum, support_enumeration)
from .ulcb import BonusParams, UlcbLearner, bonus, ucb_validity_audit
from .explore import ExplorationConfig, Trajectory, build_empirical_model, reward_free_exploration
from .mirror import MirrorDescentLearner
from .harness import (ExperimentConfig, RunLog, gen_random_game, gen_turn_based, online_to_batch,
                      run_experiment, weak_regret)

__version__ = "0.1.0"

__all__ = [
    "GameError", "MarkovGame", "PolicyPair", "ValueTables", "bellman_backup", "best_response_max",
    "best_response_min", "duality_gap", "exact_nash", "one_sided_gaps", "policy_value", "uniform_policy",
    "validate_game", "BimatrixSolution", "MatrixGameError", "exploitability", "lemke_howson",
    "nash_general_sum", "nash_zero_sum", "support_enumeration", "BonusParams", "UlcbLearner", "bonus",
    "ucb_validity_audit", "ExplorationConfig", "Trajectory", "build_empirical_model",
    "reward_free_exploration", "MirrorDescentLearner", "ExperimentConfig", "RunLog", "gen_random_game",
    "gen_turn_based", "online_to_batch", "run_experiment", "weak_regret",
]
