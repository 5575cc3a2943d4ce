"""Semantic-aware multi-task edge offloading: simulator, learners and baselines."""
from .baselines import LocalOffloader, SemanticUnaware, brute_force_best
from .config import EnvConfig, TaskType, WEIGHT_PRESETS
from .d3qn import D3QNOffloader
from .env import AgentAction, FrozenInstance, Observation, OffloadingEnv
from .evaluation import evaluate_policy
from .harness import ExperimentSpec, load_config, run_experiment
from .mappo import MAPPOOffloader

__all__ = [
    "AgentAction",
    "D3QNOffloader",
    "EnvConfig",
    "ExperimentSpec",
    "FrozenInstance",
    "LocalOffloader",
    "MAPPOOffloader",
    "Observation",
    "OffloadingEnv",
    "SemanticUnaware",
    "TaskType",
    "WEIGHT_PRESETS",
    "brute_force_best",
    "evaluate_policy",
    "load_config",
    "run_experiment",
]
__version__ = "0.1.0"
