"""Adaptive Q-learning over metric state-action spaces, with its diagnostics."""
from .adaptive import AdaptiveQLearning, AgentConfig, PartitionTree
from .env import BENCHMARKS, build_oracle, make_env
from .metric import MetricSpec, Point, WitnessGrid
from .uniform import UniformQLearning, build_uniform, run_uniform

__all__ = [
    "AdaptiveQLearning", "AgentConfig", "PartitionTree", "BENCHMARKS", "build_oracle", "make_env",
    "MetricSpec", "Point", "WitnessGrid", "UniformQLearning", "build_uniform", "run_uniform",
]
