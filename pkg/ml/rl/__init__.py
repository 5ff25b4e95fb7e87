"""Tabular Q-learning and the state-space explorer built on it"""

from .qlearning import QConfig, QEntry, QTable, ReplayBuffer, q_update
from .explorer import ExplorationResult, GraphSpec, Policy, compare_policies, run_exploration, select_state

__all__ = [
    'QConfig', 'QEntry', 'QTable', 'ReplayBuffer', 'q_update',
    'ExplorationResult', 'GraphSpec', 'Policy', 'compare_policies', 'run_exploration', 'select_state',
]
