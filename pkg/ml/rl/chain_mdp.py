"""
Chain MDP
A small deterministic chain with a rewarding terminal state, used to check
that the Q-learning core converges to the value-iteration optimum
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from ml.rl.qlearning import QConfig, QTable, ReplayBuffer, Transition, q_update

logger = logging.getLogger(__name__)

LEFT, RIGHT = 0, 1


@dataclass(frozen=True)
class ChainMDP:
    """
    States 0..n-1 on a line; the last state is terminal

    Moving right into the terminal state pays terminal_reward; every other
    move pays 0. Moving left from state 0 stays in state 0.
    """

    n_states: int = 5
    terminal_reward: float = 1.0

    @property
    def terminal(self) -> int:
        return self.n_states - 1

    @property
    def n_actions(self) -> int:
        return 2

    def step(self, state: int, action: int) -> Tuple[int, float, bool]:
        """(next state, reward, done)"""
        following = min(state + 1, self.terminal) if action == RIGHT else max(state - 1, 0)
        done = following == self.terminal
        return following, self.terminal_reward if done else 0.0, done


def value_iteration(mdp: ChainMDP, gamma: float, tol: float = 1e-12, max_sweeps: int = 10_000
                    ) -> Tuple[np.ndarray, List[int]]:
    """
    Optimal state values and the greedy policy for every non-terminal state

    Returns:
        (values, policy) where policy[s] is the optimal action in state s
    """
    values = np.zeros(mdp.n_states)
    for _ in range(max_sweeps):
        updated = values.copy()
        for state in range(mdp.terminal):
            updated[state] = max(_backup(mdp, values, state, a, gamma) for a in range(mdp.n_actions))
        delta = float(np.max(np.abs(updated - values)))
        values = updated
        if delta < tol:
            break

    policy = [
        int(np.argmax([_backup(mdp, values, s, a, gamma) for a in range(mdp.n_actions)]))
        for s in range(mdp.terminal)
    ]
    return values, policy


def _backup(mdp: ChainMDP, values: np.ndarray, state: int, action: int, gamma: float) -> float:
    following, reward, done = mdp.step(state, action)
    return reward + (0.0 if done else gamma * values[following])


def greedy_policy(table: QTable, mdp: ChainMDP) -> List[int]:
    return [table.greedy(s) for s in range(mdp.terminal)]


def train_chain(
    mdp: ChainMDP,
    config: QConfig,
    max_updates: int = 10_000,
    max_episode_steps: int = 50,
) -> Tuple[QTable, int]:
    """
    Epsilon-greedy Q-learning with exploring starts and replay-buffer updates

    Each episode starts in a uniformly drawn non-terminal state. Every step
    stores its transition and applies one sampled batch of Bellman updates.
    Greedy ties are broken uniformly at random.

    Returns:
        (Q table, number of updates applied)
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    table = QTable(mdp.n_actions)
    buffer = ReplayBuffer(config.replay_capacity)
    updates = 0

    while updates < max_updates:
        state = int(rng.integers(mdp.terminal))
        for _ in range(max_episode_steps):
            if rng.random() < config.epsilon:
                action = int(rng.integers(mdp.n_actions))
            else:
                values = np.array([table.get(state, a) for a in range(mdp.n_actions)])
                best = np.flatnonzero(values == values.max())
                action = int(rng.choice(best))

            following, reward, done = mdp.step(state, action)
            buffer.push(Transition(state, action, reward, None if done else following))
            for t in buffer.sample(min(config.batch_size, max_updates - updates), rng):
                q_update(table, t.state_key, t.action, t.reward, t.next_key, config)
                updates += 1
            if done or updates >= max_updates:
                break
            state = following

    logger.info(f"Chain training finished after {updates} updates")
    return table, updates
