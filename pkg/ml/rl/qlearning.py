"""
Tabular Q-Learning
Q table, Bellman update and replay buffer shared by the state explorer and
the chain MDP oracle
"""

import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Deque, Dict, Hashable, Iterator, List, Optional, Tuple

import numpy as np

from pmem.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QConfig:
    """
    Learning hyper-parameters

    alpha is the learning (decay) rate, gamma the discount factor and
    epsilon the exploration probability of the epsilon-greedy rule.
    """

    alpha: float = 0.5
    gamma: float = 0.9
    epsilon: float = 0.1
    replay_capacity: int = 256
    batch_size: int = 8
    seed: int = 0

    def validate(self) -> "QConfig":
        problems = []
        if not 0 < self.alpha <= 1:
            problems.append(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0 <= self.gamma < 1:
            problems.append(f"gamma must be in [0, 1), got {self.gamma}")
        if not 0 <= self.epsilon <= 1:
            problems.append(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.batch_size < 1:
            problems.append(f"batch size must be >= 1, got {self.batch_size}")
        if self.replay_capacity < self.batch_size:
            problems.append(f"replay capacity {self.replay_capacity} is below batch size {self.batch_size}")
        if problems:
            raise ConfigError("; ".join(problems))
        return self


@dataclass(frozen=True)
class QEntry:
    state_key: Hashable
    action: int
    q: float


class QTable:
    """Sparse Q table; entries never written read as 0"""

    def __init__(self, n_actions: int):
        if n_actions < 1:
            raise ValueError(f"need at least one action, got {n_actions}")
        self.n_actions = n_actions
        self._values: Dict[Tuple[Hashable, int], float] = {}

    def get(self, state_key: Hashable, action: int) -> float:
        return self._values.get((state_key, action), 0.0)

    def set(self, state_key: Hashable, action: int, q: float) -> None:
        if not math.isfinite(q):
            raise ValueError(f"q value must be finite, got {q}")
        self._values[(state_key, action)] = q

    def max_q(self, state_key: Hashable) -> float:
        return max(self.get(state_key, a) for a in range(self.n_actions))

    def greedy(self, state_key: Hashable) -> int:
        """Best action; ties go to the lowest action ordinal"""
        values = [self.get(state_key, a) for a in range(self.n_actions)]
        return int(np.argmax(values))

    def entries(self) -> Iterator[QEntry]:
        for (state_key, action), q in sorted(self._values.items(), key=lambda item: repr(item[0])):
            yield QEntry(state_key, action, q)

    def max_abs(self) -> float:
        return max((abs(q) for q in self._values.values()), default=0.0)

    def __len__(self) -> int:
        return len(self._values)


def q_update(
    table: QTable,
    state_key: Hashable,
    action: int,
    reward: float,
    next_key: Optional[Hashable],
    config: QConfig,
) -> QTable:
    """
    Bellman update of one entry

    q(s, a) <- (1 - alpha) q(s, a) + alpha (r + gamma max_a' q(s', a'))

    Args:
        table: Q table (updated in place and returned)
        state_key: s
        action: a
        reward: r
        next_key: s', or None when the transition ended an episode
        config: alpha and gamma

    Returns:
        The same table
    """
    future = 0.0 if next_key is None else table.max_q(next_key)
    old = table.get(state_key, action)
    table.set(state_key, action, (1 - config.alpha) * old + config.alpha * (reward + config.gamma * future))
    return table


@dataclass(frozen=True)
class Transition:
    state_key: Hashable
    action: int
    reward: float
    next_key: Optional[Hashable]


class ReplayBuffer:
    """Bounded store of past transitions; the oldest are evicted first"""

    def __init__(self, capacity: int):
        self._items: Deque[Transition] = deque(maxlen=capacity)

    def push(self, transition: Transition) -> None:
        self._items.append(transition)

    def sample(self, batch_size: int, rng: np.random.Generator) -> List[Transition]:
        """Up to batch_size transitions drawn uniformly with replacement"""
        if not self._items:
            return []
        picks = rng.integers(len(self._items), size=min(batch_size, len(self._items)))
        return [self._items[int(i)] for i in picks]

    def __len__(self) -> int:
        return len(self._items)


def replay_updates(
    table: QTable,
    buffer: ReplayBuffer,
    config: QConfig,
    rng: np.random.Generator,
) -> int:
    """Apply q_update to one sampled batch; returns the number of updates"""
    batch = buffer.sample(config.batch_size, rng)
    for t in batch:
        q_update(table, t.state_key, t.action, t.reward, t.next_key, config)
    return len(batch)
