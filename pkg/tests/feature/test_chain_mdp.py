"""Test that the learner recovers the optimal policy of a small chain"""

import numpy as np
import pytest

from ml.rl.chain_mdp import LEFT, RIGHT, ChainMDP, greedy_policy, train_chain, value_iteration
from ml.rl.qlearning import QConfig


def test_chain_steps():
    mdp = ChainMDP()
    assert mdp.step(0, LEFT) == (0, 0.0, False)
    assert mdp.step(3, RIGHT) == (4, 1.0, True)


def test_value_iteration_goes_right():
    values, policy = value_iteration(ChainMDP(), 0.9)
    assert policy == [RIGHT] * 4
    assert values[3] == pytest.approx(1.0)
    assert values[0] == pytest.approx(0.9 ** 3)
    assert values[4] == 0.0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_learner_matches_value_iteration(seed):
    mdp = ChainMDP()
    table, updates = train_chain(mdp, QConfig(alpha=0.5, gamma=0.9, epsilon=0.1, seed=seed))
    assert updates <= 10_000
    assert greedy_policy(table, mdp) == value_iteration(mdp, 0.9)[1]


def test_learned_values_approach_optimum():
    mdp = ChainMDP()
    table, _ = train_chain(mdp, QConfig(alpha=0.5, gamma=0.9, epsilon=0.1, seed=3))
    values, _ = value_iteration(mdp, 0.9)
    learned = np.array([table.max_q(s) for s in range(mdp.terminal)])
    assert np.allclose(learned, values[:mdp.terminal], atol=1e-3)
