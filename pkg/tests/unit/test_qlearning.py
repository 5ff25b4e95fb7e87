"""Test the Bellman update, Q table and replay buffer"""

import numpy as np
import pytest

from ml.rl.qlearning import QConfig, QTable, ReplayBuffer, Transition, q_update, replay_updates
from pmem.errors import ConfigError

# (alpha, gamma, q, reward, max next q, expected q)
BELLMAN_CASES = [
    (0.1, 0.0, 0.0, 1.0, 0.0, 0.100000000000),
    (0.1, 0.0, 2.0, -1.0, 3.0, 1.700000000000),
    (0.1, 0.0, -0.5, 10.0, 4.0, 0.550000000000),
    (0.1, 0.0, 1.5, 0.0, -2.0, 1.350000000000),
    (0.1, 0.5, 0.0, 1.0, 0.0, 0.100000000000),
    (0.1, 0.5, 2.0, -1.0, 3.0, 1.850000000000),
    (0.1, 0.5, -0.5, 10.0, 4.0, 0.750000000000),
    (0.1, 0.5, 1.5, 0.0, -2.0, 1.250000000000),
    (0.1, 0.9, 0.0, 1.0, 0.0, 0.100000000000),
    (0.1, 0.9, 2.0, -1.0, 3.0, 1.970000000000),
    (0.1, 0.9, -0.5, 10.0, 4.0, 0.910000000000),
    (0.1, 0.9, 1.5, 0.0, -2.0, 1.170000000000),
    (0.1, 0.99, 0.0, 1.0, 0.0, 0.100000000000),
    (0.1, 0.99, 2.0, -1.0, 3.0, 1.997000000000),
    (0.1, 0.99, -0.5, 10.0, 4.0, 0.946000000000),
    (0.1, 0.99, 1.5, 0.0, -2.0, 1.152000000000),
    (0.5, 0.0, 0.0, 1.0, 0.0, 0.500000000000),
    (0.5, 0.0, 2.0, -1.0, 3.0, 0.500000000000),
    (0.5, 0.0, -0.5, 10.0, 4.0, 4.750000000000),
    (0.5, 0.0, 1.5, 0.0, -2.0, 0.750000000000),
    (0.5, 0.5, 0.0, 1.0, 0.0, 0.500000000000),
    (0.5, 0.5, 2.0, -1.0, 3.0, 1.250000000000),
    (0.5, 0.5, -0.5, 10.0, 4.0, 5.750000000000),
    (0.5, 0.5, 1.5, 0.0, -2.0, 0.250000000000),
    (0.5, 0.9, 0.0, 1.0, 0.0, 0.500000000000),
    (0.5, 0.9, 2.0, -1.0, 3.0, 1.850000000000),
    (0.5, 0.9, -0.5, 10.0, 4.0, 6.550000000000),
    (0.5, 0.9, 1.5, 0.0, -2.0, -0.150000000000),
    (0.5, 0.99, 0.0, 1.0, 0.0, 0.500000000000),
    (0.5, 0.99, 2.0, -1.0, 3.0, 1.985000000000),
    (0.5, 0.99, -0.5, 10.0, 4.0, 6.730000000000),
    (0.5, 0.99, 1.5, 0.0, -2.0, -0.240000000000),
    (0.9, 0.0, 0.0, 1.0, 0.0, 0.900000000000),
    (0.9, 0.0, 2.0, -1.0, 3.0, -0.700000000000),
    (0.9, 0.0, -0.5, 10.0, 4.0, 8.950000000000),
    (0.9, 0.0, 1.5, 0.0, -2.0, 0.150000000000),
    (0.9, 0.5, 0.0, 1.0, 0.0, 0.900000000000),
    (0.9, 0.5, 2.0, -1.0, 3.0, 0.650000000000),
    (0.9, 0.5, -0.5, 10.0, 4.0, 10.750000000000),
    (0.9, 0.5, 1.5, 0.0, -2.0, -0.750000000000),
    (0.9, 0.9, 0.0, 1.0, 0.0, 0.900000000000),
    (0.9, 0.9, 2.0, -1.0, 3.0, 1.730000000000),
    (0.9, 0.9, -0.5, 10.0, 4.0, 12.190000000000),
    (0.9, 0.9, 1.5, 0.0, -2.0, -1.470000000000),
    (0.9, 0.99, 0.0, 1.0, 0.0, 0.900000000000),
    (0.9, 0.99, 2.0, -1.0, 3.0, 1.973000000000),
    (0.9, 0.99, -0.5, 10.0, 4.0, 12.514000000000),
    (0.9, 0.99, 1.5, 0.0, -2.0, -1.632000000000),
    (1.0, 0.0, 0.0, 1.0, 0.0, 1.000000000000),
    (1.0, 0.0, 2.0, -1.0, 3.0, -1.000000000000),
    (1.0, 0.0, -0.5, 10.0, 4.0, 10.000000000000),
    (1.0, 0.0, 1.5, 0.0, -2.0, 0.000000000000),
    (1.0, 0.5, 0.0, 1.0, 0.0, 1.000000000000),
    (1.0, 0.5, 2.0, -1.0, 3.0, 0.500000000000),
    (1.0, 0.5, -0.5, 10.0, 4.0, 12.000000000000),
    (1.0, 0.5, 1.5, 0.0, -2.0, -1.000000000000),
    (1.0, 0.9, 0.0, 1.0, 0.0, 1.000000000000),
    (1.0, 0.9, 2.0, -1.0, 3.0, 1.700000000000),
    (1.0, 0.9, -0.5, 10.0, 4.0, 13.600000000000),
    (1.0, 0.9, 1.5, 0.0, -2.0, -1.800000000000),
    (1.0, 0.99, 0.0, 1.0, 0.0, 1.000000000000),
    (1.0, 0.99, 2.0, -1.0, 3.0, 1.970000000000),
    (1.0, 0.99, -0.5, 10.0, 4.0, 13.960000000000),
    (1.0, 0.99, 1.5, 0.0, -2.0, -1.980000000000),
]


@pytest.mark.parametrize("alpha, gamma, q, reward, max_next, expected", BELLMAN_CASES)
def test_bellman_update_table(alpha, gamma, q, reward, max_next, expected):
    table = QTable(2)
    table.set("s", 1, q)
    table.set("next", 0, max_next)
    table.set("next", 1, max_next - 1.0)
    q_update(table, "s", 1, reward, "next", QConfig(alpha=alpha, gamma=gamma))
    assert table.get("s", 1) == pytest.approx(expected, abs=1e-12)
    assert table.get("next", 0) == max_next


def test_full_step_no_discount_reduces_to_reward():
    rng = np.random.default_rng(99)
    config = QConfig(alpha=1.0, gamma=0.0)
    for _ in range(1000):
        q, reward, other = (float(x) for x in rng.uniform(-1e6, 1e6, size=3))
        table = QTable(4)
        table.set(0, 2, q)
        table.set(1, int(rng.integers(4)), other)
        q_update(table, 0, 2, reward, 1, config)
        assert table.get(0, 2) == reward


def test_terminal_transition_ignores_future():
    table = QTable(2)
    table.set("s", 0, 5.0)
    q_update(table, "s", 0, 1.0, None, QConfig(alpha=0.5, gamma=0.9))
    assert table.get("s", 0) == pytest.approx(3.0)


def test_unseen_entries_read_zero():
    table = QTable(3)
    assert table.get(("a", 1), 2) == 0.0
    assert table.max_q("nothing") == 0.0
    assert len(table) == 0


def test_greedy_breaks_ties_low():
    table = QTable(3)
    assert table.greedy("s") == 0
    table.set("s", 1, 2.0)
    table.set("s", 2, 2.0)
    assert table.greedy("s") == 1


def test_non_finite_values_rejected():
    table = QTable(2)
    with pytest.raises(ValueError):
        table.set("s", 0, float("nan"))
    with pytest.raises(ValueError):
        table.set("s", 0, float("inf"))


def test_entries_and_max_abs():
    table = QTable(2)
    table.set("a", 0, -3.0)
    table.set("b", 1, 2.0)
    assert sorted((e.state_key, e.action, e.q) for e in table.entries()) == [("a", 0, -3.0), ("b", 1, 2.0)]
    assert table.max_abs() == 3.0


@pytest.mark.parametrize("overrides", [
    {"alpha": 0.0},
    {"alpha": 1.5},
    {"gamma": 1.0},
    {"epsilon": -0.1},
    {"batch_size": 0},
    {"replay_capacity": 4, "batch_size": 8},
])
def test_config_validation(overrides):
    with pytest.raises(ConfigError):
        QConfig(**overrides).validate()


def test_replay_buffer_evicts_oldest():
    buffer = ReplayBuffer(3)
    for i in range(5):
        buffer.push(Transition(i, 0, float(i), None))
    assert len(buffer) == 3
    sampled = buffer.sample(50, np.random.default_rng(0))
    assert len(sampled) == 3
    assert {t.state_key for t in sampled} <= {2, 3, 4}


def test_replay_buffer_empty_sample():
    assert ReplayBuffer(4).sample(2, np.random.default_rng(0)) == []


def test_replay_updates_apply_one_batch():
    config = QConfig(alpha=1.0, gamma=0.0, batch_size=4, replay_capacity=16)
    buffer = ReplayBuffer(config.replay_capacity)
    for i in range(10):
        buffer.push(Transition(i, 0, 1.0, None))
    table = QTable(1)
    assert replay_updates(table, buffer, config, np.random.default_rng(3)) == 4
    assert 1 <= len(table) <= 4
    assert all(e.q == 1.0 for e in table.entries())
