"""Test the workload tree explorer and its frontier policies"""

import json

import numpy as np
import pytest

from ml.rl.explorer import (
    ExplorationState,
    GraphSpec,
    Policy,
    WorkloadGraph,
    compare_policies,
    load_graph_spec,
    pending_bucket,
    run_exploration,
    select_state,
)
from ml.rl.qlearning import QConfig, QTable
from pmem.errors import ContractViolation, GraphSpecError
from tests.conftest import FIXTURES

SMALL = GraphSpec(seed=3, branching=2, depth=3, ops_per_edge=3, bug_sites=3, level_exponent=2)


def _state(state_id: int, pm_pending: int) -> ExplorationState:
    return ExplorationState(state_id, None, 1, [], pm_pending, 0, False)


def test_graph_spec_defaults_and_round_trip():
    spec = GraphSpec.from_dict({})
    assert spec == GraphSpec()
    assert GraphSpec.from_dict(SMALL.to_dict()) == SMALL
    assert SMALL.node_count == 15


@pytest.mark.parametrize("data", [
    [],
    {"colour": 1},
    {"branching": True},
    {"depth": "3"},
    {"branching": 5},
    {"depth": 9},
    {"ops_per_edge": 0},
    {"seed": -1},
    {"level_exponent": 0},
    {"depth": 1, "branching": 2, "bug_sites": 3},
])
def test_graph_spec_rejects(data):
    with pytest.raises(GraphSpecError):
        GraphSpec.from_dict(data)


def test_max_depth_bounds_the_tree():
    assert GraphSpec.from_dict({"depth": 2}, max_depth=2).depth == 2
    with pytest.raises(GraphSpecError):
        GraphSpec.from_dict({"depth": 3}, max_depth=2)


def test_load_graph_spec(tmp_path):
    spec = load_graph_spec(str(FIXTURES / "explore_graph.json"))
    assert spec.node_count == 85
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(GraphSpecError):
        load_graph_spec(str(bad))


def test_tree_is_deterministic():
    first, second = WorkloadGraph(SMALL), WorkloadGraph(SMALL)
    assert first.bug_paths == second.bug_paths
    assert len(first.bug_paths) == SMALL.bug_sites
    a = first.children(first.root())
    b = second.children(second.root())
    assert [n.events for n in a] == [n.events for n in b]
    assert [n.path for n in a] == [(0,), (1,)]


def test_leaves_have_no_children():
    graph = WorkloadGraph(GraphSpec(depth=1, branching=2, bug_sites=0))
    for child in graph.children(graph.root()):
        assert graph.children(child) == []


def test_pending_buckets():
    assert [pending_bucket(n) for n in range(6)] == [0, 1, 2, 2, 3, 3]


def test_pm_aware_prefers_pending_lines_then_lowest_id():
    frontier = [_state(0, 1), _state(1, 3), _state(2, 3)]
    assert select_state(frontier, Policy.PM_AWARE).id == 1


def test_qlearn_greedy_follows_q_values():
    table = QTable(4)
    table.set("here", pending_bucket(0), 2.0)
    frontier = [_state(0, 5), _state(1, 0)]
    rng = np.random.default_rng(0)
    assert select_state(frontier, Policy.QLEARN, table, rng, 0.0, "here").id == 1
    assert select_state(frontier, Policy.QLEARN, QTable(4), rng, 0.0, "here").id == 0


def test_qlearn_with_zero_q_values_takes_smallest_id():
    rng = np.random.default_rng(3)
    for _ in range(25):
        ids = [int(i) for i in rng.permutation(12)[:int(rng.integers(1, 13))]]
        frontier = [_state(i, int(rng.integers(0, 6))) for i in ids]
        assert select_state(frontier, Policy.QLEARN, QTable(4), rng, 0.0).id == min(ids)


def test_qlearn_exploration_replays_under_a_fixed_seed():
    frontier = [_state(i, i % 5) for i in range(10)]
    first = select_state(frontier, Policy.QLEARN, QTable(4), np.random.default_rng(42), 1.0).id
    for _ in range(5):
        assert select_state(frontier, Policy.QLEARN, QTable(4), np.random.default_rng(42), 1.0).id == first

    runs = []
    for _ in range(2):
        rng = np.random.default_rng(42)
        runs.append([select_state(frontier, Policy.QLEARN, QTable(4), rng, 1.0).id for _ in range(20)])
    assert runs[0] == runs[1]
    assert len(set(runs[0])) > 1


def test_random_policy_stays_in_frontier():
    frontier = [_state(i, 0) for i in range(5)]
    rng = np.random.default_rng(1)
    picks = {select_state(frontier, Policy.RANDOM, rng=rng).id for _ in range(50)}
    assert picks <= set(range(5)) and len(picks) > 1


def test_empty_frontier_is_a_contract_violation():
    with pytest.raises(ContractViolation):
        select_state([], Policy.PM_AWARE)


def test_budget_of_one_expands_the_root_only():
    result = run_exploration(SMALL, Policy.RANDOM, 1, QConfig(seed=1))
    assert result.expansions == 1
    assert result.states_generated == 1 + SMALL.branching
    assert result.unique_bug_sites == []
    assert len(result.discovery_curve) == len(result.coverage_curve) == 1


def test_budget_must_be_positive():
    with pytest.raises(ContractViolation):
        run_exploration(SMALL, Policy.RANDOM, 0, QConfig())


@pytest.mark.parametrize("policy", list(Policy))
def test_runs_are_deterministic(policy):
    first = run_exploration(SMALL, policy, 8, QConfig(seed=42))
    second = run_exploration(SMALL, policy, 8, QConfig(seed=42))
    assert first.to_json() == second.to_json()


def test_curves_are_monotone():
    result = run_exploration(SMALL, Policy.QLEARN, SMALL.node_count, QConfig(seed=2))
    assert result.discovery_curve == sorted(result.discovery_curve)
    assert result.coverage_curve == sorted(result.coverage_curve)
    assert result.discovery_curve[-1] == len(result.unique_bug_sites)
    assert result.coverage_curve[-1] == result.pm_sites_covered


def test_exhaustive_budget_finds_the_same_sites():
    spec = load_graph_spec(str(FIXTURES / "explore_graph.json"))
    results = compare_policies(spec, spec.node_count, QConfig(seed=7))
    assert set(results) == {p.value for p in Policy}
    found = [tuple(r.unique_bug_sites) for r in results.values()]
    assert len(set(found)) == 1
    assert len(found[0]) == spec.bug_sites
    assert all(r.expansions == spec.node_count for r in results.values())
    assert len({r.pm_sites_covered for r in results.values()}) == 1


def test_q_values_stay_bounded():
    config = QConfig(seed=11)
    result = run_exploration(SMALL, Policy.QLEARN, SMALL.node_count, config)
    bound = result.max_reward / (1 - config.gamma)
    assert len(result.q_table) > 0
    assert result.q_table.max_abs() <= bound + 1e-9


def test_compare_with_workers_matches_sequential():
    sequential = compare_policies(SMALL, 6, QConfig(seed=5))
    threaded = compare_policies(SMALL, 6, QConfig(seed=5), workers=3)
    assert {k: v.to_json() for k, v in sequential.items()} == {k: v.to_json() for k, v in threaded.items()}


def test_result_json_shape():
    data = json.loads(run_exploration(SMALL, Policy.PM_AWARE, 3, QConfig()).to_json())
    assert data["policy"] == "pm-aware"
    assert data["graph"] == SMALL.to_dict()
    assert data["expansions"] == 3
