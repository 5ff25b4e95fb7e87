"""
State-Space Explorer
Expands a branching tree of level hashing workloads under a frontier
selection policy (random, PM-Aware or tabular Q-learning) and records how
quickly each policy discovers bug sites and covers PM instruction sites
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from itertools import product
from typing import Dict, Hashable, List, Optional, Sequence, Set, Tuple

import numpy as np

from ml.rl.qlearning import QConfig, QTable, ReplayBuffer, Transition, replay_updates
from pmem.errors import ContractViolation, GraphSpecError
from pmem.oracles import classify_signal, unpersisted_findings
from pmem.pm_state import MachineState
from pmem.trace_model import EventKind, RegionTable, TraceEvent
from services.levelhash_layout import MAX_LEVEL
from services.levelhash_service import KEY_LIMIT, BugKnob, KnobTag, LevelHashTable, random_op
from services.pm_heap import PMHeap

logger = logging.getLogger(__name__)

MAX_BRANCHING = 4
DEFAULT_MAX_DEPTH = 8
N_ACTION_BUCKETS = 4
START_KEY: Tuple[int, int, int] = (-1, -1, -1)

# Rotated over the seeded bug edges
SEEDED_KNOBS = (KnobTag.MISSING_FLUSH_TOKEN, KnobTag.EXTRA_FENCE_LOOP, KnobTag.CLWB_ARBITRARY_RANGE)


class Policy(str, Enum):
    RANDOM = "random"
    PM_AWARE = "pm-aware"
    QLEARN = "qlearn"


@dataclass(frozen=True)
class GraphSpec:
    seed: int = 0
    branching: int = 2
    depth: int = 3
    ops_per_edge: int = 4
    bug_sites: int = 2
    level_exponent: int = 2

    @property
    def node_count(self) -> int:
        return sum(self.branching ** d for d in range(self.depth + 1))

    @classmethod
    def from_dict(cls, data: object, max_depth: int = DEFAULT_MAX_DEPTH) -> "GraphSpec":
        """
        Validated spec from decoded JSON

        Raises:
            GraphSpecError: unknown keys, non-integer values or values out of range
        """
        if not isinstance(data, dict):
            raise GraphSpecError("graph spec must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise GraphSpecError(f"unknown graph spec keys: {unknown}")
        for key, value in data.items():
            if isinstance(value, bool) or not isinstance(value, int):
                raise GraphSpecError(f"'{key}' must be an integer, got {value!r}")

        spec = cls(**data)
        problems = []
        if spec.seed < 0:
            problems.append("seed must be >= 0")
        if not 1 <= spec.branching <= MAX_BRANCHING:
            problems.append(f"branching must be in [1, {MAX_BRANCHING}]")
        if not 0 <= spec.depth <= max_depth:
            problems.append(f"depth must be in [0, {max_depth}]")
        if spec.ops_per_edge < 1:
            problems.append("ops_per_edge must be >= 1")
        if not 1 <= spec.level_exponent <= MAX_LEVEL:
            problems.append(f"level_exponent must be in [1, {MAX_LEVEL}]")
        if problems:
            raise GraphSpecError("; ".join(problems))
        if not 0 <= spec.bug_sites <= spec.node_count - 1:
            raise GraphSpecError(f"bug_sites must be in [0, {spec.node_count - 1}] for this tree")
        return spec

    def to_dict(self) -> Dict[str, int]:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


def load_graph_spec(path: str, max_depth: int = DEFAULT_MAX_DEPTH) -> GraphSpec:
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise GraphSpecError(f"{path}: invalid JSON ({e.msg})") from None
    return GraphSpec.from_dict(data, max_depth)


@dataclass
class _Node:
    """A generated tree node: the workload after its path, replayed"""

    path: Tuple[int, ...]
    table: LevelHashTable
    events: List[TraceEvent]
    machine: MachineState
    regions: RegionTable
    bug_sites: Set[str]
    pm_sites: Set[str]

    @property
    def pm_pending(self) -> int:
        return len(self.machine.outstanding_lines(self.regions.is_persistent))


def _replay_edge(machine: MachineState, events: Sequence[TraceEvent], regions: RegionTable
                 ) -> Tuple[Set[str], Set[str]]:
    """Run an edge through the machine; (bug sites as CLASS@site, PM sites touched)"""
    bugs: Set[str] = set()
    sites: Set[str] = set()
    for event in events:
        if not regions.admits(event):
            continue
        if event.kind != EventKind.CRASH:
            sites.add(event.site)
        for signal in machine.step(event):
            bugs.add(f"{classify_signal(signal).value}@{signal.site}")
    # Whatever is still unpersisted at this node would be lost if the path ended here
    for bug_class, record in unpersisted_findings(machine, regions):
        bugs.add(f"{bug_class.value}@{record.site}")
    return bugs, sites


class WorkloadGraph:
    """
    Lazily generated workload tree

    The root edge initializes a table; every other edge runs ops_per_edge
    random operations on a fork of the parent's table, drawn from a PRNG
    seeded by (seed, path). Seeded bug edges end with one extra insert
    carrying a single-use knob with its own site variant.
    """

    def __init__(self, spec: GraphSpec):
        self.spec = spec
        paths = [p for d in range(1, spec.depth + 1) for p in product(range(spec.branching), repeat=d)]
        rng = np.random.default_rng(spec.seed)
        chosen = sorted(rng.choice(len(paths), size=spec.bug_sites, replace=False).tolist()) if paths else []
        self.bug_paths: Dict[Tuple[int, ...], int] = {paths[i]: ordinal for ordinal, i in enumerate(chosen)}

    def root(self) -> _Node:
        heap = PMHeap()
        table = LevelHashTable(heap, self.spec.level_exponent)
        events = heap.drain_events()
        machine = MachineState()
        bugs, sites = _replay_edge(machine, events, heap.regions)
        return _Node((), table, events, machine, heap.regions, bugs, sites)

    def children(self, node: _Node) -> List[_Node]:
        if len(node.path) >= self.spec.depth:
            return []
        return [self._child(node, i) for i in range(self.spec.branching)]

    def _child(self, parent: _Node, branch: int) -> _Node:
        path = parent.path + (branch,)
        rng = np.random.default_rng([self.spec.seed, *path])
        table = parent.table.fork()
        for _ in range(self.spec.ops_per_edge):
            random_op(table, rng)

        ordinal = self.bug_paths.get(path)
        if ordinal is not None:
            table.knobs = [BugKnob(SEEDED_KNOBS[ordinal % len(SEEDED_KNOBS)], count=1, variant=ordinal + 1)]
            key = int(rng.integers(1, KEY_LIMIT))
            while key in table:
                key = int(rng.integers(1, KEY_LIMIT))
            table.insert(key, int(rng.integers(0, KEY_LIMIT)))
            table.knobs = []

        events = table.heap.drain_events()
        machine = parent.machine.copy()
        bugs, sites = _replay_edge(machine, events, table.heap.regions)
        return _Node(path, table, events, machine, table.heap.regions, bugs, sites)


@dataclass(eq=False)
class ExplorationState:
    id: int
    parent: Optional[int]
    depth: int
    emitted_events: List[TraceEvent] = field(repr=False)
    pm_pending: int
    new_sites: int
    terminal: bool
    node: Optional[_Node] = field(default=None, repr=False, compare=False)


def pending_bucket(pm_pending: int) -> int:
    """Action bucket of a frontier state: pm_pending in {0}, {1}, {2,3}, {4+}"""
    if pm_pending <= 1:
        return max(pm_pending, 0)
    return 2 if pm_pending <= 3 else 3


def _site_bucket(new_sites: int) -> int:
    if new_sites == 0:
        return 0
    return 1 if new_sites <= 2 else 2


def state_key(state: ExplorationState) -> Tuple[int, int, int]:
    return pending_bucket(state.pm_pending), min(state.depth, 3), _site_bucket(state.new_sites)


def select_state(
    frontier: Sequence[ExplorationState],
    policy: Policy,
    q_table: Optional[QTable] = None,
    rng: Optional[np.random.Generator] = None,
    epsilon: float = 0.0,
    current_key: Hashable = START_KEY,
) -> ExplorationState:
    """
    Pick the next state to expand

    Random is uniform over the frontier. PM-Aware takes the largest
    pm_pending. QLearn explores uniformly with probability epsilon and
    otherwise takes the state whose action bucket has the highest q value
    from current_key. Ties go to the smallest id.

    Raises:
        ContractViolation: empty frontier
    """
    if not frontier:
        raise ContractViolation("cannot select from an empty frontier")
    policy = Policy(policy)

    if policy == Policy.RANDOM:
        return frontier[int(rng.integers(len(frontier)))]
    if policy == Policy.PM_AWARE:
        return min(frontier, key=lambda s: (-s.pm_pending, s.id))

    if epsilon > 0 and rng.random() < epsilon:
        return frontier[int(rng.integers(len(frontier)))]
    return min(frontier, key=lambda s: (-q_table.get(current_key, pending_bucket(s.pm_pending)), s.id))


@dataclass
class ExplorationResult:
    policy: str
    seed: int
    budget: int
    expansions: int
    states_generated: int
    unique_bug_sites: List[str]
    pm_sites_covered: int
    discovery_curve: List[int]
    coverage_curve: List[int]
    graph: Dict[str, int]
    q_table: Optional[QTable] = field(default=None, repr=False, compare=False)
    max_reward: float = field(default=0.0, compare=False)

    def to_dict(self) -> Dict[str, object]:
        return {
            "policy": self.policy,
            "seed": self.seed,
            "budget": self.budget,
            "expansions": self.expansions,
            "states_generated": self.states_generated,
            "unique_bug_sites": list(self.unique_bug_sites),
            "pm_sites_covered": self.pm_sites_covered,
            "discovery_curve": list(self.discovery_curve),
            "coverage_curve": list(self.coverage_curve),
            "graph": dict(self.graph),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def run_exploration(
    spec: GraphSpec,
    policy: Policy,
    budget: int,
    config: QConfig,
    reward_bug: float = 10.0,
    reward_site: float = 1.0,
) -> ExplorationResult:
    """
    Explore a workload tree under one policy

    Each expansion pops a state, credits the bug sites and PM sites found
    on its edge (reward = reward_bug per new bug site + reward_site per new
    PM site) and pushes its children. QLearn stores every transition and
    applies one sampled batch of Bellman updates per step.

    Args:
        spec: validated graph spec
        policy: frontier selection policy
        budget: maximum expansions (>= 1)
        config: Q-learning parameters; its seed drives every random choice

    Returns:
        Deterministic result for a given (spec, policy, budget, config)
    """
    if budget < 1:
        raise ContractViolation(f"budget must be >= 1, got {budget}")
    policy = Policy(policy)
    config.validate()

    graph = WorkloadGraph(spec)
    rng = np.random.default_rng(config.seed)
    q_table = QTable(N_ACTION_BUCKETS)
    buffer = ReplayBuffer(config.replay_capacity)

    root = graph.root()
    frontier = [ExplorationState(0, None, 0, root.events, root.pm_pending, len(root.pm_sites),
                                 spec.depth == 0, root)]
    next_id = 1
    found: Set[str] = set()
    covered: Set[str] = set()
    discovery: List[int] = []
    coverage: List[int] = []
    current_key: Hashable = START_KEY
    max_reward = 0.0

    while len(discovery) < budget and frontier:
        chosen = select_state(frontier, policy, q_table, rng, config.epsilon, current_key)
        frontier.remove(chosen)
        node = chosen.node

        new_bugs = node.bug_sites - found
        new_sites = node.pm_sites - covered
        reward = reward_bug * len(new_bugs) + reward_site * len(new_sites)
        max_reward = max(max_reward, reward)
        found |= new_bugs
        covered |= new_sites
        discovery.append(len(found))
        coverage.append(len(covered))
        if new_bugs:
            logger.debug(f"State {chosen.id} ({policy.value}) found {sorted(new_bugs)}")

        for child in graph.children(node):
            frontier.append(ExplorationState(
                next_id, chosen.id, chosen.depth + 1, child.events, child.pm_pending,
                len(child.pm_sites - covered), len(child.path) == spec.depth, child,
            ))
            next_id += 1

        if policy == Policy.QLEARN:
            key = state_key(chosen)
            buffer.push(Transition(current_key, pending_bucket(chosen.pm_pending), reward,
                                   key if frontier else None))
            replay_updates(q_table, buffer, config, rng)
            current_key = key

    result = ExplorationResult(
        policy=policy.value,
        seed=config.seed,
        budget=budget,
        expansions=len(discovery),
        states_generated=next_id,
        unique_bug_sites=sorted(found),
        pm_sites_covered=len(covered),
        discovery_curve=discovery,
        coverage_curve=coverage,
        graph=spec.to_dict(),
        q_table=q_table,
        max_reward=max_reward,
    )
    logger.info(f"✅ {policy.value}: {result.expansions} expansions, "
                f"{len(found)} bug sites, {len(covered)} PM sites")
    return result


def compare_policies(
    spec: GraphSpec,
    budget: int,
    config: QConfig,
    policies: Sequence[Policy] = tuple(Policy),
    workers: int = 1,
    reward_bug: float = 10.0,
    reward_site: float = 1.0,
) -> Dict[str, ExplorationResult]:
    """Run each policy on the same tree; independent runs share nothing"""

    def run(policy: Policy) -> ExplorationResult:
        return run_exploration(spec, policy, budget, config, reward_bug, reward_site)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, policies))
    else:
        results = [run(p) for p in policies]
    return {r.policy: r for r in results}
