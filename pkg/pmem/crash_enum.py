"""
Crash Image Enumeration
Every durable memory image a crash could leave behind, and recovery checks
over those images

At a crash point, fenced lines are durable, DIRTY lines are lost, and each
FLUSH_PENDING line may or may not have drained from the write pending queue.
With k pending lines there are exactly 2^k images.
"""

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

from pmem.errors import ContractViolation, CrashEnumerationLimit
from pmem.pm_state import MachineState, persisted_view
from pmem.trace_model import EventKind, RegionTable, TraceEvent

logger = logging.getLogger(__name__)

DEFAULT_CAP = 20
CONSISTENT = "Consistent"


@dataclass(frozen=True)
class CrashImage:
    image: Mapping[int, bytes]
    included_pending: Tuple[int, ...]
    crash_event: int


@dataclass(frozen=True)
class Verdict:
    """Consistent, or a violation naming every rule the image breaks"""

    kinds: Tuple[str, ...] = ()
    detail: str = ""

    @property
    def consistent(self) -> bool:
        return not self.kinds

    @property
    def kind(self) -> str:
        return self.kinds[0] if self.kinds else CONSISTENT

    @classmethod
    def ok(cls) -> "Verdict":
        return cls()

    @classmethod
    def violation(cls, *kinds: str, detail: str = "") -> "Verdict":
        if not kinds:
            raise ValueError("a violation needs at least one kind")
        return cls(kinds=tuple(kinds), detail=detail)

    def to_dict(self) -> Dict[str, object]:
        data: Dict[str, object] = {"kind": self.kind}
        if self.kinds:
            data["kinds"] = list(self.kinds)
        if self.detail:
            data["detail"] = self.detail
        return data


RecoveryChecker = Callable[[CrashImage], Verdict]


@dataclass
class CrashCheckResult:
    results: List[Tuple[CrashImage, Verdict]]
    summary: Counter

    @property
    def violations(self) -> int:
        return sum(count for kind, count in self.summary.items() if kind != CONSISTENT)


def crash_points(events: Sequence[TraceEvent]) -> List[int]:
    """Indices of explicit crash markers"""
    return [e.index for e in events if e.kind == EventKind.CRASH]


def fence_crash_points(events: Sequence[TraceEvent]) -> List[int]:
    """
    Crash points just before every fence

    This is where the pending set is largest; the image that includes every
    pending line equals the durable state just after the fence.
    """
    return [e.index for e in events if e.kind == EventKind.FENCE]


def iter_snapshots(
    events: Sequence[TraceEvent],
    points: Sequence[int],
    regions: RegionTable,
) -> Iterator[Tuple[int, MachineState]]:
    """
    Machine snapshots at each crash point, from a single replay pass

    Args:
        events: the full trace
        points: crash points (any order); each must be <= len(events)
        regions: decides which events take part

    Yields:
        (crash point, machine state after every admitted event before it),
        in ascending crash-point order
    """
    limit = len(events)
    ordered = sorted(set(points))
    if ordered and (ordered[0] < 0 or ordered[-1] > limit):
        raise ContractViolation(f"crash points must lie in [0, {limit}]")

    state = MachineState()
    cursor = 0
    for point in ordered:
        while cursor < limit and events[cursor].index < point:
            event = events[cursor]
            if regions.admits(event):
                state.step(event)
            cursor += 1
        yield point, state.copy()


def images_from_state(state: MachineState, crash_event: int, cap: int = DEFAULT_CAP) -> Iterator[CrashImage]:
    """
    Images for one machine snapshot, subsets in binary counting order of the
    sorted pending line addresses (bit i selects the i-th lowest line)
    """
    pending = sorted(state.pending_set)
    if len(pending) > cap:
        raise CrashEnumerationLimit(len(pending), cap)

    base = persisted_view(state)
    for mask in range(1 << len(pending)):
        included = tuple(line for bit, line in enumerate(pending) if mask >> bit & 1)
        image = dict(base)
        for line in included:
            image[line] = state.lines[line].cache_content
        yield CrashImage(image=image, included_pending=included, crash_event=crash_event)


def enumerate_crash_images(
    events: Sequence[TraceEvent],
    crash_event: int,
    regions: Optional[RegionTable] = None,
    cap: int = DEFAULT_CAP,
) -> List[CrashImage]:
    """
    Every possible persisted image when the program crashes at crash_event

    Args:
        events: the trace
        crash_event: events with index < crash_event have executed
        regions: region table; rebuilt from the trace's region events if omitted
        cap: refuse to enumerate more than 2^cap images

    Returns:
        Exactly 2^k images for k flush-pending lines

    Raises:
        CrashEnumerationLimit: k exceeds cap
        ContractViolation: crash_event beyond the trace
    """
    if regions is None:
        regions = region_table_of(events)
    (_, state), = iter_snapshots(events, [crash_event], regions)
    images = list(images_from_state(state, crash_event, cap))
    logger.debug(f"Crash at {crash_event}: {len(state.pending_set)} pending lines, {len(images)} images")
    return images


def region_table_of(events: Sequence[TraceEvent]) -> RegionTable:
    regions = RegionTable()
    for event in events:
        if event.kind == EventKind.REGION:
            regions.add_region(event.addr, event.size, event.persistent)
        elif event.kind == EventKind.VOLATILE_HINT:
            regions.add_volatile_hint(event.addr, event.size)
    return regions


def check_images(
    images: Sequence[CrashImage],
    checker: RecoveryChecker,
    workers: int = 1,
) -> CrashCheckResult:
    """
    Run a recovery checker over every image

    Checkers that declare themselves pure (a truthy ``pure`` attribute) run
    in a thread pool when workers > 1; others run sequentially.
    """
    if workers > 1 and getattr(checker, "pure", False):
        with ThreadPoolExecutor(max_workers=workers) as pool:
            verdicts = list(pool.map(checker, images))
    else:
        verdicts = [checker(image) for image in images]

    summary = Counter(v.kind for v in verdicts)
    for image, verdict in zip(images, verdicts):
        if not verdict.consistent:
            logger.debug(f"Image {image.included_pending} at {image.crash_event}: {verdict.kind}")
    return CrashCheckResult(results=list(zip(images, verdicts)), summary=summary)


def always_consistent(image: CrashImage) -> Verdict:
    return Verdict.ok()


always_consistent.pure = True


CheckerFactory = Callable[[int, MachineState], RecoveryChecker]


def sweep_crash_points(
    events: Sequence[TraceEvent],
    points: Sequence[int],
    checker_factory: CheckerFactory,
    regions: Optional[RegionTable] = None,
    cap: int = DEFAULT_CAP,
    workers: int = 1,
) -> List[Tuple[int, CrashCheckResult]]:
    """
    Enumerate and check the images of many crash points in one replay pass

    Args:
        events: the trace
        points: crash points to visit
        checker_factory: builds the checker for a crash point from the
            machine snapshot taken there
        regions: region table; rebuilt from the trace if omitted
        cap: per-point pending-line cap
        workers: thread count for pure checkers

    Returns:
        (crash point, check result) in ascending crash-point order
    """
    if regions is None:
        regions = region_table_of(events)
    results = []
    for point, state in iter_snapshots(events, points, regions):
        images = list(images_from_state(state, point, cap))
        results.append((point, check_images(images, checker_factory(point, state), workers)))
    total = sum(len(r.results) for _, r in results)
    violations = sum(r.violations for _, r in results)
    logger.info(f"Checked {total} images over {len(results)} crash points: {violations} violations")
    return results


def always_consistent_factory(crash_event: int, state: MachineState) -> RecoveryChecker:
    return always_consistent
