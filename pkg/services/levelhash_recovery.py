"""
Level Hashing Recovery Checker
Decodes a crash image as a level hashing table and judges it against the
keys committed before the crash
"""

import bisect
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

from pmem.crash_enum import CrashImage, RecoveryChecker, Verdict
from pmem.errors import CorruptLayoutError
from pmem.pm_state import MachineState
from pmem.trace_model import LINE_SIZE, EventKind, TraceEvent, line_of
from services.levelhash_layout import (
    BUCKET_SIZE,
    MAGIC,
    MAX_LEVEL,
    SLOT_SIZE,
    SLOTS_PER_BUCKET,
    Level,
    bottom_count,
    bottom_index,
    read_line,
    site_name,
    slot_line,
    top_count,
    top_index,
    unpack_header,
    unpack_slots,
)
from services.pm_heap import HEAP_BASE

logger = logging.getLogger(__name__)

GARBAGE_SLOT = "GarbageSlot"
DUPLICATE_KV = "DuplicateKV"
LOST_KV = "LostKV"
CORRUPT_LAYOUT = "CorruptLayout"

# copy, destination token, source token
MOVE_FENCES = 3


@dataclass(frozen=True)
class SlotEntry:
    level: Level
    index: int
    slot: int
    key: int
    value: int


@dataclass
class DecodedTable:
    level: int = 0
    entries: List[SlotEntry] = field(default_factory=list)
    garbage: List[SlotEntry] = field(default_factory=list)

    def keys(self) -> FrozenSet[int]:
        return frozenset(e.key for e in self.entries)


def decode_image(image: Mapping[int, bytes], base: int = HEAP_BASE) -> DecodedTable:
    """
    Decode the table rooted at base

    An all-zero header is a table that was never initialized (empty).
    Token-set slots holding key 0 or a key that does not hash to their
    bucket are returned as garbage.

    Raises:
        CorruptLayoutError: bad magic, level, bucket bases or token bits
    """
    header = read_line(image, base)
    if not any(header):
        return DecodedTable()

    magic, level, seed1, seed2, top_base, bottom_base = unpack_header(header)
    if magic != MAGIC:
        raise CorruptLayoutError(f"bad header magic {magic!r}")
    if not 1 <= level <= MAX_LEVEL:
        raise CorruptLayoutError(f"header level {level} out of range")
    if top_base % BUCKET_SIZE or bottom_base % BUCKET_SIZE:
        raise CorruptLayoutError(f"misaligned bucket bases {top_base:#x}/{bottom_base:#x}")

    spans = (
        (Level.TOP, top_base, top_count(level), top_index),
        (Level.BOTTOM, bottom_base, bottom_count(level), bottom_index),
    )
    table = DecodedTable(level=level)
    # Only touched lines can hold a set token
    for addr in sorted(image):
        for level_kind, level_base, count, index_of in spans:
            offset = addr - level_base
            if not 0 <= offset < count * BUCKET_SIZE or offset % BUCKET_SIZE:
                continue
            token = image[addr][0]
            if token >> 4:
                raise CorruptLayoutError(f"token byte {token:#04x} at {addr:#x} has unused bits set")
            if not token:
                continue
            index = offset // BUCKET_SIZE
            for slot, (key, value) in enumerate(unpack_slots(read_line(image, slot_line(addr)))):
                if not token >> slot & 1:
                    continue
                entry = SlotEntry(level_kind, index, slot, key, value)
                if key and index in (index_of(key, seed1, level), index_of(key, seed2, level)):
                    table.entries.append(entry)
                else:
                    table.garbage.append(entry)
    return table


def check_recovery(
    image: Mapping[int, bytes],
    expected: Iterable[int],
    tolerated: FrozenSet[int] = frozenset(),
    base: int = HEAP_BASE,
) -> Verdict:
    """
    Judge one crash image

    Args:
        image: line base -> durable content
        expected: keys that must survive the crash
        tolerated: keys allowed to appear twice (a movement in flight)
        base: heap address of the table header

    Returns:
        Consistent, or a violation listing GarbageSlot, DuplicateKV and
        LostKV in that order; CorruptLayout when the image does not decode
    """
    try:
        table = decode_image(image, base)
    except CorruptLayoutError as e:
        return Verdict.violation(CORRUPT_LAYOUT, detail=str(e))

    kinds, details = [], []
    if table.garbage:
        kinds.append(GARBAGE_SLOT)
        first = table.garbage[0]
        details.append(f"{len(table.garbage)} token-set slot(s) with foreign keys, "
                       f"first {first.level.value}[{first.index}][{first.slot}]")

    counts = Counter(e.key for e in table.entries)
    duplicates = sorted(k for k, n in counts.items() if n > 1 and k not in tolerated)
    if duplicates:
        kinds.append(DUPLICATE_KV)
        details.append(f"keys stored twice: {duplicates[:4]}")

    lost = sorted(set(expected) - counts.keys())
    if lost:
        kinds.append(LOST_KV)
        details.append(f"{len(lost)} committed key(s) missing: {lost[:4]}")

    if kinds:
        return Verdict.violation(*kinds, detail="; ".join(details))
    return Verdict.ok()


Location = Tuple[int, int]
Span = Tuple[int, int]
# ("set", location, key), ("clear", location, None) or ("header", spans, None)
Change = Tuple[str, object, Optional[int]]

SLOT_SITES = frozenset({"insert_slot", "rehash_slot", "move_copy"})
TOKEN_SITES = frozenset({"insert_token", "rehash_token", "move_dest_token", "move_src_token", "delete_token"})
HEADER_SITES = frozenset({"init_header", "resize_header"})


def header_spans(line: bytes) -> Tuple[Span, ...]:
    """(base, size) of both levels named by a header line; empty when it does not decode"""
    if len(line) != LINE_SIZE:
        return ()
    magic, level, _, _, top_base, bottom_base = unpack_header(line)
    if magic != MAGIC or not 1 <= level <= MAX_LEVEL:
        return ()
    return (top_base, top_count(level) * BUCKET_SIZE), (bottom_base, bottom_count(level) * BUCKET_SIZE)


class CommitLog:
    """
    Keys committed before each crash point, read off the trace

    A slot counts once the token store that set it has been flushed and then
    fenced, and stops counting as soon as a store clears its token bit. Only
    slots inside the levels of the last committed header count.
    """

    def __init__(self, events: Sequence[TraceEvent], base: int = HEAP_BASE):
        self.base = base
        self.points: List[int] = []
        self.snapshots: List[FrozenSet[int]] = []

        self._live: Dict[Location, int] = {}
        self._spans: Tuple[Span, ...] = ()
        owners: Dict[Location, int] = {}
        assigned: Dict[Location, int] = {}
        tokens: Dict[int, int] = {}
        staged: Dict[int, List[Change]] = defaultdict(list)
        flushed: Dict[int, List[Change]] = defaultdict(list)

        for event in events:
            if event.kind == EventKind.STORE:
                name = site_name(event.site)
                if name in SLOT_SITES:
                    bucket = line_of(event.addr) - LINE_SIZE
                    owners[bucket, event.addr % LINE_SIZE // SLOT_SIZE] = int.from_bytes(event.value[:8], "little")
                    continue
                cleared: FrozenSet[Location] = frozenset()
                if name in TOKEN_SITES:
                    changes, cleared = self._token_changes(event, owners, assigned, tokens)
                elif name in HEADER_SITES and event.addr == base:
                    changes = [("header", header_spans(event.value), None)]
                else:
                    continue
                # A store after a flush leaves the line dirty again; a cleared slot drops its pending set
                pending = [c for c in flushed.pop(event.line, []) + staged[event.line] if c[1] not in cleared]
                staged[event.line] = pending + changes
            elif event.kind == EventKind.FLUSH and event.line in staged:
                flushed[event.line].extend(staged.pop(event.line))
            elif event.kind == EventKind.FENCE and flushed:
                for changes in flushed.values():
                    for change in changes:
                        self._record(event.index, change)
                flushed.clear()
        logger.debug(f"Commit log: {len(self.points)} changes, {len(self._live)} live slots at end")

    def _token_changes(self, event: TraceEvent, owners: Dict[Location, int], assigned: Dict[Location, int],
                       tokens: Dict[int, int]) -> Tuple[List[Change], FrozenSet[Location]]:
        bucket, new = event.addr, event.value[0]
        old = tokens.get(bucket, 0)
        tokens[bucket] = new
        changes, cleared = [], set()
        for slot in range(SLOTS_PER_BUCKET):
            loc = (bucket, slot)
            if new >> slot & 1:
                key = owners.get(loc, 0)
                if not old >> slot & 1 or assigned.get(loc) != key:
                    assigned[loc] = key
                    changes.append(("set", loc, key))
            elif old >> slot & 1:
                assigned.pop(loc, None)
                cleared.add(loc)
                # Clearing takes effect once the store has executed
                self._record(event.index, ("clear", loc, None))
        return changes, frozenset(cleared)

    def _record(self, index: int, change: Change) -> None:
        kind, target, key = change
        if kind == "set":
            self._live[target] = key
        elif kind == "clear":
            self._live.pop(target, None)
        else:
            self._spans = target
        self.points.append(index)
        self.snapshots.append(frozenset(
            key for (bucket, _), key in self._live.items()
            if key and any(start <= bucket < start + size for start, size in self._spans)
        ))

    def expected_at(self, crash_event: int) -> FrozenSet[int]:
        """Keys whose commit executed before crash_event"""
        pos = bisect.bisect_left(self.points, crash_event)
        return self.snapshots[pos - 1] if pos else frozenset()


class RecoveryOracle:
    """
    Builds per-crash-point recovery checkers for a level hashing trace

    The keys a crash must preserve come from the commit log; a key whose
    delete is in flight is not required. A key copied by a one-step movement
    may appear twice until the movement's third fence has executed.
    """

    def __init__(self, events: Sequence[TraceEvent], base: int = HEAP_BASE):
        self.base = base
        self.log = CommitLog(events, base)
        fences = [e.index for e in events if e.kind == EventKind.FENCE]
        last = events[-1].index + 1 if events else 0
        self.windows: List[Tuple[int, int, int]] = []
        for event in events:
            if event.kind == EventKind.STORE and site_name(event.site) == "move_copy":
                pos = bisect.bisect_right(fences, event.index) + MOVE_FENCES - 1
                end = fences[pos] if pos < len(fences) else last
                key = int.from_bytes(event.value[:8], "little")
                self.windows.append((event.index, end, key))
        logger.debug(f"Recovery oracle: {len(self.windows)} movement windows")

    def tolerated_at(self, crash_event: int) -> FrozenSet[int]:
        return frozenset(key for start, end, key in self.windows if start < crash_event <= end)

    def expected_at(self, crash_event: int) -> FrozenSet[int]:
        return self.log.expected_at(crash_event)

    def checker(self, crash_event: int, _state: MachineState) -> RecoveryChecker:
        expected = self.expected_at(crash_event)
        tolerated = self.tolerated_at(crash_event)

        def check(image: CrashImage) -> Verdict:
            return check_recovery(image.image, expected, tolerated, self.base)

        check.pure = True
        return check

    __call__ = checker
