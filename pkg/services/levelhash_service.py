"""
Level Hashing Service
A two-level, four-slot-bucket hash index running on the simulated PM heap.
Every persistent write is recorded as a trace event; bug knobs reproduce
known persistence bug patterns at chosen instruction sites.
"""

import copy
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from pmem.errors import DuplicateKeyError, InvalidKeyError, TableFullError
from pmem.trace_model import LINE_SIZE, RegionTable, TraceEvent
from services.levelhash_layout import (
    BUCKET_SIZE,
    MASK64,
    MAX_LEVEL,
    META_SIZE,
    ROOT_OFFSET,
    SEED1,
    SEED2,
    SLOTS_PER_BUCKET,
    Level,
    alternate,
    bucket_addr,
    bottom_count,
    candidates,
    pack_header,
    pack_root,
    pack_slot,
    site,
    slot_addr,
    slot_line,
    token_addr,
    top_count,
    top_index,
    unpack_slots,
)
from services.pm_heap import PMHeap

logger = logging.getLogger(__name__)


class KnobTag(str, Enum):
    NONE = "None"
    MISSING_FLUSH_TOKEN = "MissingFlushToken"
    MISSING_FENCE_TOKEN_VALUE = "MissingFenceTokenValue"
    FLUSH_WHOLE_HEADER = "FlushWholeHeader"
    CLWB_ARBITRARY_RANGE = "ClwbArbitraryRange"
    NON_ATOMIC_INIT = "NonAtomicInit"
    EXTRA_FENCE_LOOP = "ExtraFenceLoop"
    DUPLICATE_ON_MOVE = "DuplicateOnMove"


@dataclass
class BugKnob:
    """
    A seeded persistence bug

    Args:
        tag: which bug pattern
        count: how many times to apply it (None = every opportunity)
        variant: site variant of the first application
        distinct_sites: give every application its own site variant
        span: lines written back by ClwbArbitraryRange
        repeat: fences added per ExtraFenceLoop application
        crash_markers: crash markers emitted by the crash-semantic knobs
    """

    tag: KnobTag
    count: Optional[int] = None
    variant: int = 0
    distinct_sites: bool = False
    span: int = 1
    repeat: int = 1
    crash_markers: int = 4
    applied: int = 0
    markers_emitted: int = 0

    def take(self) -> Optional[int]:
        """Consume one application; the site variant to use, or None when used up"""
        if self.count is not None and self.applied >= self.count:
            return None
        variant = self.variant + (self.applied if self.distinct_sites else 0)
        self.applied += 1
        return variant

    def take_marker(self) -> bool:
        if self.markers_emitted >= self.crash_markers:
            return False
        self.markers_emitted += 1
        return True


def parse_knob(name: Optional[str]) -> Optional[BugKnob]:
    """Knob from its CLI name; None for 'None' or no name"""
    if name is None:
        return None
    try:
        tag = KnobTag(name)
    except ValueError:
        valid = ", ".join(t.value for t in KnobTag)
        raise ValueError(f"unknown knob {name!r} (expected one of: {valid})") from None
    return None if tag == KnobTag.NONE else BugKnob(tag)


def _free_slot(token: int) -> Optional[int]:
    for slot in range(SLOTS_PER_BUCKET):
        if not token >> slot & 1:
            return slot
    return None


class LevelHashTable:
    """
    Level hashing on a PM heap

    The table keeps no private copy of its buckets: every probe reads the
    heap, so the program view and the trace can never drift apart.
    """

    def __init__(
        self,
        heap: PMHeap,
        level_exponent: int = 3,
        knobs: Optional[Sequence[BugKnob]] = None,
        movement: bool = True,
        seeds: Tuple[int, int] = (SEED1, SEED2),
    ):
        """
        Allocate and initialize a table

        Args:
            heap: heap that records the trace
            level_exponent: top level holds 2^level_exponent buckets
            knobs: bug knobs to apply (empty for the bug-free protocol)
            movement: try one-step movement before resizing
            seeds: seeds of the two hash functions
        """
        if not 1 <= level_exponent <= MAX_LEVEL:
            raise ValueError(f"level exponent must be in [1, {MAX_LEVEL}], got {level_exponent}")
        self.heap = heap
        self.knobs: List[BugKnob] = list(knobs or [])
        self.movement = movement
        self.seeds = seeds
        self.level = level_exponent

        self.base = heap.allocate(META_SIZE)
        self.top_base = heap.allocate(top_count(self.level) * BUCKET_SIZE)
        self.bottom_base = heap.allocate(bottom_count(self.level) * BUCKET_SIZE)

        self.keys: List[int] = []
        self._key_set: Set[int] = set()
        self.resize_count = 0
        self.move_count = 0
        self.last_rehashed = 0
        self._marker_due: Optional[BugKnob] = None

        self._init_metadata()
        logger.info(f"✅ Level hash table initialized (level {self.level}, movement={movement})")

    @property
    def item_count(self) -> int:
        return len(self.keys)

    def __contains__(self, key: int) -> bool:
        return key in self._key_set

    def __len__(self) -> int:
        return len(self.keys)

    # knobs

    def _apply(self, tag: KnobTag) -> Optional[Tuple[BugKnob, int]]:
        for knob in self.knobs:
            if knob.tag == tag:
                variant = knob.take()
                if variant is not None:
                    return knob, variant
        return None

    # heap access

    def _level_base(self, level_kind: Level) -> int:
        return self.top_base if level_kind == Level.TOP else self.bottom_base

    def _read_bucket(self, bucket: int) -> Tuple[int, List[Tuple[int, int]]]:
        token = self.heap.read(token_addr(bucket), 1)[0]
        return token, unpack_slots(self.heap.read(slot_line(bucket), LINE_SIZE))

    def _flush_header(self, default_site: str) -> None:
        hit = self._apply(KnobTag.FLUSH_WHOLE_HEADER)
        if hit is None:
            self.heap.flush(self.base, default_site)
        else:
            # The header block spans three lines; only the first is ever written
            self.heap.flush_range(self.base, ROOT_OFFSET, site("flush_header", hit[1]))

    def _init_metadata(self) -> None:
        hit = self._apply(KnobTag.NON_ATOMIC_INIT)
        variant = hit[1] if hit else 0
        self.heap.store(self.base, pack_header(self.level, self.top_base, self.bottom_base, self.seeds),
                        site("init_header", variant))
        self.heap.store(self.base + ROOT_OFFSET, pack_root(), site("init_root", variant))
        if hit is not None:
            return
        self._flush_header(site("init_flush"))
        self.heap.flush(self.base + ROOT_OFFSET, site("init_flush"))
        self.heap.fence(site("init_fence"))

    def _write_kv(self, bucket: int, slot: int, key: int, value: int, token: int, rehash: bool = False) -> None:
        """Slot write then token flip, each persisted with flush + fence"""
        prefix = "rehash" if rehash else "insert"

        lost_value = self._apply(KnobTag.MISSING_FENCE_TOKEN_VALUE)
        self.heap.store(slot_addr(bucket, slot), pack_slot(key, value),
                        site(f"{prefix}_slot", lost_value[1] if lost_value else 0))
        if lost_value is None:
            self.heap.flush(slot_line(bucket), site(f"{prefix}_slot_flush"))
            wide = None if rehash else self._apply(KnobTag.CLWB_ARBITRARY_RANGE)
            if wide is not None:
                knob, variant = wide
                self.heap.flush_range(slot_line(bucket), knob.span * LINE_SIZE, site("clwb_range", variant))
            self.heap.fence(site(f"{prefix}_slot_fence"))

        lost_token = None if rehash else self._apply(KnobTag.MISSING_FLUSH_TOKEN)
        self.heap.store(token_addr(bucket), bytes([token | 1 << slot]),
                        site(f"{prefix}_token", lost_token[1] if lost_token else 0))
        if lost_token is None:
            self.heap.flush(token_addr(bucket), site(f"{prefix}_token_flush"))
            self.heap.fence(site(f"{prefix}_token_fence"))

        if lost_value is not None:
            knob = lost_value[0]
            if rehash:
                self._marker_due = knob
            elif knob.take_marker():
                self.heap.crash_marker()

    def _extra_fences(self) -> None:
        hit = self._apply(KnobTag.EXTRA_FENCE_LOOP)
        if hit is None:
            return
        knob, variant = hit
        for _ in range(knob.repeat):
            self.heap.fence(site("extra_fence", variant))

    # operations

    @staticmethod
    def _check_kv(key: int, value: int) -> None:
        if not 0 < key <= MASK64:
            raise InvalidKeyError(f"key must be in [1, 2^64), got {key}")
        if not 0 <= value <= MASK64:
            raise InvalidKeyError(f"value must be in [0, 2^64), got {value}")

    def _locate(self, key: int) -> Optional[Tuple[int, int, int, int]]:
        """(bucket, slot, token, value) holding key, or None"""
        for level_kind, index in candidates(key, self.level, self.seeds):
            bucket = bucket_addr(self._level_base(level_kind), index)
            token, slots = self._read_bucket(bucket)
            for slot, (stored, value) in enumerate(slots):
                if token >> slot & 1 and stored == key:
                    return bucket, slot, token, value
        return None

    def lookup(self, key: int) -> Optional[int]:
        """Value stored under key, or None"""
        found = self._locate(key)
        return None if found is None else found[3]

    def insert(self, key: int, value: int) -> None:
        """
        Store a new key

        Raises:
            DuplicateKeyError: key already present
            TableFullError: no slot even after one resize
            InvalidKeyError: key/value out of range
        """
        self._check_kv(key, value)
        if key in self._key_set:
            raise DuplicateKeyError(f"key {key} is already stored")

        if not self._try_insert(key, value):
            logger.debug(f"Candidate buckets of {key} are full, resizing")
            self.resize()
            if not self._try_insert(key, value):
                raise TableFullError(f"no free slot for key {key} after resizing to level {self.level}")

        self.keys.append(key)
        self._key_set.add(key)
        self._extra_fences()

    def _try_insert(self, key: int, value: int) -> bool:
        probes = candidates(key, self.level, self.seeds)
        for level_kind, index in probes:
            bucket = bucket_addr(self._level_base(level_kind), index)
            token, _ = self._read_bucket(bucket)
            slot = _free_slot(token)
            if slot is not None:
                self._write_kv(bucket, slot, key, value, token)
                return True

        if not self.movement:
            return False
        for level_kind, index in probes:
            freed = self.one_step_movement(level_kind, index)
            if freed is not None:
                bucket = bucket_addr(self._level_base(level_kind), index)
                token, _ = self._read_bucket(bucket)
                self._write_kv(bucket, freed, key, value, token)
                return True
        return False

    def delete(self, key: int) -> bool:
        """Clear key's token; False (and no events) when key is absent"""
        found = self._locate(key)
        if found is None:
            return False
        bucket, slot, token, _ = found
        self.heap.store(token_addr(bucket), bytes([token & ~(1 << slot)]), site("delete_token"))
        self.heap.flush(token_addr(bucket), site("delete_token_flush"))
        self.heap.fence(site("delete_token_fence"))

        self.keys.remove(key)
        self._key_set.discard(key)
        self._extra_fences()
        return True

    def one_step_movement(self, level_kind: Level, index: int) -> Optional[int]:
        """
        Free a slot in a full bucket by moving one occupant to its alternate bucket

        Occupants are tried from slot 0 to slot 3; the first whose alternate
        bucket on the same level has a free slot is moved.

        Returns:
            The freed slot, or None when no occupant can move
        """
        return self._movement(self._level_base(level_kind), level_kind, index, self.level)

    def _movement(self, level_base: int, level_kind: Level, index: int, level: int) -> Optional[int]:
        source = bucket_addr(level_base, index)
        token, slots = self._read_bucket(source)
        for slot, (key, value) in enumerate(slots):
            if not token >> slot & 1:
                continue
            other = alternate(key, level_kind, index, level, self.seeds)
            if other is None:
                continue
            dest = bucket_addr(level_base, other)
            dest_token, _ = self._read_bucket(dest)
            free = _free_slot(dest_token)
            if free is None:
                continue
            self._move(source, slot, token, dest, free, dest_token, key, value)
            return slot
        return None

    def _move(self, source: int, slot: int, token: int, dest: int, free: int, dest_token: int,
              key: int, value: int) -> None:
        heap = self.heap
        heap.store(slot_addr(dest, free), pack_slot(key, value), site("move_copy"))
        heap.flush(slot_line(dest), site("move_copy_flush"))
        heap.fence(site("move_copy_fence"))

        heap.store(token_addr(dest), bytes([dest_token | 1 << free]), site("move_dest_token"))
        heap.flush(token_addr(dest), site("move_dest_token_flush"))
        heap.fence(site("move_dest_token_fence"))

        hit = self._apply(KnobTag.DUPLICATE_ON_MOVE)
        if hit is None:
            heap.store(token_addr(source), bytes([token & ~(1 << slot)]), site("move_src_token"))
            heap.flush(token_addr(source), site("move_src_token_flush"))
            heap.fence(site("move_src_token_fence"))
        else:
            knob, variant = hit
            heap.flush(token_addr(source), site("move_src_token_flush", variant))
            heap.fence(site("move_src_token_fence", variant))
            if knob.take_marker():
                heap.crash_marker()
        self.move_count += 1
        logger.debug(f"Moved key {key} from {source:#x}[{slot}] to {dest:#x}[{free}]")

    def resize(self) -> None:
        """
        Grow by one level

        A new top level of twice the buckets is allocated, the bottom level's
        items are rehashed into it, and a single header write switches the
        layout: the old top level becomes the bottom level untouched.
        """
        new_level = self.level + 1
        if new_level > MAX_LEVEL:
            raise TableFullError(f"table cannot grow beyond level {MAX_LEVEL}")
        new_top = self.heap.allocate(top_count(new_level) * BUCKET_SIZE)

        rehashed = 0
        for index in range(bottom_count(self.level)):
            token, slots = self._read_bucket(bucket_addr(self.bottom_base, index))
            for slot, (key, value) in enumerate(slots):
                if token >> slot & 1:
                    self._rehash(new_top, new_level, key, value)
                    rehashed += 1

        self.heap.store(self.base, pack_header(new_level, new_top, self.top_base, self.seeds),
                        site("resize_header"))
        self._flush_header(site("resize_header_flush"))
        if self._marker_due is not None and self._marker_due.take_marker():
            self.heap.crash_marker()
        self._marker_due = None
        self.heap.fence(site("resize_header_fence"))

        self.bottom_base, self.top_base = self.top_base, new_top
        self.level = new_level
        self.resize_count += 1
        self.last_rehashed = rehashed
        logger.info(f"📊 Resized to level {new_level}: {rehashed} items rehashed")

    def _rehash(self, new_top: int, new_level: int, key: int, value: int) -> None:
        targets = list(dict.fromkeys(top_index(key, seed, new_level) for seed in self.seeds))
        for index in targets:
            bucket = bucket_addr(new_top, index)
            token, _ = self._read_bucket(bucket)
            slot = _free_slot(token)
            if slot is not None:
                self._write_kv(bucket, slot, key, value, token, rehash=True)
                return
        if self.movement:
            for index in targets:
                freed = self._movement(new_top, Level.TOP, index, new_level)
                if freed is not None:
                    bucket = bucket_addr(new_top, index)
                    token, _ = self._read_bucket(bucket)
                    self._write_kv(bucket, freed, key, value, token, rehash=True)
                    return
        raise TableFullError(f"no room for key {key} in the new top level")

    # inspection

    def items(self, level_kind: Level) -> List[Tuple[int, int, int, int]]:
        """(bucket index, slot, key, value) of every occupied slot on a level"""
        count = top_count(self.level) if level_kind == Level.TOP else bottom_count(self.level)
        found = []
        for index in range(count):
            token, slots = self._read_bucket(bucket_addr(self._level_base(level_kind), index))
            for slot, (key, value) in enumerate(slots):
                if token >> slot & 1:
                    found.append((index, slot, key, value))
        return found

    def bucket_load(self, level_kind: Level, index: int) -> int:
        token, _ = self._read_bucket(bucket_addr(self._level_base(level_kind), index))
        return bin(token & 0xF).count("1")

    def fork(self) -> "LevelHashTable":
        """Independent copy on a forked heap (same knobs, same progress)"""
        clone = copy.copy(self)
        clone.heap = self.heap.fork()
        clone.knobs = [replace(knob) for knob in self.knobs]
        clone.keys = list(self.keys)
        clone._key_set = set(self._key_set)
        return clone


# workloads

OP_MIX = (0.6, 0.3, 0.1)
KEY_LIMIT = 2 ** 62


@dataclass
class OpRecord:
    op: str
    key: int
    value: Optional[int] = None
    result: Optional[object] = None


@dataclass
class Workload:
    events: List[TraceEvent]
    regions: RegionTable
    journal: List[OpRecord] = field(default_factory=list)
    table: Optional[LevelHashTable] = None


def random_op(table: LevelHashTable, rng: np.random.Generator) -> OpRecord:
    """One insert/lookup/delete drawn with the 60/30/10 mix"""
    roll = rng.random()
    if roll < OP_MIX[0]:
        key = int(rng.integers(1, KEY_LIMIT))
        while key in table:
            key = int(rng.integers(1, KEY_LIMIT))
        value = int(rng.integers(0, KEY_LIMIT))
        table.insert(key, value)
        return OpRecord("insert", key, value)

    if roll < OP_MIX[0] + OP_MIX[1]:
        if table.keys and rng.random() < 0.8:
            key = table.keys[int(rng.integers(len(table.keys)))]
        else:
            key = int(rng.integers(1, KEY_LIMIT))
        return OpRecord("lookup", key, result=table.lookup(key))

    if table.keys:
        key = table.keys[int(rng.integers(len(table.keys)))]
    else:
        key = int(rng.integers(1, KEY_LIMIT))
    return OpRecord("delete", key, result=table.delete(key))


def generate_workload(
    op_count: int,
    seed: int,
    knob: Optional[BugKnob] = None,
    level_exponent: int = 3,
    movement: bool = True,
) -> Workload:
    """
    Deterministic single-threaded workload

    Args:
        op_count: number of operations (>= 1)
        seed: PRNG seed
        knob: bug knob applied throughout (None for the bug-free protocol)
        level_exponent: initial top-level exponent
        movement: allow one-step movement

    Returns:
        Workload holding the emitted trace, region table and op journal
    """
    if op_count < 1:
        raise ValueError(f"op count must be >= 1, got {op_count}")

    rng = np.random.default_rng(seed)
    heap = PMHeap()
    knobs = [knob] if knob is not None and knob.tag != KnobTag.NONE else []
    table = LevelHashTable(heap, level_exponent, knobs, movement)

    journal = [random_op(table, rng) for _ in range(op_count)]
    counts: Dict[str, int] = {}
    for record in journal:
        counts[record.op] = counts.get(record.op, 0) + 1
    logger.info(f"✅ Workload generated: {op_count} ops {counts}, {len(heap.events)} events, "
                f"{table.resize_count} resizes")
    return Workload(events=heap.events, regions=heap.regions, journal=journal, table=table)


SEEDED_LEVEL = 8
SEEDED_KEYS = 60


def seeded_bug_fixture() -> Workload:
    """
    Trace seeding 60 unpersisted token writes, 2 whole-header flushes and
    3 extra fences, each at its own site

    The header is flushed whole at init and again at an explicit resize; the
    first three inserts are each followed by an empty fence.
    """
    heap = PMHeap()
    knobs = [
        BugKnob(KnobTag.FLUSH_WHOLE_HEADER, count=2, distinct_sites=True),
        BugKnob(KnobTag.MISSING_FLUSH_TOKEN, count=SEEDED_KEYS, distinct_sites=True),
        BugKnob(KnobTag.EXTRA_FENCE_LOOP, count=3, distinct_sites=True),
    ]
    table = LevelHashTable(heap, SEEDED_LEVEL, knobs)
    table.resize()
    journal = []
    for i in range(SEEDED_KEYS):
        key, value = i + 1, (i + 1) * 1000
        table.insert(key, value)
        journal.append(OpRecord("insert", key, value))
    return Workload(events=heap.events, regions=heap.regions, journal=journal, table=table)
