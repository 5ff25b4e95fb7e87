"""
Persistence State Machine
Per-cache-line store/flush/fence semantics with the ADR persistence domain

Every 64-byte line moves between three states:

    CLEAN --store--> DIRTY --flush--> FLUSH_PENDING --fence--> CLEAN
                       ^                    |
                       +-------store--------+

A fence persists only FLUSH_PENDING lines (the write pending queue drains
into the ADR domain); DIRTY lines are never persisted by a fence.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, Iterable, List, Optional, Set, Tuple

from pmem.errors import ContractViolation
from pmem.trace_model import LINE_SIZE, EventKind, TraceEvent, line_of

logger = logging.getLogger(__name__)

ZERO_LINE = bytes(LINE_SIZE)


class LineStatus(str, Enum):
    CLEAN = "CLEAN"
    DIRTY = "DIRTY"
    FLUSH_PENDING = "FLUSH_PENDING"


class SignalKind(str, Enum):
    DUPLICATE_FLUSH = "DuplicateFlush"
    FLUSH_UNTOUCHED = "FlushUntouched"
    EMPTY_FENCE = "EmptyFence"


@dataclass(frozen=True)
class StoreRecord:
    """A store not yet covered by flush + fence"""

    event: int
    addr: int
    size: int
    site: str


@dataclass(frozen=True)
class OracleSignal:
    kind: SignalKind
    event_index: int
    site: str
    line_base: Optional[int] = None


@dataclass(frozen=True)
class LineState:
    """Persistence state of one cache line (immutable; transitions build a new value)"""

    line_base: int
    status: LineStatus = LineStatus.CLEAN
    dirty_mask: int = 0
    cache_content: bytes = ZERO_LINE
    persisted_content: bytes = ZERO_LINE
    last_mod_event: Optional[int] = None
    last_flush_event: Optional[int] = None
    last_persist_event: Optional[int] = None
    unpersisted_stores: Tuple[StoreRecord, ...] = ()

    @property
    def dirty_bytes(self) -> Tuple[bool, ...]:
        return tuple(bool(self.dirty_mask >> i & 1) for i in range(LINE_SIZE))


@dataclass
class MachineState:
    """
    Persistence state of every touched line

    pending_set models the write pending queue: exactly the lines whose
    status is FLUSH_PENDING.
    """

    lines: Dict[int, LineState] = field(default_factory=dict)
    pending_set: Set[int] = field(default_factory=set)
    fence_count: int = 0
    store_count: int = 0
    flush_count: int = 0
    last_index: int = -1

    def copy(self) -> "MachineState":
        # LineState values are immutable, so a shallow copy of the map is a full snapshot
        return MachineState(
            lines=dict(self.lines),
            pending_set=set(self.pending_set),
            fence_count=self.fence_count,
            store_count=self.store_count,
            flush_count=self.flush_count,
            last_index=self.last_index,
        )

    def line(self, line_base: int) -> LineState:
        return self.lines.get(line_base) or LineState(line_base=line_base)

    def step(self, event: TraceEvent) -> List[OracleSignal]:
        """Apply one event in place and return the oracle signals it raised"""
        if event.index <= self.last_index:
            raise ContractViolation(
                f"event index {event.index} does not follow {self.last_index}"
            )
        self.last_index = event.index

        if event.kind == EventKind.STORE:
            self._store(event)
            return []
        if event.kind == EventKind.FLUSH:
            return self._flush(event)
        if event.kind == EventKind.FENCE:
            return self._fence(event)
        return []

    def _store(self, event: TraceEvent) -> None:
        base = line_of(event.addr)
        if line_of(event.addr + event.size - 1) != base:
            raise ContractViolation(f"store at {event.addr:#x} crosses a line; split it first")
        current = self.line(base)
        offset = event.addr - base
        content = bytearray(current.cache_content)
        content[offset:offset + event.size] = event.value
        mask = ((1 << event.size) - 1) << offset

        self.lines[base] = replace(
            current,
            status=LineStatus.DIRTY,
            dirty_mask=current.dirty_mask | mask,
            cache_content=bytes(content),
            last_mod_event=event.index,
            unpersisted_stores=current.unpersisted_stores + (
                StoreRecord(event.index, event.addr, event.size, event.site),
            ),
        )
        # The earlier flush does not cover the new bytes
        self.pending_set.discard(base)
        self.store_count += 1

    def _flush(self, event: TraceEvent) -> List[OracleSignal]:
        base = line_of(event.addr)
        current = self.line(base)
        self.flush_count += 1

        if current.status == LineStatus.DIRTY:
            self.lines[base] = replace(current, status=LineStatus.FLUSH_PENDING, last_flush_event=event.index)
            self.pending_set.add(base)
            return []

        self.lines.setdefault(base, current)
        if current.status == LineStatus.FLUSH_PENDING:
            return [OracleSignal(SignalKind.DUPLICATE_FLUSH, event.index, event.site, base)]
        return [OracleSignal(SignalKind.FLUSH_UNTOUCHED, event.index, event.site, base)]

    def _fence(self, event: TraceEvent) -> List[OracleSignal]:
        self.fence_count += 1
        if not self.pending_set:
            return [OracleSignal(SignalKind.EMPTY_FENCE, event.index, event.site)]

        for base in self.pending_set:
            current = self.lines[base]
            self.lines[base] = replace(
                current,
                status=LineStatus.CLEAN,
                dirty_mask=0,
                persisted_content=current.cache_content,
                last_persist_event=event.index,
                unpersisted_stores=(),
            )
        self.pending_set.clear()
        return []

    def outstanding_lines(self, admit: Optional[Callable[[int], bool]] = None) -> List[LineState]:
        """Lines holding stores that are not yet durable (DIRTY or FLUSH_PENDING)"""
        return [
            line for base, line in sorted(self.lines.items())
            if line.status != LineStatus.CLEAN and (admit is None or admit(base))
        ]


def apply_event(state: MachineState, event: TraceEvent) -> Tuple[MachineState, List[OracleSignal]]:
    """
    Pure transition: the state after event, plus the signals raised

    The input state is left untouched.
    """
    following = state.copy()
    signals = following.step(event)
    return following, signals


def persisted_view(state: MachineState) -> Dict[int, bytes]:
    """Durable content of every touched line (pending and dirty bytes excluded)"""
    return {base: line.persisted_content for base, line in state.lines.items()}


def cache_view(state: MachineState) -> Dict[int, bytes]:
    """Program-visible content of every touched line (all stores applied)"""
    return {base: line.cache_content for base, line in state.lines.items()}


def replay(
    events: Iterable[TraceEvent],
    upto: Optional[int] = None,
    on_signal: Optional[Callable[[OracleSignal], None]] = None,
    state: Optional[MachineState] = None,
) -> MachineState:
    """
    Replay events in order (those with index < upto when given)

    Args:
        events: events to apply; callers filter non-persistent ones
        upto: crash point; events at or after it are not applied
        on_signal: called for every signal raised
        state: starting state (mutated); a fresh machine by default

    Returns:
        The machine state after the replay
    """
    state = state if state is not None else MachineState()
    for event in events:
        if upto is not None and event.index >= upto:
            break
        for signal in state.step(event):
            if on_signal is not None:
                on_signal(signal)
    return state
