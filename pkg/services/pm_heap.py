"""
Simulated Persistent Memory Heap
A byte-addressable PM pool that records every store, flush and fence as a
trace event instead of executing it on hardware
"""

import copy
import logging
from typing import Dict, List

from pmem.trace_model import (
    LINE_SIZE,
    EventKind,
    FlushKind,
    RegionTable,
    TraceEvent,
    check_store_geometry,
    line_of,
)

logger = logging.getLogger(__name__)

HEAP_BASE = 0x10000


class PMHeap:
    """
    Trace-emitting persistent heap

    Reads see the program's view (every store applied). Allocation is a
    line-aligned bump allocator; each allocation declares its own region
    before anything touches it.
    """

    def __init__(self, base: int = HEAP_BASE, tid: int = 0):
        """
        Initialize an empty heap

        Args:
            base: first address handed out (line aligned)
            tid: thread ordinal stamped on every event
        """
        if base % LINE_SIZE:
            raise ValueError(f"heap base {base:#x} is not line aligned")
        self.base = base
        self.tid = tid
        self.next_free = base
        self.next_index = 0
        self.events: List[TraceEvent] = []
        self.regions = RegionTable()
        self._memory: Dict[int, bytearray] = {}

    def _emit(self, **fields) -> TraceEvent:
        event = TraceEvent(index=self.next_index, tid=self.tid, **fields)
        self.next_index += 1
        self.events.append(event)
        return event

    def allocate(self, size: int, persistent: bool = True, site: str = "") -> int:
        """Reserve a zero-filled, line-aligned range and declare it as a region"""
        size = -(-size // LINE_SIZE) * LINE_SIZE
        addr = self.next_free
        self.next_free += size
        self.regions.add_region(addr, size, persistent)
        self._emit(kind=EventKind.REGION, addr=addr, size=size, persistent=persistent, site=site)
        logger.debug(f"Allocated {size} bytes at {addr:#x}")
        return addr

    def volatile_hint(self, addr: int, size: int, site: str = "") -> None:
        self.regions.add_volatile_hint(addr, size)
        self._emit(kind=EventKind.VOLATILE_HINT, addr=addr, size=size, site=site)

    def store(self, addr: int, data: bytes, site: str) -> None:
        """Write bytes (no cache-line crossing for stores of 8 bytes or less)"""
        check_store_geometry(addr, len(data))
        offset = 0
        while offset < len(data):
            start = addr + offset
            length = min(len(data) - offset, line_of(start) + LINE_SIZE - start)
            line = self._memory.setdefault(line_of(start), bytearray(LINE_SIZE))
            line[start - line_of(start):start - line_of(start) + length] = data[offset:offset + length]
            self._emit(kind=EventKind.STORE, addr=start, size=length,
                       value=bytes(data[offset:offset + length]), site=site)
            offset += length

    def flush(self, addr: int, site: str, flush_kind: FlushKind = FlushKind.CLWB) -> None:
        self._emit(kind=EventKind.FLUSH, addr=line_of(addr), flush_kind=flush_kind, site=site)

    def flush_range(self, addr: int, size: int, site: str, flush_kind: FlushKind = FlushKind.CLWB) -> None:
        """One flush per line overlapping [addr, addr + size)"""
        for line in range(line_of(addr), addr + size, LINE_SIZE):
            self.flush(line, site, flush_kind)

    def fence(self, site: str) -> None:
        self._emit(kind=EventKind.FENCE, site=site)

    def crash_marker(self, site: str = "") -> None:
        self._emit(kind=EventKind.CRASH, site=site)

    def read(self, addr: int, size: int) -> bytes:
        """Program view of [addr, addr + size)"""
        out = bytearray()
        while len(out) < size:
            start = addr + len(out)
            line = self._memory.get(line_of(start))
            length = min(size - len(out), line_of(start) + LINE_SIZE - start)
            if line is None:
                out.extend(bytes(length))
            else:
                out.extend(line[start - line_of(start):start - line_of(start) + length])
        return bytes(out)

    def drain_events(self) -> List[TraceEvent]:
        """Hand over the events recorded so far and start a fresh segment"""
        drained, self.events = self.events, []
        return drained

    def fork(self) -> "PMHeap":
        """Independent copy continuing the same event numbering, with no recorded events"""
        clone = copy.copy(self)
        clone.events = []
        clone.regions = RegionTable(list(self.regions.ranges), list(self.regions.volatile_hints))
        clone._memory = {base: bytearray(line) for base, line in self._memory.items()}
        return clone

    @property
    def event_count(self) -> int:
        return self.next_index
