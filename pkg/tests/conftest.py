"""Shared builders for the test suite"""

import sys
from itertools import count
from pathlib import Path
from typing import List, Optional, Tuple

import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from pmem.trace_model import EventKind, FlushKind, RegionTable, TraceEvent  # noqa: E402
from services.levelhash_layout import SEED1, SEED2, Level, top_index  # noqa: E402
from services.levelhash_service import LevelHashTable  # noqa: E402
from services.pm_heap import PMHeap  # noqa: E402

FIXTURES = ROOT / "fixtures"
SCHEMAS = ROOT / "docs" / "schemas"

PM_BASE = 0x10000


class TraceBuilder:
    """Builds dense-indexed events the way parse_trace would"""

    def __init__(self):
        self.events: List[TraceEvent] = []
        self.regions = RegionTable()

    def _add(self, **fields) -> "TraceBuilder":
        self.events.append(TraceEvent(index=len(self.events), **fields))
        return self

    def region(self, addr: int = PM_BASE, size: int = 4096, persistent: bool = True) -> "TraceBuilder":
        self.regions.add_region(addr, size, persistent)
        return self._add(kind=EventKind.REGION, addr=addr, size=size, persistent=persistent)

    def hint(self, addr: int, size: int) -> "TraceBuilder":
        self.regions.add_volatile_hint(addr, size)
        return self._add(kind=EventKind.VOLATILE_HINT, addr=addr, size=size)

    def store(self, addr: int, value: bytes = b"\x01" * 8, site: Optional[str] = None) -> "TraceBuilder":
        return self._add(kind=EventKind.STORE, addr=addr, size=len(value), value=value,
                         site=site or f"store@{addr:#x}")

    def flush(self, addr: int, site: Optional[str] = None) -> "TraceBuilder":
        return self._add(kind=EventKind.FLUSH, addr=addr, flush_kind=FlushKind.CLWB,
                         site=site or f"flush@{addr:#x}")

    def fence(self, site: str = "fence") -> "TraceBuilder":
        return self._add(kind=EventKind.FENCE, site=site)

    def crash(self) -> "TraceBuilder":
        return self._add(kind=EventKind.CRASH)


@pytest.fixture
def trace() -> TraceBuilder:
    return TraceBuilder().region()


@pytest.fixture
def heap() -> PMHeap:
    return PMHeap()


@pytest.fixture
def small_table(heap) -> LevelHashTable:
    return LevelHashTable(heap, level_exponent=2)


def keys_with_top(level: int, first: int, second: int, n: int, start: int = 1) -> List[int]:
    """First n keys whose two top-level buckets are (first, second)"""
    found = []
    for key in count(start):
        if (top_index(key, SEED1, level), top_index(key, SEED2, level)) == (first, second):
            found.append(key)
            if len(found) == n:
                return found


def movement_scenario(table: LevelHashTable) -> Tuple[List[int], List[int], int]:
    """
    On a level-2 table: fill top[0] with keys that can move to top[1], fill
    bottom[0] with keys pinned to top[0], then insert one more pinned key
    """
    movable = keys_with_top(2, 0, 1, 4)
    pinned = keys_with_top(2, 0, 0, 5)
    for key in movable + pinned[:4]:
        table.insert(key, key * 10)
    assert table.bucket_load(Level.TOP, 0) == 4
    assert table.bucket_load(Level.BOTTOM, 0) == 4
    assert table.move_count == 0
    table.insert(pinned[4], 99)
    return movable, pinned[:4], pinned[4]
