"""
Trace Model
Event vocabulary, persistent-region table and the JSON-lines trace format

A trace is UTF-8 text with one JSON object per line. Each object describes
one PM-relevant program action: a store, a cache-line flush, a fence, a
region declaration, a volatile-intent hint or a crash-point marker.
"""

import bisect
import io
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Dict, Iterable, List, Optional, Tuple, Union

from pmem.errors import TraceParseError, TraceValidationError

logger = logging.getLogger(__name__)

LINE_SIZE = 64
SMALL_STORE_SIZES = (1, 2, 4, 8)


class EventKind(str, Enum):
    STORE = "store"
    FLUSH = "flush"
    FENCE = "fence"
    REGION = "region"
    VOLATILE_HINT = "volatile_hint"
    CRASH = "crash"


class FlushKind(str, Enum):
    CLWB = "clwb"
    CLFLUSHOPT = "clflushopt"
    CLFLUSH = "clflush"


# kind -> (required keys, optional keys)
_RECORD_KEYS: Dict[EventKind, Tuple[frozenset, frozenset]] = {
    EventKind.STORE: (frozenset({"kind", "addr", "size", "value", "site"}), frozenset({"tid"})),
    EventKind.FLUSH: (frozenset({"kind", "addr", "flush_kind", "site"}), frozenset({"tid"})),
    EventKind.FENCE: (frozenset({"kind", "site"}), frozenset({"tid"})),
    EventKind.REGION: (frozenset({"kind", "addr", "size", "persistent"}), frozenset({"site", "tid"})),
    EventKind.VOLATILE_HINT: (frozenset({"kind", "addr", "size"}), frozenset({"site", "tid"})),
    EventKind.CRASH: (frozenset({"kind"}), frozenset({"site", "tid"})),
}


def line_of(addr: int) -> int:
    """Base address of the 64-byte cache line holding addr"""
    return addr - (addr % LINE_SIZE)


@dataclass(frozen=True)
class TraceEvent:
    """One PM-relevant program action"""

    index: int
    kind: EventKind
    addr: Optional[int] = None
    size: Optional[int] = None
    value: Optional[bytes] = None
    flush_kind: Optional[FlushKind] = None
    site: str = ""
    tid: int = 0
    persistent: Optional[bool] = None

    @property
    def line(self) -> Optional[int]:
        return None if self.addr is None else line_of(self.addr)

    def to_record(self) -> Dict[str, object]:
        """Canonical JSON record (keys in a fixed order, defaults omitted)"""
        record: Dict[str, object] = {"kind": self.kind.value}
        if self.kind in (EventKind.STORE, EventKind.FLUSH, EventKind.REGION, EventKind.VOLATILE_HINT):
            record["addr"] = self.addr
        if self.kind in (EventKind.STORE, EventKind.REGION, EventKind.VOLATILE_HINT):
            record["size"] = self.size
        if self.kind == EventKind.STORE:
            record["value"] = self.value.hex()
        if self.kind == EventKind.FLUSH:
            record["flush_kind"] = self.flush_kind.value
        if self.kind == EventKind.REGION:
            record["persistent"] = self.persistent
        if self.site or self.kind in (EventKind.STORE, EventKind.FLUSH, EventKind.FENCE):
            record["site"] = self.site
        if self.tid:
            record["tid"] = self.tid
        return record


@dataclass
class RegionTable:
    """
    Declared address ranges of a trace

    ranges holds (base, size, persistent) sorted by base; volatile_hints holds
    (addr, size) ranges the program declared intentionally volatile.
    """

    ranges: List[Tuple[int, int, bool]] = field(default_factory=list)
    volatile_hints: List[Tuple[int, int]] = field(default_factory=list)

    def add_region(self, base: int, size: int, persistent: bool) -> None:
        """Insert a range, rejecting any overlap with a declared one"""
        pos = bisect.bisect_left(self.ranges, (base,))
        neighbours = self.ranges[max(0, pos - 1):pos + 1]
        for other_base, other_size, _ in neighbours:
            if base < other_base + other_size and other_base < base + size:
                raise TraceValidationError(
                    f"region [{base:#x}, {base + size:#x}) overlaps "
                    f"[{other_base:#x}, {other_base + other_size:#x})"
                )
        self.ranges.insert(pos, (base, size, persistent))

    def add_volatile_hint(self, addr: int, size: int) -> None:
        self.volatile_hints.append((addr, size))

    def lookup(self, addr: int) -> Optional[Tuple[int, int, bool]]:
        """The range containing addr, or None"""
        pos = bisect.bisect_right(self.ranges, (addr, float("inf"), True)) - 1
        if pos < 0:
            return None
        base, size, persistent = self.ranges[pos]
        return self.ranges[pos] if base <= addr < base + size else None

    def is_persistent(self, addr: int) -> bool:
        found = self.lookup(addr)
        return bool(found and found[2])

    def intersects_volatile(self, addr: int, size: int) -> bool:
        return any(addr < h_addr + h_size and h_addr < addr + size for h_addr, h_size in self.volatile_hints)

    def admits(self, event: TraceEvent) -> bool:
        """
        Whether an event takes part in persistence analysis

        Stores and flushes count only inside a persistent region; fences and
        crash markers always count; declarations never do.
        """
        if event.kind in (EventKind.STORE, EventKind.FLUSH):
            return self.is_persistent(event.addr)
        return event.kind in (EventKind.FENCE, EventKind.CRASH)


def _split_store(addr: int, size: int, value: bytes) -> List[Tuple[int, bytes]]:
    pieces = []
    offset = 0
    while offset < size:
        start = addr + offset
        length = min(size - offset, line_of(start) + LINE_SIZE - start)
        pieces.append((start, value[offset:offset + length]))
        offset += length
    return pieces


def check_store_geometry(addr: int, size: int) -> None:
    """Raise TraceValidationError when a store's size/alignment is unsupported"""
    if size <= 0:
        raise TraceValidationError(f"store size must be positive, got {size}")
    if size <= 8:
        if size not in SMALL_STORE_SIZES:
            raise TraceValidationError(f"store size {size} is not one of {SMALL_STORE_SIZES}")
        if line_of(addr) != line_of(addr + size - 1):
            raise TraceValidationError(f"{size}-byte store at {addr:#x} straddles a cache line")
    elif size % 8 or addr % 8:
        raise TraceValidationError(
            f"{size}-byte store at {addr:#x} must be 8-byte aligned with a size multiple of 8"
        )


def _require_int(record: dict, key: str, line_no: int, minimum: int = 0) -> int:
    value = record[key]
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise TraceParseError(line_no, f"'{key}' must be an integer >= {minimum}, got {value!r}")
    return value


def _require_str(record: dict, key: str, line_no: int) -> str:
    value = record.get(key, "")
    if not isinstance(value, str):
        raise TraceParseError(line_no, f"'{key}' must be a string, got {value!r}")
    return value


def _parse_record(record: object, line_no: int) -> Tuple[EventKind, dict]:
    if not isinstance(record, dict):
        raise TraceParseError(line_no, "record is not a JSON object")
    raw_kind = record.get("kind")
    try:
        kind = EventKind(raw_kind)
    except ValueError:
        raise TraceParseError(line_no, f"unknown kind {raw_kind!r}") from None

    required, optional = _RECORD_KEYS[kind]
    missing = required - record.keys()
    if missing:
        raise TraceParseError(line_no, f"{kind.value} record missing {sorted(missing)}")
    unknown = record.keys() - required - optional
    if unknown:
        raise TraceParseError(line_no, f"{kind.value} record has unknown keys {sorted(unknown)}")

    fields: Dict[str, object] = {
        "site": _require_str(record, "site", line_no),
        "tid": _require_int(record, "tid", line_no) if "tid" in record else 0,
    }
    if kind in (EventKind.STORE, EventKind.FLUSH, EventKind.REGION, EventKind.VOLATILE_HINT):
        fields["addr"] = _require_int(record, "addr", line_no)
    if kind in (EventKind.STORE, EventKind.REGION, EventKind.VOLATILE_HINT):
        fields["size"] = _require_int(record, "size", line_no, minimum=1)
    if kind == EventKind.STORE:
        raw_value = record["value"]
        if not isinstance(raw_value, str) or len(raw_value) != 2 * fields["size"]:
            raise TraceParseError(line_no, f"'value' must be {2 * fields['size']} hex characters")
        try:
            fields["value"] = bytes.fromhex(raw_value)
        except ValueError:
            raise TraceParseError(line_no, f"'value' is not hex: {raw_value!r}") from None
    if kind == EventKind.FLUSH:
        try:
            fields["flush_kind"] = FlushKind(record["flush_kind"])
        except ValueError:
            raise TraceParseError(line_no, f"unknown flush_kind {record['flush_kind']!r}") from None
    if kind == EventKind.REGION:
        if not isinstance(record["persistent"], bool):
            raise TraceParseError(line_no, "'persistent' must be a boolean")
        fields["persistent"] = record["persistent"]
    return kind, fields


def parse_trace(stream: Union[IO[str], Iterable[str], str]) -> Tuple[List[TraceEvent], RegionTable]:
    """
    Parse a JSON-lines trace

    Args:
        stream: text stream, iterable of lines, or the whole trace as a string

    Returns:
        (events with dense 0-based indices, region table)

    Raises:
        TraceParseError: malformed record (names the 1-based line number)
        TraceValidationError: overlapping regions, late region declaration,
            unsupported store geometry
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)

    events: List[TraceEvent] = []
    regions = RegionTable()
    touched: List[Tuple[int, int]] = []

    for line_no, raw in enumerate(stream, start=1):
        text = raw.strip()
        if not text:
            continue
        try:
            record = json.loads(text)
        except json.JSONDecodeError as e:
            raise TraceParseError(line_no, f"invalid JSON ({e.msg})") from None
        kind, fields = _parse_record(record, line_no)

        if kind == EventKind.STORE:
            try:
                check_store_geometry(fields["addr"], fields["size"])
            except TraceValidationError as e:
                raise TraceValidationError(str(e), line_no) from None
            for addr, chunk in _split_store(fields["addr"], fields["size"], fields["value"]):
                events.append(TraceEvent(
                    index=len(events), kind=kind, addr=addr, size=len(chunk), value=chunk,
                    site=fields["site"], tid=fields["tid"],
                ))
            touched.append((fields["addr"], fields["size"]))
            continue

        if kind == EventKind.FLUSH:
            touched.append((line_of(fields["addr"]), LINE_SIZE))
        elif kind == EventKind.REGION:
            base, size = fields["addr"], fields["size"]
            if any(addr < base + size and base < addr + length for addr, length in touched):
                raise TraceValidationError(
                    f"region [{base:#x}, {base + size:#x}) declared after accesses to its range", line_no
                )
            try:
                regions.add_region(base, size, fields["persistent"])
            except TraceValidationError as e:
                raise TraceValidationError(str(e), line_no) from None
        elif kind == EventKind.VOLATILE_HINT:
            regions.add_volatile_hint(fields["addr"], fields["size"])

        events.append(TraceEvent(index=len(events), kind=kind, **fields))

    logger.debug(f"Parsed {len(events)} events, {len(regions.ranges)} regions")
    return events, regions


def write_trace(
    events: Iterable[TraceEvent],
    regions: Optional[RegionTable] = None,
    stream: Optional[IO[str]] = None,
) -> str:
    """
    Serialize events in the JSON-lines format

    Args:
        events: events satisfying the TraceEvent invariants
        regions: when given, every range must be declared by a region event
        stream: optional destination; the text is also returned

    Returns:
        The serialized trace
    """
    events = list(events)
    if regions is not None:
        declared = {(e.addr, e.size, e.persistent) for e in events if e.kind == EventKind.REGION}
        undeclared = [r for r in regions.ranges if r not in declared]
        if undeclared:
            raise TraceValidationError(f"regions without a region event: {undeclared}")

    text = "".join(json.dumps(e.to_record(), separators=(",", ":")) + "\n" for e in events)
    if stream is not None:
        stream.write(text)
    return text


def load_trace(path: str) -> Tuple[List[TraceEvent], RegionTable]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_trace(f)


def save_trace(path: str, events: Iterable[TraceEvent], regions: Optional[RegionTable] = None) -> None:
    with open(path, "w", encoding="utf-8") as f:
        write_trace(events, regions, f)
