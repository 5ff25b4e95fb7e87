"""Test trace parsing, serialization and the region table"""

import io
import json

import pytest

from pmem.errors import TraceParseError, TraceValidationError
from pmem.trace_model import (
    EventKind,
    FlushKind,
    RegionTable,
    TraceEvent,
    line_of,
    load_trace,
    parse_trace,
    save_trace,
    write_trace,
)
from services.levelhash_service import generate_workload


def _lines(*records):
    return "\n".join(json.dumps(r) for r in records) + "\n"


def test_single_store_record():
    events, regions = parse_trace(_lines(
        {"kind": "store", "addr": 64, "size": 8, "value": "00000000000000ff", "site": "a.c:1"}
    ))
    assert len(events) == 1
    store = events[0]
    assert store.index == 0
    assert store.kind == EventKind.STORE
    assert store.addr == 64 and store.size == 8
    assert store.value == bytes.fromhex("00000000000000ff")
    assert store.site == "a.c:1"
    assert store.tid == 0
    assert regions.ranges == []


def test_large_store_is_split_per_line():
    value = bytes(range(128))
    events, _ = parse_trace(_lines(
        {"kind": "store", "addr": 64, "size": 128, "value": value.hex(), "site": "big.c:3"}
    ))
    assert [(e.addr, e.size) for e in events] == [(64, 64), (128, 64)]
    assert all(e.site == "big.c:3" for e in events)
    assert b"".join(e.value for e in events) == value


def test_unaligned_large_store_splits_at_line_boundary():
    value = bytes(range(32))
    events, _ = parse_trace(_lines(
        {"kind": "store", "addr": 48, "size": 32, "value": value.hex(), "site": "s"}
    ))
    assert [(e.addr, e.size) for e in events] == [(48, 16), (64, 16)]
    assert b"".join(e.value for e in events) == value


def test_unknown_kind_names_line():
    text = _lines(
        {"kind": "fence", "site": "ok"},
        {"kind": "stroe", "addr": 0, "size": 8, "value": "00" * 8, "site": "x"},
    )
    with pytest.raises(TraceParseError) as exc:
        parse_trace(text)
    assert exc.value.line_no == 2
    assert "line 2" in str(exc.value)


@pytest.mark.parametrize("record, reason", [
    ({"kind": "store", "addr": 0, "size": 8, "value": "00", "site": "x"}, "hex characters"),
    ({"kind": "store", "addr": 0, "size": 8, "value": "zz" * 8, "site": "x"}, "not hex"),
    ({"kind": "flush", "addr": 0, "flush_kind": "wbinvd", "site": "x"}, "flush_kind"),
    ({"kind": "fence"}, "missing"),
    ({"kind": "fence", "site": "x", "color": "red"}, "unknown keys"),
    ({"kind": "region", "addr": -1, "size": 64, "persistent": True}, "'addr'"),
    ({"kind": "region", "addr": 0, "size": 64, "persistent": "yes"}, "persistent"),
])
def test_malformed_records(record, reason):
    with pytest.raises(TraceParseError) as exc:
        parse_trace(_lines(record))
    assert reason in str(exc.value)


def test_invalid_json_is_a_parse_error():
    with pytest.raises(TraceParseError):
        parse_trace('{"kind": "fence", "site": \n')


@pytest.mark.parametrize("addr, size", [(0, 3), (60, 8), (4, 16), (0, 12)])
def test_store_geometry_rejected(addr, size):
    with pytest.raises(TraceValidationError):
        parse_trace(_lines({"kind": "store", "addr": addr, "size": size, "value": "00" * size, "site": "x"}))


def test_overlapping_regions_rejected():
    text = _lines(
        {"kind": "region", "addr": 0, "size": 128, "persistent": True},
        {"kind": "region", "addr": 64, "size": 128, "persistent": False},
    )
    with pytest.raises(TraceValidationError) as exc:
        parse_trace(text)
    assert exc.value.line_no == 2


def test_region_after_access_rejected():
    text = _lines(
        {"kind": "store", "addr": 64, "size": 8, "value": "00" * 8, "site": "x"},
        {"kind": "region", "addr": 0, "size": 128, "persistent": True},
    )
    with pytest.raises(TraceValidationError):
        parse_trace(text)


def test_store_outside_regions_is_accepted():
    events, regions = parse_trace(_lines(
        {"kind": "region", "addr": 0, "size": 64, "persistent": True},
        {"kind": "store", "addr": 4096, "size": 8, "value": "00" * 8, "site": "x"},
    ))
    assert len(events) == 2
    assert not regions.is_persistent(4096)
    assert not regions.admits(events[1])


def test_blank_lines_skipped_and_indices_dense():
    text = '{"kind":"fence","site":"a"}\n\n   \n{"kind":"crash"}\n{"kind":"fence","site":"b"}\n'
    events, _ = parse_trace(text)
    assert [e.index for e in events] == [0, 1, 2]
    assert [e.kind for e in events] == [EventKind.FENCE, EventKind.CRASH, EventKind.FENCE]


def test_region_table_lookup():
    table = RegionTable()
    table.add_region(0x2000, 0x1000, True)
    table.add_region(0x0, 0x1000, False)
    assert table.lookup(0x2000) == (0x2000, 0x1000, True)
    assert table.lookup(0x2FFF) == (0x2000, 0x1000, True)
    assert table.lookup(0x3000) is None
    assert table.lookup(0x1800) is None
    assert table.is_persistent(0x2010)
    assert not table.is_persistent(0x10)
    table.add_volatile_hint(0x2100, 8)
    assert table.intersects_volatile(0x2104, 8)
    assert not table.intersects_volatile(0x2108, 8)


def test_line_of():
    assert line_of(0) == 0
    assert line_of(63) == 0
    assert line_of(64) == 64
    assert line_of(0x1007F) == 0x10040


def test_write_empty_and_single_fence():
    assert write_trace([]) == ""
    text = write_trace([TraceEvent(index=0, kind=EventKind.FENCE, site="f.c:1")])
    assert text.count("\n") == 1
    assert json.loads(text) == {"kind": "fence", "site": "f.c:1"}


def test_write_omits_defaults_and_keeps_tid():
    events = [
        TraceEvent(index=0, kind=EventKind.REGION, addr=0, size=64, persistent=True),
        TraceEvent(index=1, kind=EventKind.FLUSH, addr=0, flush_kind=FlushKind.CLFLUSHOPT, site="f", tid=3),
        TraceEvent(index=2, kind=EventKind.CRASH),
    ]
    records = [json.loads(line) for line in write_trace(events).splitlines()]
    assert records[0] == {"kind": "region", "addr": 0, "size": 64, "persistent": True}
    assert records[1] == {"kind": "flush", "addr": 0, "flush_kind": "clflushopt", "site": "f", "tid": 3}
    assert records[2] == {"kind": "crash"}


def test_write_rejects_undeclared_region():
    regions = RegionTable()
    regions.add_region(0, 64, True)
    with pytest.raises(TraceValidationError):
        write_trace([TraceEvent(index=0, kind=EventKind.FENCE, site="f")], regions)


def test_write_to_stream():
    out = io.StringIO()
    text = write_trace([TraceEvent(index=0, kind=EventKind.FENCE, site="f")], stream=out)
    assert out.getvalue() == text


def test_generated_trace_survives_round_trip():
    workload = generate_workload(1000, seed=3)
    text = write_trace(workload.events, workload.regions)
    events, regions = parse_trace(text)
    assert events == workload.events
    assert regions.ranges == workload.regions.ranges
    assert write_trace(events, regions) == text


def test_save_and_load(tmp_path):
    workload = generate_workload(50, seed=1)
    path = tmp_path / "w.trace"
    save_trace(str(path), workload.events, workload.regions)
    events, regions = load_trace(str(path))
    assert events == workload.events
    assert regions.ranges == workload.regions.ranges
