"""Test crash image enumeration and recovery checking"""

from itertools import combinations

import numpy as np
import pytest

from pmem.crash_enum import (
    CONSISTENT,
    Verdict,
    always_consistent,
    always_consistent_factory,
    check_images,
    crash_points,
    enumerate_crash_images,
    fence_crash_points,
    iter_snapshots,
    sweep_crash_points,
)
from pmem.errors import ContractViolation, CrashEnumerationLimit
from pmem.pm_state import ZERO_LINE, MachineState, persisted_view
from tests.conftest import PM_BASE, TraceBuilder

A = PM_BASE
B = PM_BASE + 64


def _line(addr: int) -> int:
    return addr - addr % 64


def test_crash_after_fence_has_one_image(trace):
    trace.store(A).flush(A).fence()
    images = enumerate_crash_images(trace.events, len(trace.events), trace.regions)
    assert len(images) == 1
    assert images[0].included_pending == ()


def test_three_pending_lines_give_eight_images(trace):
    for i in range(3):
        trace.store(A + 64 * i).flush(A + 64 * i)
    images = enumerate_crash_images(trace.events, len(trace.events), trace.regions)
    assert len(images) == 8
    assert [img.included_pending for img in images[:4]] == [(), (A,), (A + 64,), (A, A + 64)]


def test_fenced_line_in_every_image(trace):
    trace.store(A, b"\xaa" * 8).flush(A).fence().store(B, b"\xbb" * 8).flush(B)
    images = enumerate_crash_images(trace.events, len(trace.events), trace.regions)
    assert len(images) == 2
    assert all(img.image[A][:8] == b"\xaa" * 8 for img in images)
    with_b = [img for img in images if img.image[B][:8] == b"\xbb" * 8]
    assert len(with_b) == 1
    assert with_b[0].included_pending == (B,)


def test_crash_event_excludes_itself(trace):
    trace.store(A).flush(A).crash().fence()
    point = crash_points(trace.events)[0]
    assert point == 3
    assert len(enumerate_crash_images(trace.events, point, trace.regions)) == 2


def test_regions_rebuilt_when_omitted(trace):
    trace.store(A).flush(A)
    assert len(enumerate_crash_images(trace.events, len(trace.events))) == 2


def test_cap_refuses_large_pending_sets(trace):
    for i in range(5):
        trace.store(A + 64 * i).flush(A + 64 * i)
    with pytest.raises(CrashEnumerationLimit) as exc:
        enumerate_crash_images(trace.events, len(trace.events), trace.regions, cap=4)
    assert exc.value.pending == 5
    assert "5" in str(exc.value)


def test_crash_point_beyond_trace(trace):
    with pytest.raises(ContractViolation):
        enumerate_crash_images(trace.events, len(trace.events) + 1, trace.regions)


def test_fence_crash_points(trace):
    trace.store(A).flush(A).fence().fence()
    assert fence_crash_points(trace.events) == [3, 4]


def test_snapshots_match_per_point_replay(trace):
    trace.store(A).flush(A).store(B).fence().flush(B).fence()
    points = [6, 0, 3, 4]
    snapshots = list(iter_snapshots(trace.events, points, trace.regions))
    assert [p for p, _ in snapshots] == [0, 3, 4, 6]
    for point, state in snapshots:
        single = MachineState()
        for event in trace.events[:point]:
            if trace.regions.admits(event):
                single.step(event)
        assert state.lines == single.lines
        assert state.pending_set == single.pending_set


def test_check_images_summary(trace):
    trace.store(A).flush(A).store(B).flush(B)
    images = enumerate_crash_images(trace.events, len(trace.events), trace.regions)

    def reject_b(image):
        return Verdict.violation("LostB") if B not in image.included_pending else Verdict.ok()

    result = check_images(images, reject_b)
    assert len(result.results) == 4
    assert result.summary == {CONSISTENT: 2, "LostB": 2}
    assert result.violations == 2
    assert check_images(images, always_consistent, workers=4).summary == {CONSISTENT: 4}


def test_verdict_kinds():
    verdict = Verdict.violation("GarbageSlot", "LostKV", detail="two rules")
    assert verdict.kind == "GarbageSlot"
    assert not verdict.consistent
    assert verdict.to_dict() == {"kind": "GarbageSlot", "kinds": ["GarbageSlot", "LostKV"], "detail": "two rules"}
    assert Verdict.ok().to_dict() == {"kind": CONSISTENT}
    with pytest.raises(ValueError):
        Verdict.violation()


def test_sweep_visits_each_point(trace):
    trace.store(A).flush(A).fence().store(B).flush(B).fence()
    sweep = sweep_crash_points(trace.events, fence_crash_points(trace.events), always_consistent_factory,
                               trace.regions)
    assert [(point, len(result.results)) for point, result in sweep] == [(3, 2), (6, 2)]


def _random_trace(rng: np.random.Generator, k: int) -> TraceBuilder:
    builder = TraceBuilder().region(PM_BASE, 64 * 32)
    for _ in range(int(rng.integers(20, 80))):
        roll = rng.random()
        addr = PM_BASE + 64 * int(rng.integers(32)) + 8 * int(rng.integers(8))
        if roll < 0.5:
            builder.store(addr, bytes(rng.integers(0, 256, 8, dtype=np.uint8)))
        elif roll < 0.8:
            builder.flush(addr)
        else:
            builder.fence()
    # end with exactly k freshly flushed lines
    builder.fence()
    for i in rng.choice(32, size=k, replace=False):
        addr = PM_BASE + 64 * int(i)
        builder.store(addr, bytes(rng.integers(0, 256, 8, dtype=np.uint8))).flush(addr)
    return builder


def _brute_force_images(builder: TraceBuilder):
    state = MachineState()
    for event in builder.events:
        if builder.regions.admits(event):
            state.step(event)
    pending = list(state.pending_set)
    base = persisted_view(state)
    images = set()
    for size in range(len(pending) + 1):
        for subset in combinations(pending, size):
            image = dict(base)
            for line in subset:
                image[line] = state.lines[line].cache_content
            images.add(tuple(sorted(image.items())))
    return images, state


def test_enumeration_matches_brute_force_subsets():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        k = int(rng.integers(0, 13))
        builder = _random_trace(rng, k)
        images = enumerate_crash_images(builder.events, len(builder.events), builder.regions)
        expected, state = _brute_force_images(builder)

        assert len(images) == 2 ** k
        assert {tuple(sorted(img.image.items())) for img in images} == expected

        durable = persisted_view(state)
        assert images[0].image == durable
        included = set()
        for img in images:
            included.update(img.included_pending)
            assert set(img.included_pending) <= state.pending_set
            for line, content in durable.items():
                if line not in state.pending_set:
                    assert img.image[line] == content
        assert included == state.pending_set


def test_images_start_from_zero_memory(trace):
    trace.store(A).flush(A)
    empty = enumerate_crash_images(trace.events, len(trace.events), trace.regions)[0]
    assert empty.image[_line(A)] == ZERO_LINE
