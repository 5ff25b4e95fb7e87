"""
Bug Oracles
Classify replay signals and end-of-trace leftovers into the five PM bug
classes, deduplicated by (class, site)
"""

import csv
import io
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from pmem.pm_state import MachineState, OracleSignal, SignalKind, StoreRecord
from pmem.trace_model import RegionTable, TraceEvent, line_of

logger = logging.getLogger(__name__)

MAX_EVIDENCE = 8


class BugClass(str, Enum):
    """Bug classes in report column order"""

    U_C = "U-C"    # unpersisted write (correctness)
    U_P = "U-P"    # unpersisted write (performance only)
    EP = "EP"      # extra flush
    Fl_P = "Fl-P"  # flush to untouched memory
    Fe_P = "Fe-P"  # fence with nothing to commit

    @property
    def description(self) -> str:
        return _DESCRIPTIONS[self]


_DESCRIPTIONS = {
    BugClass.U_C: "unpersisted write bugs (correctness)",
    BugClass.U_P: "unpersisted performance bugs",
    BugClass.EP: "extra flush bugs (performance)",
    BugClass.Fl_P: "flushes to untouched memory (performance)",
    BugClass.Fe_P: "fences with nothing to commit (performance)",
}

_SIGNAL_CLASS = {
    SignalKind.DUPLICATE_FLUSH: BugClass.EP,
    SignalKind.FLUSH_UNTOUCHED: BugClass.Fl_P,
    SignalKind.EMPTY_FENCE: BugClass.Fe_P,
}


@dataclass
class BugReport:
    bug_class: BugClass
    site: str
    occurrences: int
    first_event: int
    last_event: int
    evidence: List[int] = field(default_factory=list)
    lines: FrozenSet[int] = frozenset()

    def to_dict(self) -> Dict[str, object]:
        return {
            "bug_class": self.bug_class.value,
            "site": self.site,
            "occurrences": self.occurrences,
            "first_event": self.first_event,
            "last_event": self.last_event,
            "evidence": list(self.evidence),
            "lines": sorted(self.lines),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "BugReport":
        return cls(
            bug_class=BugClass(data["bug_class"]),
            site=data["site"],
            occurrences=int(data["occurrences"]),
            first_event=int(data["first_event"]),
            last_event=int(data["last_event"]),
            evidence=[int(i) for i in data.get("evidence", [])],
            lines=frozenset(int(i) for i in data.get("lines", [])),
        )


@dataclass(frozen=True)
class ClassSummary:
    unique: int = 0
    occurrences: int = 0


@dataclass
class CheckResult:
    reports: List[BugReport]
    totals: Dict[BugClass, int]

    @property
    def bug_count(self) -> int:
        return len(self.reports)


class _ReportFolder:
    """Folds individual findings into one report per (class, site)"""

    def __init__(self):
        self._reports: Dict[Tuple[BugClass, str], BugReport] = {}
        self._lines: Dict[Tuple[BugClass, str], set] = {}

    def add(self, bug_class: BugClass, site: str, event_index: int, line_base: Optional[int]) -> None:
        key = (bug_class, site)
        report = self._reports.get(key)
        if report is None:
            report = BugReport(bug_class, site, 0, event_index, event_index)
            self._reports[key] = report
            self._lines[key] = set()
        report.occurrences += 1
        report.first_event = min(report.first_event, event_index)
        report.last_event = max(report.last_event, event_index)
        if len(report.evidence) < MAX_EVIDENCE:
            report.evidence.append(event_index)
        if line_base is not None:
            self._lines[key].add(line_base)

    def reports(self) -> List[BugReport]:
        for key, report in self._reports.items():
            report.lines = frozenset(self._lines[key])
            report.evidence.sort()
        return sorted(self._reports.values(), key=lambda r: (r.first_event, r.site, r.bug_class.value))


def classify_signal(signal: OracleSignal) -> BugClass:
    return _SIGNAL_CLASS[signal.kind]


def classify_unpersisted(record: StoreRecord, regions: RegionTable) -> BugClass:
    return BugClass.U_P if regions.intersects_volatile(record.addr, record.size) else BugClass.U_C


def unpersisted_findings(state: MachineState, regions: RegionTable) -> List[Tuple[BugClass, StoreRecord]]:
    """Stores in persistent lines that are dirty, or flushed but never fenced"""
    findings = []
    for line in state.outstanding_lines(regions.is_persistent):
        for record in line.unpersisted_stores:
            findings.append((classify_unpersisted(record, regions), record))
    return findings


def check_trace(events: Sequence[TraceEvent], regions: RegionTable) -> CheckResult:
    """
    Run every oracle over a trace

    Args:
        events: parse-valid events
        regions: the trace's region table

    Returns:
        Deduplicated reports (sorted by first event, then site) and the
        occurrence total per class
    """
    folder = _ReportFolder()
    state = MachineState()

    for event in events:
        if not regions.admits(event):
            continue
        for signal in state.step(event):
            folder.add(classify_signal(signal), signal.site, signal.event_index, signal.line_base)

    for bug_class, record in unpersisted_findings(state, regions):
        folder.add(bug_class, record.site, record.event, line_of(record.addr))

    reports = folder.reports()
    totals = {bug_class: 0 for bug_class in BugClass}
    for report in reports:
        totals[report.bug_class] += report.occurrences

    logger.info(f"Oracles found {len(reports)} unique bugs over {len(events)} events")
    return CheckResult(reports=reports, totals=totals)


def summarize(reports: Iterable[BugReport]) -> Dict[BugClass, ClassSummary]:
    """Per-class (unique, occurrences) in report column order"""
    unique = {bug_class: 0 for bug_class in BugClass}
    occurrences = {bug_class: 0 for bug_class in BugClass}
    for report in reports:
        unique[report.bug_class] += 1
        occurrences[report.bug_class] += report.occurrences
    return {bug_class: ClassSummary(unique[bug_class], occurrences[bug_class]) for bug_class in BugClass}


def summary_to_dict(summary: Dict[BugClass, ClassSummary]) -> Dict[str, object]:
    return {
        "classes": [
            {"bug_class": bug_class.value, "unique": s.unique, "occurrences": s.occurrences}
            for bug_class, s in summary.items()
        ],
        "total_unique": sum(s.unique for s in summary.values()),
        "total_occurrences": sum(s.occurrences for s in summary.values()),
    }


def reports_to_csv(reports: Iterable[BugReport]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["class", "site", "occurrences", "first_event", "last_event"])
    for r in reports:
        writer.writerow([r.bug_class.value, r.site, r.occurrences, r.first_event, r.last_event])
    return out.getvalue()


def reports_to_text(reports: Sequence[BugReport]) -> str:
    if not reports:
        return "No persistence bugs found.\n"
    site_width = max(len(r.site) for r in reports)
    rows = [f"{'CLASS':<5}  {'SITE':<{site_width}}  {'OCCURRENCES':>11}  FIRST..LAST"]
    for r in reports:
        rows.append(
            f"{r.bug_class.value:<5}  {r.site:<{site_width}}  {r.occurrences:>11}  {r.first_event}..{r.last_event}"
        )
    return "\n".join(rows) + "\n"


def render_bar_chart(summary: Dict[BugClass, ClassSummary], width: int = 50) -> str:
    """
    Text bar chart of occurrence totals per class

    Bar lengths are log-scaled so that a class with tens of thousands of
    occurrences does not flatten the others.
    """
    counts = np.array([s.occurrences for s in summary.values()], dtype=float)
    scale = np.log10(counts.max() + 1) if counts.size and counts.max() > 0 else 1.0
    lengths = np.rint(np.log10(counts + 1) / scale * width).astype(int)

    rows = ["Bug occurrences per class (log scale)"]
    for (bug_class, s), length in zip(summary.items(), lengths):
        bar = "#" * int(length)
        rows.append(f"{bug_class.value:<5} |{bar:<{width}}| {s.occurrences} ({s.unique} unique)")
    total_unique = sum(s.unique for s in summary.values())
    rows.append(f"Total unique: {total_unique}")
    return "\n".join(rows) + "\n"
