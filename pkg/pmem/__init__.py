"""
Persistence model: trace format, cache-line state machine, bug oracles and
crash-image enumeration
"""

from .crash_enum import CrashImage, Verdict, check_images, enumerate_crash_images
from .oracles import BugClass, BugReport, check_trace, summarize
from .pm_state import LineState, MachineState, apply_event, persisted_view
from .trace_model import RegionTable, TraceEvent, parse_trace, write_trace

__all__ = [
    'TraceEvent', 'RegionTable', 'parse_trace', 'write_trace',
    'LineState', 'MachineState', 'apply_event', 'persisted_view',
    'BugClass', 'BugReport', 'check_trace', 'summarize',
    'CrashImage', 'Verdict', 'enumerate_crash_images', 'check_images',
]
