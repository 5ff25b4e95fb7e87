"""
Services package: simulated PM heap and the level hashing store built on it
"""

from .pm_heap import HEAP_BASE, PMHeap
from .levelhash_service import BugKnob, KnobTag, LevelHashTable, generate_workload, seeded_bug_fixture
from .levelhash_recovery import RecoveryOracle, check_recovery, decode_image

__all__ = [
    'HEAP_BASE', 'PMHeap',
    'BugKnob', 'KnobTag', 'LevelHashTable', 'generate_workload', 'seeded_bug_fixture',
    'RecoveryOracle', 'check_recovery', 'decode_image',
]
