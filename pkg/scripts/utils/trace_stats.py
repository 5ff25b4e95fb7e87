"""
Print a trace's event counts per kind, distinct sites and touched lines

Usage:
    python scripts/utils/trace_stats.py TRACE
"""

import sys
from collections import Counter
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[2]))

from pmem.trace_model import load_trace  # noqa: E402


def trace_stats(events, regions):
    kinds = Counter(e.kind.value for e in events)
    sites = {e.site for e in events if e.site}
    lines = {e.line for e in events if e.addr is not None and regions.is_persistent(e.addr)}
    return {
        "events": len(events),
        "kinds": dict(sorted(kinds.items())),
        "sites": len(sites),
        "persistent_lines": len(lines),
        "regions": len(regions.ranges),
    }


def main():
    if len(sys.argv) != 2:
        print(__doc__)
        return 2
    stats = trace_stats(*load_trace(sys.argv[1]))

    print("=" * 50)
    print(f"TRACE {sys.argv[1]}")
    print("=" * 50)
    print(f"Events: {stats['events']}")
    for kind, count in stats["kinds"].items():
        print(f"  {kind}: {count}")
    print(f"Distinct sites: {stats['sites']}")
    print(f"Persistent lines touched: {stats['persistent_lines']}")
    print(f"Regions: {stats['regions']}")
    print("=" * 50)
    return 0


if __name__ == "__main__":
    sys.exit(main())
