"""
Regenerate fixtures/levelhash_table1.trace

The trace seeds 60 missing token flushes, 2 whole-header flushes and 3
extra fences into level hashing inserts, each at its own site.

Usage:
    python scripts/fixtures/build_seeded_fixture.py [output path]
"""

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[2]
sys.path.insert(0, str(ROOT))

from pmem.oracles import check_trace, summarize  # noqa: E402
from pmem.trace_model import save_trace  # noqa: E402
from services.levelhash_service import seeded_bug_fixture  # noqa: E402

DEFAULT_OUT = ROOT / "fixtures" / "levelhash_table1.trace"


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else DEFAULT_OUT
    workload = seeded_bug_fixture()
    save_trace(str(out), workload.events, workload.regions)

    summary = summarize(check_trace(workload.events, workload.regions).reports)
    print(f"✅ Wrote {len(workload.events)} events to {out}")
    for bug_class, counts in summary.items():
        print(f"  {bug_class.value:<5} {counts.unique}")
    print(f"  Total {sum(c.unique for c in summary.values())}")


if __name__ == "__main__":
    main()
