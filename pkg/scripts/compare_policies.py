"""
Policy comparison report
Runs random, PM-Aware and Q-learning exploration on one seeded workload tree
and charts how fast each policy discovers the seeded bug sites

Usage:
    python scripts/compare_policies.py [graph.json] [budget]
"""

import sys
from pathlib import Path

# Add repo root to path
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from ml.rl.explorer import GraphSpec, compare_policies, load_graph_spec  # noqa: E402
from ml.rl.qlearning import QConfig  # noqa: E402
from scripts.metrics_integration import metrics_collector, track_latency  # noqa: E402
from scripts.performance_metrics import MetricsVisualizer  # noqa: E402

DEFAULT_GRAPH = Path(__file__).resolve().parent.parent / "fixtures" / "explore_graph.json"


@track_latency("compare_policies")
def run_comparison(spec: GraphSpec, budget: int):
    return compare_policies(spec, budget, QConfig(seed=spec.seed))


def print_results(results, spec: GraphSpec, budget: int):
    print("=" * 80)
    print(f"POLICY COMPARISON ({spec.node_count} states, {spec.bug_sites} seeded bugs, budget {budget})")
    print("=" * 80)
    for name, result in results.items():
        curve = result.discovery_curve
        first_all = next((i + 1 for i, found in enumerate(curve) if found == spec.bug_sites), None)
        print(f"\n📊 {name}")
        print(f"  Expansions:        {result.expansions}")
        print(f"  Bug sites found:   {len(result.unique_bug_sites)}")
        print(f"  PM sites covered:  {result.pm_sites_covered}")
        print(f"  All bugs found at: {first_all if first_all else 'not within budget'}")


def main():
    graph_path = Path(sys.argv[1]) if len(sys.argv) > 1 else DEFAULT_GRAPH
    spec = load_graph_spec(str(graph_path))
    budget = int(sys.argv[2]) if len(sys.argv) > 2 else spec.node_count

    results = run_comparison(spec, budget)
    print_results(results, spec, budget)

    print("\n📈 Creating charts...")
    visualizer = MetricsVisualizer(metrics_collector)
    visualizer.create_discovery_chart({name: r.discovery_curve for name, r in results.items()})
    visualizer.create_coverage_chart({name: r.coverage_curve for name, r in results.items()})
    visualizer.create_latency_chart()
    output_dir = visualizer.save_all_figures("metrics_charts")

    metrics_collector.save_metrics("metrics_data.json")
    print(f"\n✅ Charts in {output_dir}/, metrics in metrics_data.json")
    print("=" * 80 + "\n")


if __name__ == "__main__":
    main()
