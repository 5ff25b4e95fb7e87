"""
Performance Metrics Collection and Visualization
Tracks command latency and memory use, and charts exploration curves
"""

import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import psutil  # noqa: E402

logger = logging.getLogger(__name__)


class MetricsCollector:
    """Main class for collecting and storing performance metrics"""

    def __init__(self, project_name: str = "pmcheck"):
        self.project_name = project_name
        self.metrics = {
            "latency": [],
            "memory": [],
            "timestamp": datetime.now().isoformat(),
        }
        self.metrics_file = Path("metrics_data.json")

    def record_latency(self, operation: str, latency_ms: float, throughput: Optional[float] = None) -> Dict:
        """Record operation latency and throughput"""
        record = {
            "operation": operation,
            "latency_ms": latency_ms,
            "throughput": throughput,  # items/sec
            "timestamp": datetime.now().isoformat(),
        }
        self.metrics["latency"].append(record)
        logger.debug(f"Recorded latency for {operation}: {latency_ms:.2f}ms")
        return record

    def record_memory(self, operation: str) -> Dict:
        """Record the resident set size of this process"""
        rss_mb = psutil.Process().memory_info().rss / 1024 / 1024
        record = {
            "operation": operation,
            "memory_mb": rss_mb,
            "timestamp": datetime.now().isoformat(),
        }
        self.metrics["memory"].append(record)
        logger.debug(f"Recorded memory for {operation}: {rss_mb:.1f}MB")
        return record

    def save_metrics(self, filepath: Optional[str] = None) -> str:
        """Save metrics to JSON file"""
        if filepath is None:
            filepath = str(self.metrics_file)
        with open(filepath, "w", encoding="utf-8") as f:
            json.dump(self.metrics, f, indent=2)
        logger.info(f"✅ Metrics saved to {filepath}")
        return filepath

    def get_latency_summary(self) -> Dict[str, Dict[str, float]]:
        """Per-operation latency statistics"""
        grouped: Dict[str, List[float]] = {}
        for record in self.metrics["latency"]:
            grouped.setdefault(record["operation"], []).append(record["latency_ms"])

        stats = {}
        for operation, latencies in grouped.items():
            stats[operation] = {
                "min": float(min(latencies)),
                "max": float(max(latencies)),
                "mean": float(np.mean(latencies)),
                "median": float(np.median(latencies)),
                "p95": float(np.percentile(latencies, 95)),
                "count": len(latencies),
            }
        return stats


class MetricsVisualizer:
    """Generate exploration charts"""

    def __init__(self, metrics_collector: Optional[MetricsCollector] = None):
        self.collector = metrics_collector
        self.figures = []
        plt.rcParams["figure.figsize"] = (12, 6)

    def _curve_chart(self, curves: Mapping[str, Sequence[int]], ylabel: str, title: str, name: str) -> plt.Figure:
        fig, ax = plt.subplots(figsize=(12, 6))
        for label, curve in curves.items():
            ax.plot(np.arange(1, len(curve) + 1), curve, label=label, linewidth=2, drawstyle="steps-post")
        ax.set_xlabel("Expansions", fontsize=12, fontweight="bold")
        ax.set_ylabel(ylabel, fontsize=12, fontweight="bold")
        ax.set_title(title, fontsize=14, fontweight="bold")
        ax.legend()
        ax.grid(alpha=0.3)
        plt.tight_layout()
        self.figures.append((name, fig))
        return fig

    def create_discovery_chart(self, curves: Mapping[str, Sequence[int]]) -> plt.Figure:
        """Cumulative unique bug sites per expansion, one line per policy"""
        return self._curve_chart(curves, "Unique bug sites", "Bug Site Discovery", "discovery_curve")

    def create_coverage_chart(self, curves: Mapping[str, Sequence[int]]) -> plt.Figure:
        """Cumulative PM instruction sites per expansion"""
        return self._curve_chart(curves, "PM sites covered", "PM Instruction Coverage", "coverage_curve")

    def create_latency_chart(self) -> Optional[plt.Figure]:
        """Mean and P95 latency per recorded operation"""
        summary = self.collector.get_latency_summary() if self.collector else {}
        if not summary:
            return None

        operations = list(summary)
        x = np.arange(len(operations))
        width = 0.35
        fig, ax = plt.subplots(figsize=(12, 6))
        ax.bar(x - width / 2, [summary[op]["mean"] for op in operations], width, label="Mean", alpha=0.8)
        ax.bar(x + width / 2, [summary[op]["p95"] for op in operations], width, label="P95", alpha=0.8)
        ax.set_xticks(x)
        ax.set_xticklabels(operations, rotation=45, ha="right")
        ax.set_ylabel("Latency (ms)", fontsize=12, fontweight="bold")
        ax.set_title("Command Latency", fontsize=14, fontweight="bold")
        ax.legend()
        ax.grid(axis="y", alpha=0.3)
        plt.tight_layout()
        self.figures.append(("latency_chart", fig))
        return fig

    def save_figure(self, fig: plt.Figure, filepath: str) -> str:
        fig.savefig(filepath, dpi=150, bbox_inches="tight")
        plt.close(fig)
        logger.info(f"✅ Saved chart: {filepath}")
        return filepath

    def save_all_figures(self, output_dir: str = "metrics_charts") -> str:
        """Save all generated figures as PNG"""
        Path(output_dir).mkdir(parents=True, exist_ok=True)
        for name, fig in self.figures:
            self.save_figure(fig, str(Path(output_dir) / f"{name}.png"))
        self.figures.clear()
        return output_dir
