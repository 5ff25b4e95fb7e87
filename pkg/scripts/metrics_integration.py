"""
Integration helper for metrics collection
Tracks latency and memory of the CLI subcommand handlers
"""

import time
from functools import wraps
from typing import Any, Callable, Optional


from scripts.performance_metrics import MetricsCollector


# Global metrics collector instance
metrics_collector = MetricsCollector("pmcheck")


def track_latency(operation_name: Optional[str] = None) -> Callable:
    """
    Decorator recording wall-clock latency and resident memory of each call

    Usage:
        @track_latency("check")
        def cmd_check(args, config):
            ...
    """
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args, **kwargs) -> Any:
            op_name = operation_name or func.__name__
            start_time = time.perf_counter()
            try:
                return func(*args, **kwargs)
            finally:
                latency_ms = (time.perf_counter() - start_time) * 1000
                throughput = 1000 / latency_ms if latency_ms > 0 else None
                metrics_collector.record_latency(op_name, latency_ms, throughput)
                metrics_collector.record_memory(op_name)
        return wrapper
    return decorator
