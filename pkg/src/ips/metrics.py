"""Thread-safe counters and a latency reservoir shared across stages.

One registry instance travels through the pipeline; the API's
``/v1/metrics`` endpoint snapshots it. Counters are plain named
integers; latencies keep the raw values (bounded) so the benchmark can
report exact percentiles.
"""

from __future__ import annotations

import threading
from collections import defaultdict

LATENCY_CAP = 500_000


class MetricsRegistry:
    def __init__(self):
        self._lock = threading.Lock()
        self._counters = defaultdict(int)
        self._latencies_ms: list[float] = []

    def incr(self, name: str, amount: int = 1):
        with self._lock:
            self._counters[name] += amount

    def get(self, name: str) -> int:
        with self._lock:
            return self._counters.get(name, 0)

    def record_latency_ms(self, value: float):
        with self._lock:
            if len(self._latencies_ms) < LATENCY_CAP:
                self._latencies_ms.append(value)

    def latencies_ms(self) -> list[float]:
        with self._lock:
            return list(self._latencies_ms)

    def reset_latencies(self):
        with self._lock:
            self._latencies_ms.clear()

    def snapshot(self) -> dict:
        with self._lock:
            latencies = sorted(self._latencies_ms)
            return {
                "counters": dict(sorted(self._counters.items())),
                "latency_ms": {
                    "count": len(latencies),
                    "p50": percentile(latencies, 50.0),
                    "p95": percentile(latencies, 95.0),
                    "p99": percentile(latencies, 99.0),
                },
            }


def percentile(sorted_values: list[float], pct: float) -> float | None:
    """Linear-interpolated percentile of an ascending list; None if empty."""
    if not sorted_values:
        return None
    if len(sorted_values) == 1:
        return sorted_values[0]
    rank = (pct / 100.0) * (len(sorted_values) - 1)
    lo = int(rank)
    hi = min(lo + 1, len(sorted_values) - 1)
    frac = rank - lo
    return sorted_values[lo] * (1 - frac) + sorted_values[hi] * frac


class _NullMetrics(MetricsRegistry):
    """Swallow-everything registry for pure-function call sites."""

    def incr(self, name: str, amount: int = 1):
        pass

    def record_latency_ms(self, value: float):
        pass


NULL_METRICS = _NullMetrics()
