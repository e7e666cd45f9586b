"""End-to-end load benchmark: offer synthetic envelopes at a paced rate,
measure achieved throughput and produced-to-stored latency.

Timing uses one monotonic-anchored clock shared with the engine, so
latency is meaningful across threads on one host. Achieved throughput
is records fully stored divided by the offering window; the post-window
drain is bounded and reported separately. Latency is reported under
both readings of "system delay": queueing-inclusive (envelope
produced_at to profile stored, which the percentiles below use) and the
batch-interval-free processing time implied by it.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .domain import AdmissionEnvelope, AdmissionKey
from .ingest import envelope_bus_key, serialize_envelope
from .metrics import percentile
from .pipeline import Pipeline
from .synth import synthetic_envelope_payloads


class BenchError(Exception):
    pass


@dataclass
class BenchReport:
    offered_rate_per_min: float
    achieved_rate_per_min: float
    offered_count: int
    stored_count: int
    lost_count: int
    p50_ms: float
    p95_ms: float
    p99_ms: float
    mean_ms: float
    offering_secs: float
    drain_secs: float
    drained: bool
    error_count: int
    batch_interval_secs: float
    config: dict = field(default_factory=dict)

    def validate(self):
        if self.achieved_rate_per_min > self.offered_rate_per_min + 1e-9:
            raise BenchError("achieved rate exceeds offered rate")
        if not (self.p50_ms <= self.p95_ms <= self.p99_ms):
            raise BenchError("latency percentiles not monotone")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def human(self) -> str:
        lines = [
            f"offered   {self.offered_count} records in {self.offering_secs:.1f}s "
            f"({self.offered_rate_per_min:.0f}/min)",
            f"achieved  {self.stored_count} stored ({self.achieved_rate_per_min:.0f}/min), "
            f"lost {self.lost_count}",
            f"latency   p50 {self.p50_ms:.0f} ms, p95 {self.p95_ms:.0f} ms, "
            f"p99 {self.p99_ms:.0f} ms (batch interval {self.batch_interval_secs:g}s)",
            f"drain     {self.drain_secs:.1f}s ({'complete' if self.drained else 'INCOMPLETE'})",
            f"errors    {self.error_count}",
        ]
        return "\n".join(lines)


class LoadGenerator:
    """Token-bucket paced envelope source publishing straight to the bus."""

    def __init__(self, pipeline: Pipeline, rate_per_min: float, seed: int = 20_24):
        self.pipeline = pipeline
        self.rate_per_min = rate_per_min
        self.rng = np.random.default_rng(seed)
        self.offered = 0
        self.errors = 0
        self.last_emit_elapsed = 0.0
        self._index = 0
        self._chunk: list = []

    def _refill(self, count: int = 512):
        self._chunk = synthetic_envelope_payloads(self.rng, count, start_index=self._index)
        self._index += count

    def emit_one(self):
        if not self._chunk:
            self._refill()
        pid, aid, admitted_ms, admission, providers, labs, medications = self._chunk.pop()
        env = AdmissionEnvelope(
            key=AdmissionKey(pid, aid, admitted_ms),
            admission=admission,
            providers=tuple(providers),
            labs=tuple(labs),
            medications=tuple(medications),
            produced_at=self.pipeline.clock.now_ms(),
        )
        try:
            self.pipeline.bus.append(
                self.pipeline.config.topic, envelope_bus_key(env), serialize_envelope(env)
            )
            self.offered += 1
        except Exception:
            self.errors += 1

    def run(self, duration_secs: float, stop_event: threading.Event):
        spacing = 60.0 / self.rate_per_min
        start = time.monotonic()
        k = 0
        while not stop_event.is_set():
            due = start + k * spacing
            if due - start >= duration_secs:
                break
            now = time.monotonic()
            if due > now:
                time.sleep(min(due - now, 0.05))
                continue
            self.emit_one()
            self.last_emit_elapsed = time.monotonic() - start
            k += 1

    def offering_window_secs(self) -> float:
        """The window the offered load spans: record k owns the slot
        [k*spacing, (k+1)*spacing), so on schedule this is exactly
        offered*spacing; a generator that fell behind widens it to the
        last actual emission time."""
        scheduled = self.offered * (60.0 / self.rate_per_min)
        return max(scheduled, self.last_emit_elapsed)


def run_benchmark(
    pipeline: Pipeline,
    rate_per_min: float,
    duration_secs: float,
    drain_cap_secs: float = 60.0,
    seed: int = 20_24,
) -> BenchReport:
    """Offer load to a healthy running pipeline and measure the outcome."""
    health = pipeline.health()
    if any(status != "up" for component, status in health.items() if component != "producer"):
        raise BenchError(f"pipeline unhealthy at benchmark start: {health}")

    baseline_stored = pipeline.store.profile_count()
    pipeline.metrics.reset_latencies()

    generator = LoadGenerator(pipeline, rate_per_min, seed=seed)
    stop_event = threading.Event()
    generator.run(duration_secs, stop_event)
    offering_secs = generator.offering_window_secs()

    drain_start = time.monotonic()
    drained = pipeline.engine.drain(timeout=drain_cap_secs)
    drain_secs = time.monotonic() - drain_start

    stored = pipeline.store.profile_count() - baseline_stored
    latencies = sorted(pipeline.metrics.latencies_ms())
    offered_rate = generator.offered * 60.0 / offering_secs if offering_secs else 0.0
    achieved_rate = stored * 60.0 / offering_secs if offering_secs else 0.0
    report = BenchReport(
        offered_rate_per_min=offered_rate,
        achieved_rate_per_min=achieved_rate,
        offered_count=generator.offered,
        stored_count=stored,
        lost_count=generator.offered - stored,
        p50_ms=percentile(latencies, 50.0) or 0.0,
        p95_ms=percentile(latencies, 95.0) or 0.0,
        p99_ms=percentile(latencies, 99.0) or 0.0,
        mean_ms=(sum(latencies) / len(latencies)) if latencies else 0.0,
        offering_secs=offering_secs,
        drain_secs=drain_secs,
        drained=drained,
        error_count=generator.errors,
        batch_interval_secs=pipeline.config.batch_interval_secs,
        config={
            "rate_per_min": rate_per_min,
            "duration_secs": duration_secs,
            "partitions": pipeline.config.partitions,
            "bus_mode": pipeline.config.bus_mode,
            "store_mode": pipeline.config.store_mode,
            "seed": seed,
        },
    )
    report.validate()
    return report


def write_report(report: BenchReport, out_path: str | Path):
    out_path = Path(out_path)
    out_path.write_text(report.to_json() + "\n", encoding="utf-8")
    human = out_path.with_suffix(".txt")
    human.write_text(report.human() + "\n", encoding="utf-8")
