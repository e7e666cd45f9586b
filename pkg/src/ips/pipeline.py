"""Pipeline wiring: micro-batched scoring engine, producer loop, and the
single-process (or per-role) orchestrator.

The engine runs one worker per partition with static assignment; each
worker wakes on the micro-batch interval, polls its partition, converts
envelopes to model inputs, scores all eight complications, writes
profiles, then commits offsets. Because profiles are deterministic
functions of their envelope (scored_at inherits produced_at) and the
store's writes are idempotent on identical bytes, redelivery after a
crash between poll and commit converges to the fault-free store state.
"""

from __future__ import annotations

import json
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .domain import AdmissionEnvelope, validate_envelope
from .features import VariableSchema, envelope_to_input
from .ingest import (
    DEFAULT_GRACE_INTERVALS,
    DEFAULT_SCAN_INTERVAL_SECS,
    AdmissionJoiner,
    SeenLedger,
    SourceScanner,
    publish_batch,
)
from .jsonutil import MonotonicClock
from .metrics import MetricsRegistry
from .models import ThresholdTable, load_model_set, score_all
from .store import Keyring, ProfileStore
from .streambus import BusClient, BusServer, StreamBus


class PipelineError(Exception):
    pass


@dataclass
class EngineConfig:
    topic: str = "admissions"
    group: str = "engine"
    batch_interval_secs: float = 1.0
    max_batch: int = 2000
    top_contributors: int = 5


class Engine:
    """Per-partition scoring workers over the bus."""

    def __init__(
        self,
        bus,
        store: ProfileStore,
        schema: VariableSchema,
        models: dict,
        thresholds: ThresholdTable,
        config: EngineConfig,
        metrics: MetricsRegistry,
        partitions: int,
        clock: MonotonicClock | None = None,
    ):
        self.bus = bus
        self.store = store
        self.schema = schema
        self.models = models
        self.thresholds = thresholds
        self.config = config
        self.metrics = metrics
        self.partitions = partitions
        self.clock = clock or MonotonicClock()
        self._stop = threading.Event()
        self._threads = [
            threading.Thread(target=self._worker, args=(k,), daemon=True,
                             name=f"engine-p{k}")
            for k in range(partitions)
        ]

    def start(self):
        for t in self._threads:
            t.start()
        return self

    def alive(self) -> bool:
        return any(t.is_alive() for t in self._threads)

    def _worker(self, partition: int):
        interval = self.config.batch_interval_secs
        next_tick = time.monotonic() + interval
        while True:
            stopping = self._stop.wait(timeout=max(0.0, next_tick - time.monotonic()))
            next_tick += interval
            self._process_available(partition)
            if stopping:
                self._process_available(partition)  # final drain
                return

    def _process_available(self, partition: int):
        while True:
            result = self.bus.poll(
                self.config.topic, self.config.group, self.config.max_batch,
                partitions=[partition],
            )
            if result.gap:
                self.metrics.incr("engine.gap_records", result.gap)
            if not result.records:
                return
            batch_start = self.clock.now_ms()
            last_offset = None
            for rec in result.records:
                self._score_record(rec, batch_start)
                last_offset = rec.offset
            if last_offset is not None:
                self.bus.commit(self.config.group, self.config.topic, partition, last_offset)
            if len(result.records) < self.config.max_batch:
                return

    def _score_record(self, rec, batch_start_ms: int):
        try:
            env = AdmissionEnvelope.from_obj(json.loads(rec.payload.decode("utf-8")))
        except (ValueError, KeyError, TypeError):
            self.metrics.incr("engine.poison_records")
            return
        if validate_envelope(env):
            self.metrics.incr("engine.invalid_envelopes")
            return
        model_input = envelope_to_input(env, self.schema, self.metrics)
        profile = score_all(
            self.models, model_input, self.thresholds, self.schema,
            key=env.key, scored_at=env.produced_at,
            top_n=self.config.top_contributors,
        )
        self.store.put_profile(profile)
        now = self.clock.now_ms()
        self.metrics.incr("engine.records_scored")
        self.metrics.record_latency_ms(now - env.produced_at)

    def drain(self, timeout: float = 30.0) -> bool:
        """Block until the consumer group has no lag (or timeout)."""
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.bus_lag() == 0:
                return True
            time.sleep(0.02)
        return self.bus_lag() == 0

    def bus_lag(self) -> int:
        try:
            return self.bus.lag(self.config.topic, self.config.group)
        except AttributeError:  # remote bus client has no lag probe
            return -1

    def stop(self, drain: bool = True):
        if drain:
            self.drain()
        self._stop.set()
        for t in self._threads:
            t.join(timeout=10.0)


class ProducerRunner:
    """Scan-join-publish loop on its own thread."""

    def __init__(self, scanner: SourceScanner, joiner: AdmissionJoiner, bus, topic: str,
                 interval_secs: float, metrics: MetricsRegistry):
        self.scanner = scanner
        self.joiner = joiner
        self.bus = bus
        self.topic = topic
        self.interval_secs = interval_secs
        self.metrics = metrics
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True, name="producer")

    def start(self):
        self._thread.start()
        return self

    def run_once(self):
        batch = self.scanner.scan()
        envelopes, report = self.joiner.join(batch)
        if envelopes:
            publish_batch(envelopes, self.bus, self.topic, metrics=self.metrics)
        self.metrics.incr("ingest.intervals")
        return report

    def _run(self):
        while not self._stop.is_set():
            try:
                self.run_once()
            except Exception:
                self.metrics.incr("ingest.scan_errors")
            self._stop.wait(self.interval_secs)

    def stop(self):
        self._stop.set()
        self._thread.join(timeout=10.0)


@dataclass
class PipelineConfig:
    topic: str = "admissions"
    partitions: int = 4
    retention: int = 500_000
    bus_mode: str = "memory"  # memory | disk
    bus_dir: str | None = None
    bus_listen: str | None = None  # "host:port" to serve the bus over TCP
    bus_remote: str | None = None  # connect instead of embedding
    bus_psk_hex: str | None = None
    store_mode: str = "memory"
    store_dir: str | None = None
    store_encrypt: bool = False
    schema_path: str = ""
    models_dir: str = ""
    thresholds_path: str = ""
    engine_enabled: bool = True
    batch_interval_secs: float = 1.0
    max_batch: int = 2000
    api_enabled: bool = False
    api_bind: str = "127.0.0.1:8300"
    api_tokens: dict = field(default_factory=dict)  # token -> clinician id
    api_cors_origins: list = field(default_factory=list)
    api_poll_page_size: int = 100
    api_static_dir: str | None = None
    producer_enabled: bool = False
    producer_sources: list = field(default_factory=list)
    producer_interval_secs: float = DEFAULT_SCAN_INTERVAL_SECS
    producer_grace_intervals: int = DEFAULT_GRACE_INTERVALS
    producer_ledger_path: str | None = None


def _default_asset(name: str) -> str:
    return str(Path(__file__).parent / "assets" / name)


def load_config(path: str | Path) -> PipelineConfig:
    """Read a pipeline config from JSON or TOML."""
    path = Path(path)
    if path.suffix == ".toml":
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        obj = tomllib.loads(path.read_text(encoding="utf-8"))
    else:
        obj = json.loads(path.read_text(encoding="utf-8"))
    known = {f for f in PipelineConfig.__dataclass_fields__}
    unknown = set(obj) - known
    if unknown:
        raise PipelineError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return PipelineConfig(**obj)


class Pipeline:
    """Own the component lifecycles for one process."""

    def __init__(self, config: PipelineConfig, metrics: MetricsRegistry | None = None):
        self.config = config
        self.metrics = metrics or MetricsRegistry()
        self.clock = MonotonicClock()
        self.bus = None
        self.bus_server = None
        self.store = None
        self.engine = None
        self.producer = None
        self.api_server = None
        self.schema = None
        self.models = None
        self.thresholds = None

    # -- lifecycle ------------------------------------------------------------

    def start(self):
        cfg = self.config
        psk = bytes.fromhex(cfg.bus_psk_hex) if cfg.bus_psk_hex else None

        if cfg.bus_remote:
            host, port = cfg.bus_remote.rsplit(":", 1)
            self.bus = BusClient(host, int(port), psk=psk)
        else:
            self.bus = StreamBus(durability=cfg.bus_mode, data_dir=cfg.bus_dir)
            if cfg.bus_listen:
                host, port = cfg.bus_listen.rsplit(":", 1)
                self.bus_server = BusServer(self.bus, host, int(port), psk=psk).start()
        if not self._topic_exists():
            try:
                self.bus.create_topic(cfg.topic, cfg.partitions, cfg.retention)
            except Exception as exc:
                if "exists" not in str(exc):
                    raise

        keyring = Keyring.from_env() if cfg.store_encrypt else None
        if cfg.store_encrypt and keyring is None:
            raise PipelineError("store_encrypt is set but IPS_STORE_KEY is not")
        self.store = ProfileStore(
            mode=cfg.store_mode, data_dir=cfg.store_dir, keyring=keyring,
            metrics=self.metrics,
        )

        if cfg.engine_enabled:
            schema_path = cfg.schema_path or _default_asset("schema.json")
            models_dir = cfg.models_dir or _default_asset("models")
            thresholds_path = cfg.thresholds_path or _default_asset("thresholds_paper.json")
            for p, what in ((schema_path, "schema"), (thresholds_path, "thresholds")):
                if not Path(p).exists():
                    raise PipelineError(f"{what} file not found: {p}")
            self.schema = VariableSchema.load(schema_path)
            self.schema.require_fitted()
            self.models = load_model_set(models_dir, self.schema)
            self.thresholds = ThresholdTable.load(thresholds_path)

            self.engine = Engine(
                bus=self.bus, store=self.store, schema=self.schema, models=self.models,
                thresholds=self.thresholds,
                config=EngineConfig(
                    topic=cfg.topic, batch_interval_secs=cfg.batch_interval_secs,
                    max_batch=cfg.max_batch,
                ),
                metrics=self.metrics, partitions=cfg.partitions, clock=self.clock,
            ).start()

        if cfg.producer_enabled:
            ledger = SeenLedger(Path(cfg.producer_ledger_path)) \
                if cfg.producer_ledger_path else SeenLedger()
            scanner = SourceScanner(cfg.producer_sources, ledger, self.metrics)
            joiner = AdmissionJoiner(cfg.producer_grace_intervals, self.metrics,
                                     clock=self.clock.now_ms)
            self.producer = ProducerRunner(
                scanner, joiner, self.bus, cfg.topic, cfg.producer_interval_secs,
                self.metrics,
            ).start()

        if cfg.api_enabled:
            self._start_api()
        return self

    def _topic_exists(self) -> bool:
        try:
            return self.bus.topic_exists(self.config.topic)
        except AttributeError:
            return False  # remote client: rely on create_topic error

    def _start_api(self):
        import uvicorn

        from .api import ApiConfig, create_app

        host, port = self.config.api_bind.rsplit(":", 1)
        app = create_app(
            store=self.store,
            metrics=self.metrics,
            health=self.health,
            config=ApiConfig(
                tokens=dict(self.config.api_tokens),
                cors_origins=list(self.config.api_cors_origins),
                poll_page_size=self.config.api_poll_page_size,
                static_dir=self.config.api_static_dir,
            ),
            thresholds=self.thresholds,
        )
        uv_config = uvicorn.Config(app, host=host, port=int(port), log_level="warning")
        self.api_server = uvicorn.Server(uv_config)
        self._api_thread = threading.Thread(
            target=self.api_server.run, daemon=True, name="api"
        )
        self._api_thread.start()

    def health(self) -> dict:
        bus_up = False
        if isinstance(self.bus, StreamBus):
            bus_up = not getattr(self.bus, "_closed", False)
        elif self.bus is not None:
            bus_up = self.bus.ping()
        engine_up = self.engine.alive() if self.engine is not None \
            else not self.config.engine_enabled
        return {
            "bus": "up" if bus_up else "down",
            "engine": "up" if engine_up else "down",
            "store": "up" if self.store is not None else "down",
        }

    def stop(self, drain: bool = True):
        if self.producer is not None:
            self.producer.stop()
        if self.engine is not None:
            self.engine.stop(drain=drain)
        if self.api_server is not None:
            self.api_server.should_exit = True
            self._api_thread.join(timeout=10.0)
        if self.bus_server is not None:
            self.bus_server.close()
        if isinstance(self.bus, BusClient):
            self.bus.close()
        elif isinstance(self.bus, StreamBus):
            self.bus.close()
        if self.store is not None:
            self.store.close()
