"""``ips`` command line: generate cohorts, run the pipeline, benchmark,
calibrate models, or run a standalone ingest producer."""

from __future__ import annotations

import json
import signal
import threading
from pathlib import Path

import click

from .domain import COMPLICATION_ORDER, ComplicationCode


@click.group()
def main():
    """Desk-scale streaming surgical risk scoring pipeline."""


@main.command()
@click.option("--n", "n_patients", type=int, required=True, help="cohort size")
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--chunks", type=int, default=1, show_default=True,
              help="CSV files per kind")
@click.option("--no-exclusions", is_flag=True,
              help="skip the adult/stay/renal cohort filters")
def generate(n_patients, seed, out_dir, chunks, no_exclusions):
    """Generate a synthetic cohort with planted outcome signal."""
    from .synth import CohortSpec, generate_cohort

    spec = CohortSpec(n_patients=n_patients, seed=seed,
                      exclusion_rules=not no_exclusions)
    manifest = generate_cohort(spec, out_dir, chunks=chunks)
    click.echo(f"wrote {len(manifest['files'])} files to {out_dir}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True,
              help="pipeline config (json or toml)")
def run(config_path):
    """Run the pipeline until interrupted; drains in-flight work on stop."""
    from .pipeline import Pipeline, load_config

    pipeline = Pipeline(load_config(config_path))
    pipeline.start()
    click.echo(f"pipeline up: {pipeline.health()}")
    stop = threading.Event()

    def handle_signal(signum, frame):
        stop.set()

    signal.signal(signal.SIGINT, handle_signal)
    signal.signal(signal.SIGTERM, handle_signal)
    while not stop.is_set():
        stop.wait(0.5)
    click.echo("draining...")
    pipeline.stop(drain=True)
    snapshot = pipeline.metrics.snapshot()
    click.echo(json.dumps(snapshot["counters"], indent=2))


@main.command()
@click.option("--rate", type=float, required=True, help="offered records per minute")
@click.option("--duration", type=float, required=True, help="offering window, seconds")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="pipeline config; defaults to in-memory demo assets")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="write JSON + text report here")
@click.option("--seed", type=int, default=2024, show_default=True)
def bench(rate, duration, config_path, out_path, seed):
    """Boot a pipeline, offer paced load, report throughput and latency."""
    from .bench import run_benchmark, write_report
    from .pipeline import Pipeline, PipelineConfig, load_config

    config = load_config(config_path) if config_path else PipelineConfig()
    pipeline = Pipeline(config).start()
    try:
        report = run_benchmark(pipeline, rate, duration, seed=seed)
    finally:
        pipeline.stop(drain=False)
    click.echo(report.human())
    if out_path:
        write_report(report, out_path)
        click.echo(f"report written to {out_path}")


@main.command()
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True,
              help="cohort directory (4 CSV kinds + labels.csv)")
@click.option("--complication", type=str, default="all", show_default=True,
              help="one of the 8 codes, or all")
@click.option("--folds", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--schema", "schema_path", type=click.Path(exists=True), default=None,
              help="variable schema; defaults to the shipped demo schema")
@click.option("--out", "out_dir", type=click.Path(), default="calibration_out",
              show_default=True)
def calibrate(data_dir, complication, folds, seed, schema_path, out_dir):
    """Fit models + Youden cutoffs with stratified cross-validation."""
    from .calibrate import calibrate_all
    from .features import VariableSchema

    if schema_path is None:
        schema_path = Path(__file__).parent / "assets" / "schema.json"
    schema = VariableSchema.load(schema_path)
    if complication == "all":
        codes = COMPLICATION_ORDER
    else:
        codes = (ComplicationCode(complication),)
    results = calibrate_all(data_dir, schema, out_dir, folds=folds, seed=seed,
                            codes=codes)
    for code, calib in results.items():
        click.echo(
            f"{code.value}: mean AUROC {calib.cv.mean_auroc:.4f}  "
            f"pooled cutoff {calib.cv.pooled_cutoff:.4f}  "
            f"mean fold cutoff {calib.cv.mean_cutoff:.4f}"
        )
    click.echo(f"artifacts in {out_dir}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="pipeline config; defaults to in-memory demo assets")
@click.option("--bind", type=str, default=None, help="host:port for the API")
@click.option("--tokens-file", type=click.Path(exists=True), default=None,
              help="JSON map of bearer token -> clinician id")
@click.option("--cors-origin", "cors_origins", type=str, multiple=True,
              help="allowed CORS origin (repeatable)")
@click.option("--static-dir", type=click.Path(exists=True), default=None,
              help="serve the dashboard build from this directory")
def serve(config_path, bind, tokens_file, cors_origins, static_dir):
    """Run the pipeline with the REST API on; flags override the config."""
    from .pipeline import Pipeline, PipelineConfig, load_config

    config = load_config(config_path) if config_path else PipelineConfig()
    config.api_enabled = True
    if bind:
        config.api_bind = bind
    if tokens_file:
        config.api_tokens = json.loads(Path(tokens_file).read_text())
    if cors_origins:
        config.api_cors_origins = list(cors_origins)
    if static_dir:
        config.api_static_dir = static_dir
    if not config.api_tokens:
        raise click.UsageError("no API tokens configured (config or --tokens-file)")
    pipeline = Pipeline(config).start()
    click.echo(f"api listening on {config.api_bind}; health: {pipeline.health()}")
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda s, f: stop.set())
    signal.signal(signal.SIGTERM, lambda s, f: stop.set())
    while not stop.is_set():
        stop.wait(0.5)
    pipeline.stop(drain=True)


@main.command()
@click.option("--sources", "source_dirs", type=click.Path(exists=True), multiple=True,
              required=True, help="directories to watch (repeatable)")
@click.option("--interval-secs", type=float, default=10.0, show_default=True)
@click.option("--topic", type=str, default="admissions", show_default=True)
@click.option("--grace-intervals", type=int, default=3, show_default=True)
@click.option("--bus-remote", type=str, required=True, help="bus address host:port")
@click.option("--psk-hex", type=str, default=None, help="transport pre-shared key")
@click.option("--ledger", "ledger_path", type=click.Path(), default=None,
              help="seen-file ledger; persists across restarts")
def ingest(source_dirs, interval_secs, topic, grace_intervals, bus_remote, psk_hex,
           ledger_path):
    """Standalone producer: scan sources and publish to a remote bus."""
    from .ingest import AdmissionJoiner, SeenLedger, SourceScanner
    from .metrics import MetricsRegistry
    from .pipeline import ProducerRunner
    from .streambus import BusClient

    host, port = bus_remote.rsplit(":", 1)
    bus = BusClient(host, int(port), psk=bytes.fromhex(psk_hex) if psk_hex else None)
    metrics = MetricsRegistry()
    ledger = SeenLedger(Path(ledger_path)) if ledger_path else SeenLedger()
    runner = ProducerRunner(
        SourceScanner(list(source_dirs), ledger, metrics),
        AdmissionJoiner(grace_intervals, metrics),
        bus, topic, interval_secs, metrics,
    ).start()
    click.echo(f"producer watching {', '.join(source_dirs)} -> {bus_remote}/{topic}")
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda s, f: stop.set())
    signal.signal(signal.SIGTERM, lambda s, f: stop.set())
    while not stop.is_set():
        stop.wait(0.5)
    runner.stop()
    bus.close()
    click.echo(json.dumps(metrics.snapshot()["counters"], indent=2))


if __name__ == "__main__":
    main()
