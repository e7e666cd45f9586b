"""Source-directory ingest: scan CSV drops, join records by admission,
publish JSON envelopes onto the stream bus.

Files are CSV with a header row, one file set per kind, named
``<kind>_<anything>.csv`` (kinds: admissions, providers, labs,
medications). A file is ingested at most once per deployment; malformed
rows are skipped and counted without failing the file.

Join semantics: an admission is emitted in the first interval where it
has at least one provider record. Records whose admission has not
arrived (and admissions still waiting for a provider) are buffered for
a grace window of N scan intervals, then dropped with a counted reason.
Late labs/meds for an already-emitted admission re-emit an updated
envelope with the same key and a newer produced_at, so downstream
overwrites by key.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

from .domain import (
    AdmissionEnvelope,
    AdmissionKey,
    SourceKind,
    SourceRecord,
    validate_envelope,
)
from .jsonutil import canonical_json_bytes, iso_to_millis, now_millis
from .metrics import MetricsRegistry, NULL_METRICS

DEFAULT_SCAN_INTERVAL_SECS = 10.0
DEFAULT_GRACE_INTERVALS = 3

_KIND_BY_PREFIX = {
    "admissions": SourceKind.ADMISSION,
    "providers": SourceKind.PROVIDER,
    "labs": SourceKind.LAB,
    "medications": SourceKind.MEDICATION,
}

# per-kind column schema; trailing ? marks optional columns, trailing *
# marks required columns whose value may legitimately be empty
_COLUMNS = {
    SourceKind.ADMISSION: (
        "patient_id", "admission_id", "admitted_at", "age_years", "sex", "race?",
        "zip?", "admission_type", "surgery_code", "comorbidity_flags*",
    ),
    SourceKind.PROVIDER: ("patient_id", "admission_id", "provider_id", "provider_role"),
    SourceKind.LAB: ("patient_id", "admission_id", "lab_name", "lab_value", "lab_units?",
                     "taken_at"),
    SourceKind.MEDICATION: ("patient_id", "admission_id", "drug_name", "dose?", "route?",
                            "given_at"),
}

_NUMERIC_COLUMNS = {
    SourceKind.ADMISSION: ("age_years",),
    SourceKind.PROVIDER: (),
    SourceKind.LAB: ("lab_value",),
    SourceKind.MEDICATION: (),
}

_TIMESTAMP_COLUMN = {
    SourceKind.ADMISSION: "admitted_at",
    SourceKind.LAB: "taken_at",
    SourceKind.MEDICATION: "given_at",
}


class IngestError(Exception):
    pass


@dataclass
class SourceBatch:
    interval_id: int
    records: dict  # SourceKind -> list[SourceRecord]
    discovered_files: list  # (path, size_bytes)

    def record_count(self) -> int:
        return sum(len(v) for v in self.records.values())


@dataclass
class JoinReport:
    interval_id: int
    envelopes_emitted: int = 0
    updates_emitted: int = 0
    orphans: dict = field(default_factory=dict)  # SourceKind -> new orphan records
    rejected: int = 0  # admissions expired without a provider
    rejected_records: int = 0  # records dropped with those rejections / orphan expiry


def kind_for_file(path: Path) -> SourceKind | None:
    stem = path.name.lower()
    for prefix, kind in _KIND_BY_PREFIX.items():
        if stem.startswith(prefix + "_") or stem == prefix + ".csv":
            return kind
    return None


def _parse_row(kind: SourceKind, row: dict, scan_time_ms: int) -> SourceRecord | None:
    payload = {}
    for col in _COLUMNS[kind]:
        optional = col.endswith("?")
        empty_ok = col.endswith("*")
        name = col.rstrip("?*")
        raw = row.get(name)
        if raw is None or raw == "":
            if optional:
                payload[name] = None
                continue
            if empty_ok and raw == "":
                payload[name] = ""
                continue
            return None  # required column absent or empty
        if name in _NUMERIC_COLUMNS[kind]:
            try:
                payload[name] = float(raw)
            except ValueError:
                return None
        else:
            payload[name] = raw
    ts_col = _TIMESTAMP_COLUMN.get(kind)
    if ts_col is not None:
        try:
            observed_at = iso_to_millis(payload[ts_col])
        except ValueError:
            return None
    else:
        observed_at = scan_time_ms
    try:
        admitted_at = iso_to_millis(payload["admitted_at"]) if kind is SourceKind.ADMISSION else 0
    except ValueError:
        return None
    key = AdmissionKey(
        patient_id=payload["patient_id"],
        admission_id=payload["admission_id"],
        admitted_at=admitted_at,
    )
    return SourceRecord(kind=kind, key=key, payload=payload, observed_at=observed_at)


class SeenLedger:
    """Which files have been ingested; optionally persisted between runs."""

    def __init__(self, state_path: Path | None = None):
        self.state_path = state_path
        self._seen: set[str] = set()
        if state_path is not None and state_path.exists():
            self._seen = set(state_path.read_text(encoding="utf-8").splitlines())

    def __contains__(self, path: Path) -> bool:
        return str(path) in self._seen

    def mark(self, paths: list):
        for p in paths:
            self._seen.add(str(p))
        if self.state_path is not None:
            tmp = self.state_path.with_suffix(".tmp")
            tmp.write_text("\n".join(sorted(self._seen)) + "\n", encoding="utf-8")
            tmp.replace(self.state_path)


class SourceScanner:
    """Repeatedly scan source directories for not-yet-ingested files."""

    def __init__(self, source_dirs: list, ledger: SeenLedger | None = None,
                 metrics: MetricsRegistry = NULL_METRICS):
        self.source_dirs = [Path(d) for d in source_dirs]
        for d in self.source_dirs:
            if not d.is_dir():
                raise IngestError(f"source directory does not exist: {d}")
        self.ledger = ledger or SeenLedger()
        self.metrics = metrics
        self._interval_id = 0

    def scan(self) -> SourceBatch:
        """Parse all new files; marks them seen atomically with return."""
        scan_time_ms = now_millis()
        records: dict = {kind: [] for kind in SourceKind}
        discovered = []
        new_files = []
        for source_dir in self.source_dirs:
            if not source_dir.is_dir():
                raise IngestError(f"source directory vanished: {source_dir}")
            for path in sorted(source_dir.glob("*.csv")):
                if path in self.ledger:
                    continue
                kind = kind_for_file(path)
                if kind is None:
                    self.metrics.incr("ingest.unrecognized_files")
                    new_files.append(path)  # never re-read junk either
                    continue
                discovered.append((str(path), path.stat().st_size))
                new_files.append(path)
                with open(path, newline="", encoding="utf-8") as fh:
                    for row in csv.DictReader(fh):
                        record = _parse_row(kind, row, scan_time_ms)
                        if record is None:
                            self.metrics.incr("ingest.malformed_rows")
                            continue
                        records[kind].append(record)
        self.ledger.mark(new_files)
        batch = SourceBatch(
            interval_id=self._interval_id, records=records, discovered_files=discovered
        )
        self._interval_id += 1
        self.metrics.incr("ingest.records_parsed", batch.record_count())
        return batch


@dataclass
class _AdmissionState:
    admission: dict | None = None
    admitted_at: int = 0
    providers: list = field(default_factory=list)
    labs: list = field(default_factory=list)
    medications: list = field(default_factory=list)
    first_seen_interval: int = 0
    emitted: bool = False
    dirty: bool = False
    extra_admission_rows: int = 0  # duplicate admission rows absorbed by refresh

    def record_count(self) -> int:
        return (1 if self.admission is not None else 0) + self.extra_admission_rows + \
            len(self.providers) + len(self.labs) + len(self.medications)


def _payload_sort_key(payload: dict) -> bytes:
    return canonical_json_bytes(payload)


class AdmissionJoiner:
    """Stateful join of source records into admission envelopes.

    Envelope list order is canonical (sorted by payload bytes), so the
    join result is insensitive to record arrival order within a batch.
    """

    def __init__(self, grace_intervals: int = DEFAULT_GRACE_INTERVALS,
                 metrics: MetricsRegistry = NULL_METRICS, clock=now_millis):
        self.grace_intervals = grace_intervals
        self.metrics = metrics
        self.clock = clock
        self._state: dict = {}  # (patient_id, admission_id) -> _AdmissionState
        self.records_seen = 0
        self.records_rejected = 0

    def join(self, batch: SourceBatch) -> tuple[list, JoinReport]:
        report = JoinReport(interval_id=batch.interval_id)
        interval = batch.interval_id

        # admissions first, so join outcome is independent of row order in files
        for kind in SourceKind:
            for record in batch.records[kind]:
                self.records_seen += 1
                ident = record.key.ident()
                state = self._state.get(ident)
                if state is None:
                    state = _AdmissionState(first_seen_interval=interval)
                    self._state[ident] = state
                if kind is SourceKind.ADMISSION:
                    if state.admission is not None:
                        state.extra_admission_rows += 1
                        self.metrics.incr("ingest.duplicate_admissions")
                    state.admission = dict(record.payload)
                    state.admitted_at = record.key.admitted_at
                else:
                    if state.admission is None:
                        report.orphans[kind] = report.orphans.get(kind, 0) + 1
                    if kind is SourceKind.PROVIDER:
                        state.providers.append(dict(record.payload))
                    elif kind is SourceKind.LAB:
                        state.labs.append(dict(record.payload))
                    else:
                        state.medications.append(dict(record.payload))
                state.dirty = True

        envelopes = []
        expired = []
        for ident in sorted(self._state):
            state = self._state[ident]
            emittable = state.admission is not None and len(state.providers) >= 1
            if emittable and state.dirty:
                env = self._build_envelope(ident, state)
                violations = validate_envelope(env)
                if violations:
                    self.metrics.incr("ingest.invalid_envelopes")
                    report.rejected += 1
                    report.rejected_records += state.record_count()
                    self.records_rejected += state.record_count()
                    expired.append(ident)
                    continue
                envelopes.append(env)
                if state.emitted:
                    report.updates_emitted += 1
                else:
                    report.envelopes_emitted += 1
                state.emitted = True
                state.dirty = False
            elif not emittable and interval - state.first_seen_interval >= self.grace_intervals:
                count = state.record_count()
                report.rejected += 1 if state.admission is not None else 0
                report.rejected_records += count
                self.records_rejected += count
                reason = "no provider" if state.admission is not None else "orphaned"
                self.metrics.incr(f"ingest.expired.{reason.replace(' ', '_')}", count)
                expired.append(ident)
        for ident in expired:
            del self._state[ident]

        return envelopes, report

    def _build_envelope(self, ident, state: _AdmissionState) -> AdmissionEnvelope:
        key = AdmissionKey(
            patient_id=ident[0], admission_id=ident[1], admitted_at=state.admitted_at
        )
        return AdmissionEnvelope(
            key=key,
            admission=dict(state.admission),
            providers=tuple(sorted((dict(p) for p in state.providers), key=_payload_sort_key)),
            labs=tuple(sorted((dict(p) for p in state.labs), key=_payload_sort_key)),
            medications=tuple(
                sorted((dict(p) for p in state.medications), key=_payload_sort_key)
            ),
            produced_at=self.clock(),
        )

    def disposition(self) -> tuple[int, int, int]:
        """(records in emitted envelopes, records buffered, records rejected).

        Conservation: seen == enveloped + buffered + rejected, always.
        """
        enveloped = 0
        buffered = 0
        for state in self._state.values():
            if state.emitted:
                enveloped += state.record_count()
            else:
                buffered += state.record_count()
        return enveloped, buffered, self.records_rejected


def serialize_envelope(env: AdmissionEnvelope) -> bytes:
    """Canonical JSON bytes: sorted keys, no insignificant whitespace."""
    return canonical_json_bytes(env.to_obj())


def envelope_bus_key(env: AdmissionEnvelope) -> bytes:
    return canonical_json_bytes([env.key.patient_id, env.key.admission_id])


def publish_batch(
    envelopes: list,
    bus,
    topic: str,
    max_attempts: int = 6,
    base_backoff_secs: float = 0.05,
    metrics: MetricsRegistry = NULL_METRICS,
    sleep=time.sleep,
) -> list:
    """Publish envelopes in order, keyed by admission.

    Bus failures retry with bounded exponential backoff; a still-failing
    append surfaces a delivery failure. Source files stay marked seen
    either way (at-least-once; dedup happens downstream by key).
    """
    assignments = []
    for env in envelopes:
        payload = serialize_envelope(env)
        key = envelope_bus_key(env)
        attempt = 0
        while True:
            try:
                assignments.append(bus.append(topic, key, payload))
                metrics.incr("ingest.envelopes_published")
                break
            except Exception:
                attempt += 1
                if attempt >= max_attempts:
                    metrics.incr("ingest.publish_failures")
                    raise
                sleep(base_backoff_secs * (2 ** (attempt - 1)))
    return assignments
