"""Keyed persistence for risk profiles and clinician feedback.

Single-node log-structured store: an append-only segment log plus an
in-memory index rebuilt by scan on open, with periodic compaction.
Values can be sealed in an authenticated-encryption envelope
(AES-256-GCM, random 96-bit nonce) before hitting disk; the pre-shared
key comes from the ``IPS_STORE_KEY`` environment variable (64 hex
chars) or an explicit key map, never from committed config.

Semantics: last-write-wins per key with a monotonically increasing
per-key version; a rewrite of byte-identical value content is a no-op
(same version), which makes at-least-once redelivery from the bus
harmless. Profile writes feed a global sequence number that serves the
API's update feed. Feedback is append-only history per admission.

On-disk layout::

    <dir>/<seq10>.seg     append-only segments
    segment record: u32 frame length | u16 key length | key bytes |
                    u8 sealed flag | u64 written_at_ms | value bytes

Profiles and feedback share the log; namespaces live inside the key
(canonical JSON array ["risk"|"feedback", patient_id, admission_id]).
"""

from __future__ import annotations

import json
import os
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .domain import AdmissionKey, Feedback, RiskProfile
from .jsonutil import canonical_json_bytes, iso_to_millis, now_millis
from .metrics import MetricsRegistry, NULL_METRICS

SEGMENT_MAX_BYTES = 32 * 1024 * 1024
ENV_KEY_NAME = "IPS_STORE_KEY"
DEFAULT_KEY_ID = "default"

NS_RISK = "risk"
NS_FEEDBACK = "feedback"


class StoreError(Exception):
    pass


class SealError(StoreError):
    pass


@dataclass(frozen=True)
class SealedPayload:
    """AEAD envelope: random nonce, ciphertext+tag, key identifier."""

    nonce: bytes
    ciphertext: bytes  # includes the 16-byte GCM tag
    key_id: str

    def to_bytes(self) -> bytes:
        kid = self.key_id.encode("utf-8")
        return struct.pack(">B", len(kid)) + kid + self.nonce + self.ciphertext

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SealedPayload":
        (kid_len,) = struct.unpack(">B", raw[:1])
        kid = raw[1 : 1 + kid_len].decode("utf-8")
        nonce = raw[1 + kid_len : 13 + kid_len]
        return cls(nonce=nonce, ciphertext=raw[13 + kid_len :], key_id=kid)


class Keyring:
    """Pre-shared AEAD keys by id."""

    def __init__(self, keys: dict | None = None):
        self._keys = dict(keys or {})
        for key_id, key in self._keys.items():
            if len(key) != 32:
                raise SealError(f"key {key_id!r} must be 32 bytes")

    @classmethod
    def from_env(cls) -> "Keyring | None":
        raw = os.environ.get(ENV_KEY_NAME)
        if not raw:
            return None
        try:
            key = bytes.fromhex(raw.strip())
        except ValueError as exc:
            raise SealError(f"{ENV_KEY_NAME} is not valid hex") from exc
        if len(key) != 32:
            raise SealError(f"{ENV_KEY_NAME} must be 64 hex chars (256-bit key)")
        return cls({DEFAULT_KEY_ID: key})

    def seal(self, plaintext: bytes, key_id: str = DEFAULT_KEY_ID) -> SealedPayload:
        key = self._keys.get(key_id)
        if key is None:
            raise SealError(f"key {key_id!r} not configured")
        nonce = os.urandom(12)
        ct = AESGCM(key).encrypt(nonce, plaintext, b"")
        return SealedPayload(nonce=nonce, ciphertext=ct, key_id=key_id)

    def open(self, sealed: SealedPayload) -> bytes:
        key = self._keys.get(sealed.key_id)
        if key is None:
            raise SealError(f"key {sealed.key_id!r} not configured")
        try:
            return AESGCM(key).decrypt(sealed.nonce, sealed.ciphertext, b"")
        except InvalidTag as exc:
            raise SealError("authentication failed: payload tampered or wrong key") from exc


def _store_key(namespace: str, key: AdmissionKey) -> bytes:
    return canonical_json_bytes([namespace, key.patient_id, key.admission_id])


@dataclass
class _IndexEntry:
    value: bytes  # plaintext value bytes (decrypted on load)
    version: int
    written_at: int
    seq: int  # global write sequence at last content change


@dataclass(frozen=True)
class UpdateEvent:
    seq: int
    patient_id: str
    admission_id: str
    scored_at: int


class ProfileStore:
    """Risk-profile and feedback persistence with optional sealing.

    Many concurrent readers; writes serialize on an internal lock.
    """

    def __init__(
        self,
        mode: str = "memory",
        data_dir: str | Path | None = None,
        keyring: Keyring | None = None,
        metrics: MetricsRegistry = NULL_METRICS,
    ):
        if mode not in ("memory", "disk"):
            raise StoreError(f"unknown store mode {mode!r}")
        if mode == "disk" and data_dir is None:
            raise StoreError("disk mode requires data_dir")
        self.mode = mode
        self.data_dir = Path(data_dir) if data_dir else None
        self.keyring = keyring
        self.metrics = metrics
        self._lock = threading.RLock()
        self._index: dict[bytes, _IndexEntry] = {}
        self._recency: dict[bytes, tuple] = {}  # risk keys -> (scored_at, seq)
        self._seq = 0
        self._events: list[UpdateEvent] = []
        self._event_waiters = threading.Condition(self._lock)
        self._segment_fh = None
        self._segment_path = None
        if mode == "disk":
            self.data_dir.mkdir(parents=True, exist_ok=True)
            with self._lock:
                self._replay_segments()

    # -- segment log ---------------------------------------------------------

    def _segments(self) -> list[Path]:
        return sorted(self.data_dir.glob("*.seg"))

    def _replay_segments(self):
        for seg in self._segments():
            with open(seg, "rb") as fh:
                while True:
                    header = fh.read(4)
                    if len(header) < 4:
                        break
                    (length,) = struct.unpack(">I", header)
                    frame = fh.read(length)
                    if len(frame) < length:
                        break  # torn tail write
                    self._apply_frame(frame)

    def _apply_frame(self, frame: bytes):
        (key_len,) = struct.unpack(">H", frame[:2])
        key = frame[2 : 2 + key_len]
        cursor = 2 + key_len
        sealed_flag, written_at, version = struct.unpack(">BQI", frame[cursor : cursor + 13])
        raw_value = frame[cursor + 13 :]
        if sealed_flag:
            if self.keyring is None:
                raise SealError("store contains sealed values but no key is configured")
            value = self.keyring.open(SealedPayload.from_bytes(raw_value))
        else:
            value = raw_value
        self._seq += 1
        self._index[key] = _IndexEntry(
            value=value, version=version, written_at=written_at, seq=self._seq
        )
        self._maybe_record_event(key, value)

    def _maybe_record_event(self, key: bytes, value: bytes):
        namespace = json.loads(key.decode("utf-8"))[0]
        if namespace != NS_RISK:
            return
        obj = json.loads(value.decode("utf-8"))
        scored_at = iso_to_millis(obj["scored_at"])
        self._recency[key] = (scored_at, self._seq)  # time-index, same lock as the put
        self._events.append(
            UpdateEvent(
                seq=self._seq,
                patient_id=obj["key"]["patient_id"],
                admission_id=obj["key"]["admission_id"],
                scored_at=scored_at,
            )
        )
        self._event_waiters.notify_all()

    def _open_segment_for_append(self):
        if self._segment_fh is not None and self._segment_path.stat().st_size < SEGMENT_MAX_BYTES:
            return
        if self._segment_fh is not None:
            self._segment_fh.close()
        self._segment_path = self.data_dir / f"{self._seq:010d}.seg"
        self._segment_fh = open(self._segment_path, "ab")

    def _encode_frame(self, key: bytes, value: bytes, written_at: int, version: int) -> bytes:
        if self.keyring is not None:
            raw_value = self.keyring.seal(value).to_bytes()
            sealed_flag = 1
        else:
            raw_value = value
            sealed_flag = 0
        return (
            struct.pack(">H", len(key))
            + key
            + struct.pack(">BQI", sealed_flag, written_at, version)
            + raw_value
        )

    def _write_frame(self, key: bytes, value: bytes, written_at: int, version: int):
        frame = self._encode_frame(key, value, written_at, version)
        self._open_segment_for_append()
        self._segment_fh.write(struct.pack(">I", len(frame)) + frame)
        self._segment_fh.flush()
        os.fsync(self._segment_fh.fileno())

    # -- generic put/get -----------------------------------------------------

    def _put(self, namespace: str, key: AdmissionKey, value: bytes, record_event: bool) -> int:
        skey = _store_key(namespace, key)
        written_at = now_millis()
        with self._lock:
            prev = self._index.get(skey)
            if prev is not None and prev.value == value:
                return prev.version  # idempotent rewrite
            version = prev.version + 1 if prev else 1
            if self.mode == "disk":
                self._write_frame(skey, value, written_at, version)
            self._seq += 1
            self._index[skey] = _IndexEntry(
                value=value, version=version, written_at=written_at, seq=self._seq
            )
            if record_event:
                self._maybe_record_event(skey, value)
            return version

    def _get(self, namespace: str, key: AdmissionKey) -> bytes | None:
        with self._lock:
            entry = self._index.get(_store_key(namespace, key))
            return entry.value if entry else None

    # -- profiles -------------------------------------------------------------

    def put_profile(self, profile: RiskProfile) -> int:
        value = canonical_json_bytes(profile.to_obj())
        return self._put(NS_RISK, profile.key, value, record_event=True)

    def get_profile(self, key: AdmissionKey) -> RiskProfile | None:
        value = self._get(NS_RISK, key)
        if value is None:
            return None
        return RiskProfile.from_obj(json.loads(value.decode("utf-8")))

    def list_recent(self, limit: int, since_ms: int | None = None) -> list:
        """(profile, seq) pairs newest-first by (scored_at, seq).

        Served from the secondary time-index; only the returned page is
        decoded. ``since_ms`` paginates: entries strictly older only.
        """
        with self._lock:
            ordered = sorted(self._recency.items(), key=lambda kv: kv[1], reverse=True)
            page = []
            for skey, (scored_at, seq) in ordered:
                if since_ms is not None and scored_at >= since_ms:
                    continue
                page.append((skey, seq))
                if len(page) == limit:
                    break
            return [
                (RiskProfile.from_obj(json.loads(self._index[skey].value.decode("utf-8"))),
                 seq)
                for skey, seq in page
            ]

    def profile_count(self) -> int:
        with self._lock:
            return len(self._recency)

    # -- feedback --------------------------------------------------------------

    def put_feedback(self, fb: Feedback) -> int:
        """Append one feedback entry to the key's history (newest last)."""
        with self._lock:
            if self._get(NS_RISK, fb.key) is None:
                self.metrics.incr("store.feedback_before_score")
            history = self._feedback_objs(fb.key)
            history.append(fb.to_obj())
            value = canonical_json_bytes(history)
            return self._put(NS_FEEDBACK, fb.key, value, record_event=False)

    def _feedback_objs(self, key: AdmissionKey) -> list:
        value = self._get(NS_FEEDBACK, key)
        return json.loads(value.decode("utf-8")) if value else []

    def get_feedback(self, key: AdmissionKey) -> list:
        """Full feedback history for one admission, submission order."""
        return [Feedback.from_obj(obj) for obj in self._feedback_objs(key)]

    # -- update feed ------------------------------------------------------------

    def current_seq(self) -> int:
        with self._lock:
            return self._seq

    def events_after(self, cursor: int, limit: int) -> list:
        with self._lock:
            if cursor > self._seq or cursor < 0:
                raise StoreError(f"invalid cursor {cursor}")
            return [e for e in self._events if e.seq > cursor][:limit]

    def wait_for_events(self, cursor: int, limit: int, timeout: float) -> list:
        """Block until events past ``cursor`` exist or the timeout lapses."""
        deadline = time.monotonic() + timeout
        with self._event_waiters:
            while True:
                events = [e for e in self._events if e.seq > cursor][:limit]
                if events:
                    return events
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return []
                self._event_waiters.wait(remaining)

    # -- maintenance -------------------------------------------------------------

    def compact(self):
        """Rewrite live entries into a fresh segment; drop superseded frames."""
        if self.mode != "disk":
            return
        with self._lock:
            old_segments = self._segments()
            if self._segment_fh is not None:
                self._segment_fh.close()
                self._segment_fh = None
            compact_path = self.data_dir / f"{self._seq:010d}.compact"
            live = sorted(self._index.items(), key=lambda ke: ke[1].seq)
            with open(compact_path, "wb") as fh:
                for skey, entry in live:
                    frame = self._encode_frame(skey, entry.value, entry.written_at, entry.version)
                    fh.write(struct.pack(">I", len(frame)) + frame)
                fh.flush()
                os.fsync(fh.fileno())
            final = compact_path.with_suffix(".seg")
            os.replace(compact_path, final)
            for seg in old_segments:
                if seg != final:
                    seg.unlink()

    def close(self):
        with self._lock:
            if self._segment_fh is not None:
                self._segment_fh.close()
                self._segment_fh = None

    def content_snapshot(self) -> dict:
        """Plaintext value bytes by store key; the effectively-once oracle."""
        with self._lock:
            return {k: e.value for k, e in self._index.items()}
