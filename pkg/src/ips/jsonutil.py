"""Canonical JSON and timestamp helpers shared by every pipeline stage.

Canonical form: UTF-8, sorted object keys, no insignificant whitespace,
NaN/Inf rejected. Byte-equality of canonical encodings implies value
equality, which the store's idempotent writes and the join's
order-insensitivity tests rely on.

Timestamps are 64-bit epoch milliseconds in memory and ISO-8601 UTC
strings (``YYYY-MM-DDTHH:MM:SS.mmmZ``) on the wire.
"""

from __future__ import annotations

import json
import time
from datetime import datetime, timezone


def canonical_json_bytes(obj) -> bytes:
    """Serialize to canonical JSON bytes (sorted keys, compact, UTF-8)."""
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def canonical_json_str(obj) -> str:
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    )


def millis_to_iso(ms: int) -> str:
    """Epoch milliseconds -> ISO-8601 UTC with millisecond precision."""
    # Python's // and % floor, so this stays exact for pre-epoch times too
    whole = datetime.fromtimestamp(ms // 1000, tz=timezone.utc)
    return whole.strftime("%Y-%m-%dT%H:%M:%S") + f".{ms % 1000:03d}Z"


def iso_to_millis(s: str) -> int:
    """Parse ISO-8601 UTC (``Z`` or explicit offset) to epoch milliseconds."""
    text = s.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return round(dt.timestamp() * 1000)


def now_millis() -> int:
    return time.time_ns() // 1_000_000


class MonotonicClock:
    """Epoch-millisecond clock backed by ``time.monotonic``.

    Anchored to wall time at construction; immune to wall-clock jumps, so
    latency measured across threads on one host is trustworthy.
    """

    def __init__(self):
        self._anchor_wall_ms = now_millis()
        self._anchor_mono = time.monotonic()

    def now_ms(self) -> int:
        return self._anchor_wall_ms + round((time.monotonic() - self._anchor_mono) * 1000)
