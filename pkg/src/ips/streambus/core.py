"""Core commit-log data structures and operations.

Offsets within a partition are contiguous from the low-watermark; the
partition for a key is ``fnv1a64(key) mod P``, fixed cross-platform so
assignment is reproducible. Retention is a per-partition record cap:
appends never fail, the low-watermark advances instead.

Disk layout (durability mode ``disk``)::

    <dir>/<topic>/meta.json                  topic config
    <dir>/<topic>/p<k>/<base20>.seg          append-only segment files
    <dir>/<topic>/p<k>/watermark.json        logical low-watermark
    <dir>/groups/<group>.json                committed offsets (fsync on commit)

Segment record frame: u32 body length, then body =
u64 appended_at_ms | u32 key length | key | u32 payload length | payload
(all big-endian). Segments roll every SEGMENT_RECORDS records and are
deleted once wholly below the low-watermark.
"""

from __future__ import annotations

import json
import os
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from ..jsonutil import now_millis

SEGMENT_RECORDS = 4096

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash; stable across platforms and processes."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _U64
    return h


def stable_hash(data: bytes) -> int:
    """Partitioning hash: FNV-1a plus an avalanche finalizer.

    Raw FNV-1a's lowest bit is a parity of the input bytes, which
    collapses `hash mod 2^k` for keys whose differing characters appear
    an even number of times (exactly what admission-id pairs look
    like). The xor-shift/multiply finalizer spreads every input bit
    across the whole word while staying fixed cross-platform.
    """
    h = fnv1a64(data)
    h ^= h >> 30
    h = (h * 0xBF58476D1CE4E5B9) & _U64
    h ^= h >> 27
    h = (h * 0x94D049BB133111EB) & _U64
    h ^= h >> 31
    return h


class BusError(Exception):
    pass


@dataclass(frozen=True)
class Topic:
    name: str
    partitions: int
    retention: int


@dataclass(frozen=True)
class LogRecord:
    partition: int
    offset: int
    key: bytes
    payload: bytes
    appended_at: int  # epoch ms


@dataclass(frozen=True)
class ConsumerGroupState:
    group: str
    committed: dict  # (topic, partition) -> offset of last processed record


@dataclass
class PollResult:
    """Records plus the count of records lost to eviction before resume."""

    records: list
    gap: int = 0

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


@dataclass
class _Partition:
    base_offset: int = 0  # low-watermark: offset of oldest retained record
    records: deque = field(default_factory=deque)

    @property
    def high_watermark(self) -> int:
        return self.base_offset + len(self.records)


class _SegmentWriter:
    """Append-only segment files for one partition."""

    def __init__(self, part_dir: Path):
        self.dir = part_dir
        self.dir.mkdir(parents=True, exist_ok=True)
        self._fh = None
        self._segment_base = None
        self._segment_count = 0

    def _open_segment(self, base_offset: int):
        if self._fh is not None:
            self._fh.close()
        self._segment_base = base_offset
        path = self.dir / f"{base_offset:020d}.seg"
        self._fh = open(path, "ab")
        self._segment_count = self._count_records(path)

    @staticmethod
    def _count_records(path: Path) -> int:
        n = 0
        with open(path, "rb") as fh:
            while True:
                header = fh.read(4)
                if len(header) < 4:
                    break
                (length,) = struct.unpack(">I", header)
                fh.seek(length, os.SEEK_CUR)
                n += 1
        return n

    def append(self, offset: int, rec: LogRecord, fsync: bool):
        if self._fh is None or self._segment_count >= SEGMENT_RECORDS:
            self._open_segment(offset)
        body = (
            struct.pack(">QI", rec.appended_at, len(rec.key))
            + rec.key
            + struct.pack(">I", len(rec.payload))
            + rec.payload
        )
        self._fh.write(struct.pack(">I", len(body)) + body)
        self._fh.flush()
        if fsync:
            os.fsync(self._fh.fileno())
        self._segment_count += 1

    def prune_below(self, low_watermark: int):
        """Delete segments wholly below the logical low-watermark."""
        segs = sorted(self.dir.glob("*.seg"))
        for i, seg in enumerate(segs):
            base = int(seg.stem)
            end = int(segs[i + 1].stem) if i + 1 < len(segs) else None
            if end is not None and end <= low_watermark and base != self._segment_base:
                seg.unlink()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def _load_segments(part_dir: Path, partition: int) -> tuple[int, list]:
    """Replay segment files; returns (first_offset, records)."""
    records = []
    first_offset = None
    for seg in sorted(part_dir.glob("*.seg")):
        base = int(seg.stem)
        offset = base
        with open(seg, "rb") as fh:
            while True:
                header = fh.read(4)
                if len(header) < 4:
                    break
                (length,) = struct.unpack(">I", header)
                body = fh.read(length)
                if len(body) < length:
                    break  # torn tail write; drop it
                appended_at, key_len = struct.unpack(">QI", body[:12])
                key = body[12 : 12 + key_len]
                (payload_len,) = struct.unpack(">I", body[12 + key_len : 16 + key_len])
                payload = body[16 + key_len : 16 + key_len + payload_len]
                records.append(LogRecord(partition, offset, key, payload, appended_at))
                if first_offset is None:
                    first_offset = base
                offset += 1
    return (first_offset if first_offset is not None else 0), records


def _atomic_write_json(path: Path, obj):
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


class StreamBus:
    """Single-node partitioned commit log.

    ``append`` is safe from many threads; poll/commit for one consumer
    group should come from one logical consumer per partition (static
    assignment), and different groups are fully independent.
    """

    def __init__(self, durability: str = "memory", data_dir: str | Path | None = None):
        if durability not in ("memory", "disk"):
            raise BusError(f"unknown durability mode {durability!r}")
        if durability == "disk" and data_dir is None:
            raise BusError("disk durability requires data_dir")
        self.durability = durability
        self.data_dir = Path(data_dir) if data_dir else None
        self._lock = threading.RLock()
        self._topics: dict[str, Topic] = {}
        self._partitions: dict[str, list[_Partition]] = {}
        self._writers: dict[str, list[_SegmentWriter]] = {}
        self._groups: dict[str, dict] = {}  # group -> {(topic, partition): offset}
        self._gap_counts: dict[str, int] = {}
        self._closed = False
        if self.durability == "disk":
            self._recover()

    # -- recovery ----------------------------------------------------------

    def _recover(self):
        self.data_dir.mkdir(parents=True, exist_ok=True)
        for topic_dir in sorted(self.data_dir.iterdir()):
            if not topic_dir.is_dir() or topic_dir.name == "groups":
                continue
            meta_path = topic_dir / "meta.json"
            if not meta_path.exists():
                continue
            meta = json.loads(meta_path.read_text())
            topic = Topic(meta["name"], meta["partitions"], meta["retention"])
            parts = []
            writers = []
            for k in range(topic.partitions):
                part_dir = topic_dir / f"p{k}"
                part_dir.mkdir(exist_ok=True)
                first, records = _load_segments(part_dir, k)
                wm_path = part_dir / "watermark.json"
                low = json.loads(wm_path.read_text())["low"] if wm_path.exists() else first
                part = _Partition(base_offset=first, records=deque(records))
                # apply logical eviction that outran physical pruning
                while part.base_offset < low and part.records:
                    part.records.popleft()
                    part.base_offset += 1
                if not part.records:
                    part.base_offset = max(part.base_offset, low)
                parts.append(part)
                writers.append(_SegmentWriter(part_dir))
            self._topics[topic.name] = topic
            self._partitions[topic.name] = parts
            self._writers[topic.name] = writers
        groups_dir = self.data_dir / "groups"
        if groups_dir.exists():
            for gf in groups_dir.glob("*.json"):
                raw = json.loads(gf.read_text())
                self._groups[gf.stem] = {
                    (t, int(p)): off
                    for t, offsets in raw.items()
                    for p, off in offsets.items()
                }

    # -- operations ---------------------------------------------------------

    def create_topic(self, name: str, partitions: int, retention: int) -> Topic:
        if partitions < 1:
            raise BusError("partitions must be >= 1")
        if retention <= 0:
            raise BusError("retention must be > 0")
        with self._lock:
            if name in self._topics:
                raise BusError(f"topic {name!r} already exists")
            topic = Topic(name, partitions, retention)
            self._topics[name] = topic
            self._partitions[name] = [_Partition() for _ in range(partitions)]
            if self.durability == "disk":
                topic_dir = self.data_dir / name
                topic_dir.mkdir(parents=True, exist_ok=True)
                _atomic_write_json(
                    topic_dir / "meta.json",
                    {"name": name, "partitions": partitions, "retention": retention},
                )
                self._writers[name] = [
                    _SegmentWriter(topic_dir / f"p{k}") for k in range(partitions)
                ]
            return topic

    def topic_exists(self, name: str) -> bool:
        with self._lock:
            return name in self._topics

    def _require_topic(self, name: str) -> Topic:
        topic = self._topics.get(name)
        if topic is None:
            raise BusError(f"unknown topic {name!r}")
        return topic

    def append(self, topic: str, key: bytes, payload: bytes) -> tuple[int, int]:
        """Append one record; returns (partition, offset)."""
        appended_at = now_millis()
        with self._lock:
            t = self._require_topic(topic)
            k = stable_hash(key) % t.partitions
            part = self._partitions[topic][k]
            offset = part.high_watermark
            rec = LogRecord(k, offset, key, payload, appended_at)
            part.records.append(rec)
            if self.durability == "disk":
                self._writers[topic][k].append(offset, rec, fsync=True)
            while len(part.records) > t.retention:
                part.records.popleft()
                part.base_offset += 1
                if self.durability == "disk":
                    part_dir = self.data_dir / topic / f"p{k}"
                    _atomic_write_json(part_dir / "watermark.json", {"low": part.base_offset})
                    self._writers[topic][k].prune_below(part.base_offset)
            return (k, offset)

    def poll(
        self,
        topic: str,
        group: str,
        max_records: int,
        timeout: float = 0.0,
        partitions: list[int] | None = None,
    ) -> PollResult:
        """Read up to ``max_records`` past the group's committed offsets.

        Does not advance commits; polling twice without a commit returns
        the same records. A committed offset that fell below the
        low-watermark resumes from the low-watermark and reports the gap.
        """
        deadline = time.monotonic() + timeout
        while True:
            result = self._poll_once(topic, group, max_records, partitions)
            if result.records or time.monotonic() >= deadline:
                return result
            time.sleep(0.005)

    def _poll_once(self, topic, group, max_records, partitions) -> PollResult:
        with self._lock:
            t = self._require_topic(topic)
            offsets = self._groups.setdefault(group, {})
            selected = range(t.partitions) if partitions is None else partitions
            out = []
            gap = 0
            for k in selected:
                part = self._partitions[topic][k]
                committed = offsets.get((topic, k), -1)
                start = committed + 1
                if start < part.base_offset:
                    gap += part.base_offset - start
                    start = part.base_offset
                idx = start - part.base_offset
                remaining = max_records - len(out)
                if remaining <= 0:
                    break
                for i in range(idx, min(idx + remaining, len(part.records))):
                    out.append(part.records[i])
            self._gap_counts[group] = self._gap_counts.get(group, 0) + gap
            return PollResult(records=out, gap=gap)

    def commit(self, group: str, topic: str, partition: int, offset: int):
        """Mark ``offset`` processed; subsequent polls start after it."""
        with self._lock:
            t = self._require_topic(topic)
            if not (0 <= partition < t.partitions):
                raise BusError(f"partition {partition} out of range")
            high = self._partitions[topic][partition].high_watermark
            if offset >= high:
                raise BusError(f"commit offset {offset} beyond high-watermark {high}")
            self._groups.setdefault(group, {})[(topic, partition)] = offset
            if self.durability == "disk":
                self._persist_group(group)

    def _persist_group(self, group: str):
        groups_dir = self.data_dir / "groups"
        groups_dir.mkdir(parents=True, exist_ok=True)
        by_topic: dict[str, dict] = {}
        for (t, p), off in self._groups[group].items():
            by_topic.setdefault(t, {})[str(p)] = off
        _atomic_write_json(groups_dir / f"{group}.json", by_topic)

    # -- introspection -------------------------------------------------------

    def group_state(self, group: str) -> ConsumerGroupState:
        with self._lock:
            return ConsumerGroupState(group=group, committed=dict(self._groups.get(group, {})))

    def group_gap_count(self, group: str) -> int:
        with self._lock:
            return self._gap_counts.get(group, 0)

    def high_watermark(self, topic: str, partition: int) -> int:
        with self._lock:
            return self._partitions[topic][partition].high_watermark

    def low_watermark(self, topic: str, partition: int) -> int:
        with self._lock:
            return self._partitions[topic][partition].base_offset

    def lag(self, topic: str, group: str) -> int:
        """Records appended but not yet committed by the group."""
        with self._lock:
            t = self._require_topic(topic)
            offsets = self._groups.get(group, {})
            total = 0
            for k in range(t.partitions):
                part = self._partitions[topic][k]
                committed = offsets.get((topic, k), -1)
                total += part.high_watermark - (committed + 1)
            return total

    def topics(self) -> list[Topic]:
        with self._lock:
            return list(self._topics.values())

    def close(self):
        with self._lock:
            for writers in self._writers.values():
                for w in writers:
                    w.close()
            self._closed = True
