"""Embedded partitioned commit log with consumer-group offsets.

Per-partition ordering, at-least-once delivery via explicit commits,
key-hash partition assignment, and two durability modes (in-memory and
append-only segment files). The log is embeddable in-process or served
over a framed TCP protocol (:mod:`ips.streambus.net`) so producer and
engine can run as separate processes.
"""

from .core import (
    BusError,
    ConsumerGroupState,
    LogRecord,
    PollResult,
    StreamBus,
    Topic,
    fnv1a64,
    stable_hash,
)
from .net import BusClient, BusServer

__all__ = [
    "BusClient",
    "BusError",
    "BusServer",
    "ConsumerGroupState",
    "LogRecord",
    "PollResult",
    "StreamBus",
    "Topic",
    "fnv1a64",
    "stable_hash",
]
