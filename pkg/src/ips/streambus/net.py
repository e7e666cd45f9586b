"""Framed TCP transport for the commit log.

Frame: 4-byte big-endian body length + body. Plain mode bodies are
canonical JSON commands; with a pre-shared key the body is
``12-byte nonce || AES-256-GCM ciphertext`` of that JSON, giving
authenticated encryption between producer/engine regions.

Commands: CREATE_TOPIC, APPEND, POLL, COMMIT. Binary fields (key,
payload) travel base64.
"""

from __future__ import annotations

import base64
import json
import os
import socket
import struct
import threading

from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from ..jsonutil import canonical_json_bytes
from .core import BusError, LogRecord, PollResult, StreamBus, Topic

MAX_FRAME = 16 * 1024 * 1024


def _read_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


class _Framing:
    def __init__(self, psk: bytes | None):
        self._aead = AESGCM(psk) if psk else None

    def send(self, sock: socket.socket, obj: dict):
        body = canonical_json_bytes(obj)
        if self._aead is not None:
            nonce = os.urandom(12)
            body = nonce + self._aead.encrypt(nonce, body, b"")
        sock.sendall(struct.pack(">I", len(body)) + body)

    def recv(self, sock: socket.socket) -> dict | None:
        header = _read_exact(sock, 4)
        if header is None:
            return None
        (length,) = struct.unpack(">I", header)
        if length > MAX_FRAME:
            raise BusError(f"frame of {length} bytes exceeds limit")
        body = _read_exact(sock, length)
        if body is None:
            return None
        if self._aead is not None:
            body = self._aead.decrypt(body[:12], body[12:], b"")
        return json.loads(body.decode("utf-8"))


class BusServer:
    """Serve an embedded :class:`StreamBus` over framed TCP."""

    def __init__(self, bus: StreamBus, host: str = "127.0.0.1", port: int = 0,
                 psk: bytes | None = None):
        self.bus = bus
        self._framing = _Framing(psk)
        self._listener = socket.create_server((host, port))
        self.address = self._listener.getsockname()
        self._stop = threading.Event()
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._conn_threads: list[threading.Thread] = []

    def start(self):
        self._accept_thread.start()
        return self

    def _accept_loop(self):
        self._listener.settimeout(0.2)
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            t = threading.Thread(target=self._serve_conn, args=(conn,), daemon=True)
            t.start()
            self._conn_threads.append(t)

    def _serve_conn(self, conn: socket.socket):
        with conn:
            while not self._stop.is_set():
                try:
                    req = self._framing.recv(conn)
                except Exception:
                    break  # bad frame or failed authentication: drop the connection
                if req is None:
                    break
                self._framing.send(conn, self._dispatch(req))

    def _dispatch(self, req: dict) -> dict:
        try:
            op = req.get("op")
            if op == "CREATE_TOPIC":
                topic = self.bus.create_topic(req["name"], req["partitions"], req["retention"])
                return {"ok": True, "name": topic.name, "partitions": topic.partitions,
                        "retention": topic.retention}
            if op == "APPEND":
                partition, offset = self.bus.append(
                    req["topic"],
                    base64.b64decode(req["key"]),
                    base64.b64decode(req["payload"]),
                )
                return {"ok": True, "partition": partition, "offset": offset}
            if op == "POLL":
                result = self.bus.poll(
                    req["topic"], req["group"], req["max_records"],
                    timeout=req.get("timeout", 0.0),
                    partitions=req.get("partitions"),
                )
                return {
                    "ok": True,
                    "gap": result.gap,
                    "records": [
                        {
                            "partition": r.partition,
                            "offset": r.offset,
                            "key": base64.b64encode(r.key).decode(),
                            "payload": base64.b64encode(r.payload).decode(),
                            "appended_at": r.appended_at,
                        }
                        for r in result.records
                    ],
                }
            if op == "COMMIT":
                self.bus.commit(req["group"], req["topic"], req["partition"], req["offset"])
                return {"ok": True}
            if op == "PING":
                return {"ok": True}
            return {"ok": False, "error": f"unknown op {op!r}"}
        except BusError as exc:
            return {"ok": False, "error": str(exc)}
        except (KeyError, TypeError, ValueError) as exc:
            return {"ok": False, "error": f"malformed request: {exc}"}

    def close(self):
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass


class BusClient:
    """TCP client mirroring the embedded bus operations (duck-compatible)."""

    def __init__(self, host: str, port: int, psk: bytes | None = None,
                 connect_timeout: float = 5.0):
        self._framing = _Framing(psk)
        self._sock = socket.create_connection((host, port), timeout=connect_timeout)
        self._sock.settimeout(None)
        self._lock = threading.Lock()

    def _call(self, req: dict) -> dict:
        with self._lock:
            self._framing.send(self._sock, req)
            resp = self._framing.recv(self._sock)
        if resp is None:
            raise BusError("bus connection closed")
        if not resp.get("ok"):
            raise BusError(resp.get("error", "bus request failed"))
        return resp

    def create_topic(self, name: str, partitions: int, retention: int):
        resp = self._call(
            {"op": "CREATE_TOPIC", "name": name, "partitions": partitions,
             "retention": retention}
        )
        return Topic(resp["name"], resp["partitions"], resp["retention"])

    def append(self, topic: str, key: bytes, payload: bytes) -> tuple[int, int]:
        resp = self._call(
            {
                "op": "APPEND",
                "topic": topic,
                "key": base64.b64encode(key).decode(),
                "payload": base64.b64encode(payload).decode(),
            }
        )
        return (resp["partition"], resp["offset"])

    def poll(self, topic: str, group: str, max_records: int, timeout: float = 0.0,
             partitions: list[int] | None = None) -> PollResult:
        resp = self._call(
            {
                "op": "POLL",
                "topic": topic,
                "group": group,
                "max_records": max_records,
                "timeout": timeout,
                "partitions": partitions,
            }
        )
        records = [
            LogRecord(
                partition=r["partition"],
                offset=r["offset"],
                key=base64.b64decode(r["key"]),
                payload=base64.b64decode(r["payload"]),
                appended_at=r["appended_at"],
            )
            for r in resp["records"]
        ]
        return PollResult(records=records, gap=resp["gap"])

    def commit(self, group: str, topic: str, partition: int, offset: int):
        self._call(
            {"op": "COMMIT", "group": group, "topic": topic, "partition": partition,
             "offset": offset}
        )

    def ping(self) -> bool:
        try:
            self._call({"op": "PING"})
            return True
        except (BusError, OSError):
            return False

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass
