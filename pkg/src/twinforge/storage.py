"""Embedded append-only storage primitives.

Two building blocks shared by the rest of the platform:

* a length-prefixed, CRC-checked record framing used by every on-disk log
  (bus segments, queue logs, the key-value log, time-series files), and
* ``KvLog``, a crash-recoverable key-value store backed by an append-only
  log of put/delete records, replayed into memory on open.

Record framing (see docs/bus-format.md):

    u32 big-endian payload length | u32 big-endian CRC32(payload) | payload

A torn tail (truncated or CRC-mismatching final record) is discarded on open;
everything before it is kept. Writes are flushed to the OS after each append,
which is durable against abrupt in-process "kills" (the crash model of the
bench harness) without paying for fsync on every record.
"""

from __future__ import annotations

import json
import os
import struct
import threading
import zlib
from pathlib import Path
from typing import Iterator

_HEADER = struct.Struct(">II")


def append_record(fh, payload: bytes) -> None:
    """Append one framed record and flush it to the OS."""
    fh.write(_HEADER.pack(len(payload), zlib.crc32(payload)))
    fh.write(payload)
    fh.flush()


def scan_records(path: Path) -> tuple[list[bytes], int]:
    """Read all intact records from *path*.

    Returns ``(records, valid_length)`` where ``valid_length`` is the byte
    offset of the end of the last intact record; any torn tail beyond it
    should be truncated by the writer before appending.
    """
    records: list[bytes] = []
    valid = 0
    if not path.exists():
        return records, 0
    with open(path, "rb") as fh:
        while True:
            header = fh.read(_HEADER.size)
            if len(header) < _HEADER.size:
                break
            length, crc = _HEADER.unpack(header)
            payload = fh.read(length)
            if len(payload) < length or zlib.crc32(payload) != crc:
                break
            records.append(payload)
            valid += _HEADER.size + length
    return records, valid


def iter_records(path: Path) -> Iterator[bytes]:
    records, _ = scan_records(path)
    return iter(records)


def open_for_append(path: Path, valid_length: int):
    """Open *path* for appending, truncating any torn tail first."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fh = open(path, "ab")
    if fh.tell() > valid_length:
        fh.truncate(valid_length)
        fh.seek(valid_length)
    return fh


class KvLog:
    """Durable key-value map backed by an append-only log.

    Each record is a JSON object ``{"op": "put"|"del", "k": key, "v": value}``.
    The full map is replayed into memory on open. Values are arbitrary JSON.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._data: dict[str, object] = {}
        records, valid = scan_records(self.path)
        for raw in records:
            rec = json.loads(raw.decode("utf-8"))
            if rec["op"] == "put":
                self._data[rec["k"]] = rec["v"]
            else:
                self._data.pop(rec["k"], None)
        self._fh = open_for_append(self.path, valid)
        self._closed = False

    def get(self, key: str, default=None):
        with self._lock:
            return self._data.get(key, default)

    def put(self, key: str, value) -> None:
        raw = json.dumps({"op": "put", "k": key, "v": value}).encode("utf-8")
        with self._lock:
            self._check_open()
            append_record(self._fh, raw)
            self._data[key] = value

    def delete(self, key: str) -> None:
        raw = json.dumps({"op": "del", "k": key}).encode("utf-8")
        with self._lock:
            self._check_open()
            append_record(self._fh, raw)
            self._data.pop(key, None)

    def keys(self, prefix: str = "") -> list[str]:
        with self._lock:
            return sorted(k for k in self._data if k.startswith(prefix))

    def items(self, prefix: str = "") -> list[tuple[str, object]]:
        with self._lock:
            return sorted(
                (k, v) for k, v in self._data.items() if k.startswith(prefix)
            )

    def __contains__(self, key: str) -> bool:
        with self._lock:
            return key in self._data

    def close(self) -> None:
        with self._lock:
            if not self._closed:
                self._fh.close()
                self._closed = True

    def _check_open(self) -> None:
        if self._closed:
            from .errors import Unavailable

            raise Unavailable("kv log is closed")
