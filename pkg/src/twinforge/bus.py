"""Durable in-process pub-sub substrate: topics and queues.

Topics are single-partition append-only logs with strictly increasing,
contiguous offsets, persisted as CRC-framed segment files (rolled by size)
and served from an in-memory mirror. Consumer groups commit offsets to a
key-value log, so consumption resumes where it left off after a restart.

Queues are durable FIFOs with acknowledgement: a message leaves the queue
only once acked; un-acked messages (consumer failure, restart) are
redelivered in enqueue order. At-least-once, like an AMQP broker.

The on-disk formats are documented bit-exactly in docs/bus-format.md.
"""

from __future__ import annotations

import base64
import heapq
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import quote, unquote

from .errors import Unavailable
from .storage import KvLog, append_record, open_for_append, scan_records

DEFAULT_SEGMENT_BYTES = 4 * 1024 * 1024


@dataclass
class Message:
    offset: int
    timestamp_ns: int
    headers: dict[str, str]
    payload: bytes

    def to_record(self) -> bytes:
        return json.dumps(
            {
                "ts": self.timestamp_ns,
                "h": self.headers,
                "p": base64.b64encode(self.payload).decode("ascii"),
            }
        ).encode("utf-8")

    @classmethod
    def from_record(cls, offset: int, raw: bytes) -> "Message":
        data = json.loads(raw.decode("utf-8"))
        return cls(
            offset=offset,
            timestamp_ns=data["ts"],
            headers=data.get("h", {}),
            payload=base64.b64decode(data["p"]),
        )


class _TopicLog:
    """One topic: segment files on disk plus an in-memory mirror."""

    def __init__(self, directory: Path, segment_bytes: int):
        self.directory = directory
        self.segment_bytes = segment_bytes
        self.lock = threading.Lock()
        self.changed = threading.Condition(self.lock)
        self.messages: list[Message] = []
        self._fh = None
        self._segment_path: Path | None = None
        self._segment_size = 0
        self._load()

    def _load(self) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        segments = sorted(self.directory.glob("*.log"), key=lambda p: int(p.stem))
        offset = 0
        last_valid = 0
        for seg in segments:
            base = int(seg.stem)
            assert base == offset, f"segment gap in {self.directory}"
            records, valid = scan_records(seg)
            for raw in records:
                self.messages.append(Message.from_record(offset, raw))
                offset += 1
            last_valid = valid
        if segments:
            self._segment_path = segments[-1]
            self._segment_size = last_valid
            self._fh = open_for_append(self._segment_path, last_valid)
        else:
            self._roll(0)

    def _roll(self, base_offset: int) -> None:
        if self._fh is not None:
            self._fh.close()
        self._segment_path = self.directory / f"{base_offset:016d}.log"
        self._fh = open_for_append(self._segment_path, 0)
        self._segment_size = 0

    def append(self, headers: dict[str, str], payload: bytes) -> int:
        with self.lock:
            offset = len(self.messages)
            msg = Message(offset, time.time_ns(), dict(headers), payload)
            raw = msg.to_record()
            if self._segment_size + len(raw) > self.segment_bytes and self._segment_size:
                self._roll(offset)
            append_record(self._fh, raw)
            self._segment_size += 8 + len(raw)
            self.messages.append(msg)
            self.changed.notify_all()
            return offset

    def read(self, offset: int, max_n: int, timeout: float) -> list[Message]:
        deadline = time.monotonic() + timeout
        with self.lock:
            while len(self.messages) <= offset:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return []
                self.changed.wait(remaining)
            return list(self.messages[offset : offset + max_n])

    def end_offset(self) -> int:
        with self.lock:
            return len(self.messages)

    def close(self) -> None:
        with self.lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None
            self.changed.notify_all()


class AckHandle:
    """Ownership of one in-flight queue message until acked or released."""

    def __init__(self, queue: "_Queue", offset: int):
        self._queue = queue
        self.offset = offset
        self.done = False

    def ack(self) -> None:
        if not self.done:
            self._queue.ack(self.offset)
            self.done = True

    def release(self) -> None:
        """Return the message to the queue for redelivery."""
        if not self.done:
            self._queue.release(self.offset)
            self.done = True


class _Queue:
    """Durable FIFO with acknowledgement, backed by a data log + ack log."""

    def __init__(self, directory: Path):
        self.directory = directory
        self.lock = threading.Lock()
        self.changed = threading.Condition(self.lock)
        self.messages: dict[int, Message] = {}
        self.acked: set[int] = set()
        self.pending: list[int] = []
        self.in_flight: set[int] = set()
        directory.mkdir(parents=True, exist_ok=True)
        data_records, data_valid = scan_records(directory / "data.log")
        for i, raw in enumerate(data_records):
            self.messages[i] = Message.from_record(i, raw)
        ack_records, ack_valid = scan_records(directory / "acks.log")
        for raw in ack_records:
            self.acked.add(int(raw))
        self.pending = sorted(set(self.messages) - self.acked)
        heapq.heapify(self.pending)
        self._data_fh = open_for_append(directory / "data.log", data_valid)
        self._ack_fh = open_for_append(directory / "acks.log", ack_valid)

    def enqueue(self, headers: dict[str, str], payload: bytes) -> int:
        with self.lock:
            offset = len(self.messages)
            msg = Message(offset, time.time_ns(), dict(headers), payload)
            append_record(self._data_fh, msg.to_record())
            self.messages[offset] = msg
            heapq.heappush(self.pending, offset)
            self.changed.notify_all()
            return offset

    def dequeue(self, timeout: float) -> tuple[Message, AckHandle] | None:
        deadline = time.monotonic() + timeout
        with self.lock:
            while not self.pending:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                self.changed.wait(remaining)
            offset = heapq.heappop(self.pending)
            self.in_flight.add(offset)
            return self.messages[offset], AckHandle(self, offset)

    def ack(self, offset: int) -> None:
        with self.lock:
            append_record(self._ack_fh, str(offset).encode("ascii"))
            self.acked.add(offset)
            self.in_flight.discard(offset)

    def release(self, offset: int) -> None:
        with self.lock:
            if offset in self.in_flight:
                self.in_flight.discard(offset)
                heapq.heappush(self.pending, offset)
                self.changed.notify_all()

    def depth(self) -> int:
        with self.lock:
            return len(self.pending) + len(self.in_flight)

    def close(self) -> None:
        with self.lock:
            self._data_fh.close()
            self._ack_fh.close()
            self.changed.notify_all()


class Consumer:
    """Offset-committing reader of one topic for one group."""

    def __init__(self, bus: "Bus", topic: str, group: str, start: int | None):
        self.bus = bus
        self.topic = topic
        self.group = group
        committed = bus.committed_offset(topic, group)
        self.position = committed if committed is not None else (start or 0)

    def poll(self, timeout: float = 0.0, max_n: int = 1) -> list[Message]:
        msgs = self.bus.read(self.topic, self.position, max_n=max_n, timeout=timeout)
        if msgs:
            self.position = msgs[-1].offset + 1
        return msgs

    def poll_one(self, timeout: float = 0.0) -> Message | None:
        msgs = self.poll(timeout=timeout, max_n=1)
        return msgs[0] if msgs else None

    def commit(self, offset: int) -> None:
        """Mark everything up to and including *offset* consumed."""
        self.bus.commit_offset(self.topic, self.group, offset + 1)

    def seek_to_committed(self) -> None:
        committed = self.bus.committed_offset(self.topic, self.group)
        if committed is not None:
            self.position = committed


class Bus:
    """Named durable topics and queues under one data directory."""

    def __init__(self, data_dir: str | Path, segment_bytes: int = DEFAULT_SEGMENT_BYTES):
        self.data_dir = Path(data_dir)
        self.segment_bytes = segment_bytes
        self._lock = threading.Lock()
        self._topics: dict[str, _TopicLog] = {}
        self._queues: dict[str, _Queue] = {}
        self._crashed = False
        (self.data_dir / "topics").mkdir(parents=True, exist_ok=True)
        (self.data_dir / "queues").mkdir(parents=True, exist_ok=True)
        self._offsets = KvLog(self.data_dir / "offsets.log")
        for entry in (self.data_dir / "topics").iterdir():
            if entry.is_dir():
                name = unquote(entry.name)
                self._topics[name] = _TopicLog(entry, segment_bytes)
        for entry in (self.data_dir / "queues").iterdir():
            if entry.is_dir():
                self._queues[unquote(entry.name)] = _Queue(entry)

    # -- lifecycle -----------------------------------------------------------

    def crash(self) -> None:
        """Abruptly drop all in-memory state, as if the process died."""
        with self._lock:
            self._crashed = True
            for topic in self._topics.values():
                topic.close()
            for queue in self._queues.values():
                queue.close()
            self._offsets.close()
            self._topics.clear()
            self._queues.clear()

    def restart(self) -> None:
        with self._lock:
            if not self._crashed:
                return
            self._offsets = KvLog(self.data_dir / "offsets.log")
            for entry in (self.data_dir / "topics").iterdir():
                if entry.is_dir():
                    self._topics[unquote(entry.name)] = _TopicLog(entry, self.segment_bytes)
            for entry in (self.data_dir / "queues").iterdir():
                if entry.is_dir():
                    self._queues[unquote(entry.name)] = _Queue(entry)
            self._crashed = False

    def close(self) -> None:
        self.crash()

    def _check(self) -> None:
        if self._crashed:
            raise Unavailable("bus is down")

    # -- topics ---------------------------------------------------------------

    def _topic(self, name: str, create: bool = True) -> _TopicLog:
        with self._lock:
            self._check()
            log = self._topics.get(name)
            if log is None:
                if not create:
                    raise Unavailable(f"unknown topic {name!r}")
                log = _TopicLog(self.data_dir / "topics" / quote(name, safe=""), self.segment_bytes)
                self._topics[name] = log
            return log

    def create_topic(self, name: str) -> None:
        self._topic(name)

    def topics(self) -> list[str]:
        with self._lock:
            self._check()
            return sorted(self._topics)

    def publish(self, topic: str, headers: dict[str, str], payload: bytes) -> int:
        """Append durably; the offset is on disk before this returns."""
        log = self._topic(topic)
        try:
            return log.append(headers, payload)
        except ValueError as exc:  # write on closed file: crashed mid-call
            raise Unavailable("bus crashed during publish") from exc

    def read(self, topic: str, offset: int, max_n: int = 1, timeout: float = 0.0) -> list[Message]:
        return self._topic(topic).read(offset, max_n, timeout)

    def end_offset(self, topic: str) -> int:
        return self._topic(topic).end_offset()

    def consumer(self, topic: str, group: str, start: int | None = None) -> Consumer:
        self._check()
        return Consumer(self, topic, group, start)

    def committed_offset(self, topic: str, group: str) -> int | None:
        self._check()
        return self._offsets.get(f"{topic}\x00{group}")

    def commit_offset(self, topic: str, group: str, next_offset: int) -> None:
        self._check()
        self._offsets.put(f"{topic}\x00{group}", next_offset)

    # -- queues ---------------------------------------------------------------

    def _queue(self, name: str) -> _Queue:
        with self._lock:
            self._check()
            queue = self._queues.get(name)
            if queue is None:
                queue = _Queue(self.data_dir / "queues" / quote(name, safe=""))
                self._queues[name] = queue
            return queue

    def create_queue(self, name: str) -> None:
        self._queue(name)

    def queues(self) -> list[str]:
        with self._lock:
            self._check()
            return sorted(self._queues)

    def enqueue(self, queue: str, payload: bytes, headers: dict[str, str] | None = None) -> int:
        q = self._queue(queue)
        try:
            return q.enqueue(headers or {}, payload)
        except ValueError as exc:
            raise Unavailable("bus crashed during enqueue") from exc

    def dequeue_ack(self, queue: str, timeout: float = 0.0) -> tuple[Message, AckHandle] | None:
        return self._queue(queue).dequeue(timeout)

    def queue_depth(self, queue: str) -> int:
        return self._queue(queue).depth()
