"""Embedded single-node append-only log broker.

Topics hold one or more partitions; each partition is an in-memory
append-only log with dense offsets and a broker-assigned append
timestamp (milliseconds on a process-wide monotonic clock). The
timestamp is taken inside the append critical section, so timestamp
order can never contradict offset order within a partition.

This is the timing substrate for the whole benchmark: execution times
are derived from the append timestamps of output-topic records, which
keeps the measurement independent of any engine's own metrics.
"""

from __future__ import annotations

import enum
import queue
import threading
import time
from array import array
from dataclasses import dataclass

_EPOCH_NS = time.monotonic_ns()


def clock_ms() -> int:
    """Milliseconds since process epoch on the monotonic clock."""
    return (time.monotonic_ns() - _EPOCH_NS) // 1_000_000


class BrokerError(Exception):
    pass


class DuplicateTopicError(BrokerError):
    pass


class UnknownTopicError(BrokerError):
    pass


class InvalidPartitionError(BrokerError):
    pass


class EmptyPartitionError(BrokerError):
    pass


class AckMode(enum.Enum):
    FIRE_AND_FORGET = "fire_and_forget"
    CONFIRMED = "confirmed"


@dataclass(frozen=True)
class LogEntry:
    offset: int
    append_ts: int
    payload: bytes


@dataclass(frozen=True)
class TopicConfig:
    name: str
    partitions: int = 1
    ack_mode: AckMode = AckMode.CONFIRMED

    def __post_init__(self):
        if not self.name:
            raise ValueError("topic name must be non-empty")
        if self.partitions < 1:
            raise ValueError("partitions must be a positive integer")


class _Partition:
    """One append-only log. Appends are serialized; reads over the
    already-appended prefix take no lock (the prefix is immutable)."""

    __slots__ = ("_lock", "_timestamps", "_payloads")

    def __init__(self):
        self._lock = threading.Lock()
        self._timestamps = array("q")
        self._payloads: list[bytes] = []

    def append(self, payload: bytes) -> tuple[int, int]:
        with self._lock:
            ts = clock_ms()
            offset = len(self._payloads)
            # timestamp first: readers key on len(_payloads), so the
            # timestamp for any visible offset is always present.
            self._timestamps.append(ts)
            self._payloads.append(payload)
            return offset, ts

    def __len__(self) -> int:
        return len(self._payloads)

    def read(self, from_offset: int, max_count: int) -> list[LogEntry]:
        if from_offset < 0:
            raise ValueError("from_offset must be non-negative")
        if max_count < 0:
            raise ValueError("max_count must be non-negative")
        end = min(from_offset + max_count, len(self._payloads))
        return [
            LogEntry(i, self._timestamps[i], self._payloads[i])
            for i in range(from_offset, end)
        ]

    def boundary_timestamps(self) -> tuple[int, int]:
        n = len(self._payloads)
        if n == 0:
            raise EmptyPartitionError("partition is empty")
        return self._timestamps[0], self._timestamps[n - 1]


class _Flush:
    def __init__(self):
        self.done = threading.Event()


class _AsyncWriter:
    """Single background writer draining fire-and-forget appends.

    One writer per topic: submissions from any one producer keep their
    relative order because the queue is FIFO and there is exactly one
    consumer."""

    def __init__(self, topic_name: str, partitions: list[_Partition]):
        self._partitions = partitions
        self._queue: queue.SimpleQueue = queue.SimpleQueue()
        self._thread = threading.Thread(
            target=self._run, name=f"minilog-writer-{topic_name}", daemon=True
        )
        self._thread.start()

    def submit(self, partition: int, payload: bytes) -> None:
        self._queue.put((partition, payload))

    def flush(self) -> None:
        marker = _Flush()
        self._queue.put(marker)
        marker.done.wait()

    def _run(self) -> None:
        while True:
            item = self._queue.get()
            if isinstance(item, _Flush):
                item.done.set()
                continue
            partition, payload = item
            self._partitions[partition].append(payload)


class Topic:
    """Handle for one topic; all log operations live here."""

    def __init__(self, config: TopicConfig):
        self.config = config
        self._partitions = [_Partition() for _ in range(config.partitions)]
        self._writer: _AsyncWriter | None = None
        self._writer_lock = threading.Lock()

    @property
    def name(self) -> str:
        return self.config.name

    def _partition(self, index: int) -> _Partition:
        if not 0 <= index < len(self._partitions):
            raise InvalidPartitionError(
                f"topic {self.name!r} has no partition {index}"
            )
        return self._partitions[index]

    def append(
        self, partition: int, payload: bytes, ack: AckMode | None = None
    ) -> tuple[int, int] | None:
        """Append a payload and return (offset, append_ts).

        In fire-and-forget mode the append is handed to a background
        writer and None is returned; the entry becomes readable once
        drained (see flush). Ordering among a single producer's appends
        is preserved in both modes.
        """
        part = self._partition(partition)
        mode = ack if ack is not None else self.config.ack_mode
        payload = bytes(payload)
        if mode is AckMode.CONFIRMED:
            return part.append(payload)
        with self._writer_lock:
            if self._writer is None:
                self._writer = _AsyncWriter(self.name, self._partitions)
        self._writer.submit(partition, payload)
        return None

    def read(self, partition: int, from_offset: int, max_count: int) -> list[LogEntry]:
        """Return entries [from_offset, from_offset+max_count) without
        blocking; empty list at end of log."""
        return self._partition(partition).read(from_offset, max_count)

    def boundary_timestamps(self, partition: int) -> tuple[int, int]:
        """(append_ts of first entry, append_ts of last entry)."""
        return self._partition(partition).boundary_timestamps()

    def high_water_mark(self, partition: int) -> int:
        return len(self._partition(partition))

    def flush(self) -> None:
        """Block until all queued fire-and-forget appends are readable."""
        if self._writer is not None:
            self._writer.flush()


class LogBroker:
    """Registry of topics; no networking, persistence, or replication."""

    def __init__(self):
        self._topics: dict[str, Topic] = {}
        self._lock = threading.Lock()

    def create_topic(self, config: TopicConfig) -> Topic:
        with self._lock:
            if config.name in self._topics:
                raise DuplicateTopicError(f"topic {config.name!r} already exists")
            topic = Topic(config)
            self._topics[config.name] = topic
            return topic

    def topic(self, name: str) -> Topic:
        try:
            return self._topics[name]
        except KeyError:
            raise UnknownTopicError(f"no topic named {name!r}") from None

    def has_topic(self, name: str) -> bool:
        return name in self._topics

    def topic_names(self) -> list[str]:
        return sorted(self._topics)
