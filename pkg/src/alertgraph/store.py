"""Durable store for committed correlations, used for cross-batch dedup.

Layout is a single append-only journal of length-prefixed JSON frames:

    [4-byte length][payload JSON, UTF-8][4-byte CRC32 of payload]

The first frame is a header; batches append a batch_start frame, one record
frame per correlation, and a batch_commit frame. Records are visible to
dedup only once their commit frame is on disk, so a crash mid-commit leaves
the batch invisible and a rerun commits it cleanly. Opening for write
recovers to the last committed frame and compacts away any torn tail.

A single writer holds an advisory lock; read-only opens skip the lock and
never modify the file.
"""

from __future__ import annotations

import fcntl
import json
import os
import struct
import zlib
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Callable, Iterable

from .correlator import Correlation
from .errors import CorruptStore, StoreUnavailable
from .telemetry import format_timestamp, parse_timestamp

STORE_VERSION = 1
DEFAULT_RETENTION = timedelta(hours=72)

_LEN = struct.Struct(">I")


@dataclass(frozen=True, slots=True)
class CommitReceipt:
    batch_id: str
    record_count: int
    already_committed: bool = False


@dataclass(slots=True)
class _Batch:
    batch_id: str
    records: list[dict]


def _encode_frame(payload: dict) -> bytes:
    body = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _LEN.pack(len(body)) + body + _LEN.pack(zlib.crc32(body))


def _scan_frames(data: bytes):
    """Yield payload dicts until the data ends or a frame fails to parse.

    Returns via StopIteration value whether the tail was clean; callers use
    the generator protocol through _parse_journal instead.
    """
    offset = 0
    total = len(data)
    while offset < total:
        if offset + 4 > total:
            return offset, False
        (length,) = _LEN.unpack_from(data, offset)
        end = offset + 4 + length + 4
        if length > total or end > total:
            return offset, False
        body = data[offset + 4 : offset + 4 + length]
        (crc,) = _LEN.unpack_from(data, offset + 4 + length)
        if zlib.crc32(body) != crc:
            return offset, False
        try:
            payload = json.loads(body)
        except ValueError:
            return offset, False
        if not isinstance(payload, dict):
            return offset, False
        yield payload
        offset = end
    return offset, True


class CorrelationStore:
    """Committed correlation records keyed by (org_id, alert_a, alert_b)."""

    def __init__(self, path: str, read_only: bool = False):
        self.path = os.fspath(path)
        self.read_only = read_only
        self._lock_handle = None
        self._handle = None
        self._pairs: dict[tuple[str, str, str], dict] = {}
        self._batches: list[_Batch] = []
        self._committed_ids: dict[str, int] = {}
        # Test seam: called with a progress event name after every partial
        # write during commit; raising here models a crash at that point.
        self._fault_hook: Callable[[str], None] | None = None

        if not read_only:
            self._acquire_lock()
        try:
            dirty = self._load()
            if not read_only:
                if dirty or not os.path.exists(self.path):
                    self._rewrite()
                self._handle = open(self.path, "ab")
        except BaseException:
            self._release_lock()
            raise

    # -- lifecycle ---------------------------------------------------------

    def _acquire_lock(self) -> None:
        lock_path = self.path + ".lock"
        handle = open(lock_path, "a")
        try:
            fcntl.flock(handle.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            handle.close()
            raise StoreUnavailable(f"store {self.path} is locked by another writer") from None
        self._lock_handle = handle

    def _release_lock(self) -> None:
        if self._lock_handle is not None:
            fcntl.flock(self._lock_handle.fileno(), fcntl.LOCK_UN)
            self._lock_handle.close()
            self._lock_handle = None

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None
        self._release_lock()

    def __enter__(self) -> "CorrelationStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- journal -----------------------------------------------------------

    def _load(self) -> bool:
        """Parse the journal into committed state; True if a rewrite is needed."""
        if not os.path.exists(self.path):
            return False
        with open(self.path, "rb") as handle:
            data = handle.read()
        if not data:
            return True
        frames = []
        gen = _scan_frames(data)
        clean_tail = True
        consumed = 0
        while True:
            try:
                frames.append(next(gen))
            except StopIteration as stop:
                consumed, clean_tail = stop.value
                break
        if not frames or frames[0].get("type") != "header" or frames[0].get("version") != STORE_VERSION:
            raise CorruptStore(f"{self.path} does not start with a valid store header")

        pending: dict[str, list[dict]] = {}
        dirty = not clean_tail or consumed != len(data)
        for payload in frames[1:]:
            kind = payload.get("type")
            if kind == "batch_start":
                pending[payload["batch_id"]] = []
            elif kind == "record":
                batch = pending.get(payload["batch_id"])
                if batch is None:
                    dirty = True
                    continue
                batch.append(payload)
            elif kind == "batch_commit":
                batch_id = payload["batch_id"]
                records = pending.pop(batch_id, None)
                if records is None or batch_id in self._committed_ids:
                    dirty = True
                    continue
                self._committed_ids[batch_id] = len(records)
                self._batches.append(_Batch(batch_id, records))
                for record in records:
                    key = (record["org_id"], record["alert_a"], record["alert_b"])
                    self._pairs.setdefault(key, record)
            else:
                dirty = True
        if pending:
            dirty = True
        return dirty

    def _write_frame(self, payload: dict, label: str) -> None:
        frame = _encode_frame(payload)
        handle = self._handle
        hook = self._fault_hook
        if hook is None:
            handle.write(frame)
            return
        # Split the frame into its wire pieces so a hook-induced crash can
        # leave any torn prefix on disk.
        pieces = (frame[:4], frame[4:-4], frame[-4:])
        for piece, part in zip(pieces, ("len", "payload", "crc")):
            handle.write(piece)
            handle.flush()
            hook(f"{label}:{part}")

    def _rewrite(self) -> None:
        """Write the canonical journal for the current committed state."""
        tmp = self.path + ".tmp"
        with open(tmp, "wb") as handle:
            handle.write(_encode_frame({"type": "header", "version": STORE_VERSION}))
            for batch in self._batches:
                handle.write(_encode_frame({"type": "batch_start", "batch_id": batch.batch_id}))
                for record in batch.records:
                    handle.write(_encode_frame(record))
                handle.write(
                    _encode_frame(
                        {
                            "type": "batch_commit",
                            "batch_id": batch.batch_id,
                            "record_count": len(batch.records),
                        }
                    )
                )
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, self.path)

    # -- queries -----------------------------------------------------------

    def has_pair(self, org_id: str, alert_a: str, alert_b: str) -> bool:
        if alert_a > alert_b:
            alert_a, alert_b = alert_b, alert_a
        return (org_id, alert_a, alert_b) in self._pairs

    def pair_count(self) -> int:
        return len(self._pairs)

    def committed_batches(self) -> list[str]:
        return [batch.batch_id for batch in self._batches]

    def records(self) -> list[dict]:
        out = []
        for batch in self._batches:
            out.extend(batch.records)
        out.sort(key=lambda r: (r["org_id"], r["alert_a"], r["alert_b"]))
        return out

    # -- mutation ----------------------------------------------------------

    def commit_batch(
        self, batch_id: str, finals: Iterable[Correlation], now: datetime
    ) -> CommitReceipt:
        """Append and commit a batch; committing the same batch_id again is a no-op."""
        if self.read_only:
            raise StoreUnavailable("store opened read-only")
        if batch_id in self._committed_ids:
            return CommitReceipt(batch_id, self._committed_ids[batch_id], already_committed=True)

        linked_at = format_timestamp(now)
        records = []
        for c in sorted(finals, key=Correlation.sort_key):
            records.append(
                {
                    "type": "record",
                    "batch_id": batch_id,
                    "org_id": c.org_id,
                    "alert_a": c.alert_a,
                    "alert_b": c.alert_b,
                    "entity_type": str(c.entity_type),
                    "entity_value": c.entity_value,
                    "priority": c.priority,
                    "linked_at": linked_at,
                }
            )

        hook = self._fault_hook
        if hook is not None:
            hook("commit:begin")
        self._write_frame({"type": "batch_start", "batch_id": batch_id}, "batch_start")
        for i, record in enumerate(records):
            self._write_frame(record, f"record[{i}]")
        self._write_frame(
            {"type": "batch_commit", "batch_id": batch_id, "record_count": len(records)},
            "batch_commit",
        )
        self._handle.flush()
        os.fsync(self._handle.fileno())
        if hook is not None:
            hook("commit:fsync")

        self._committed_ids[batch_id] = len(records)
        self._batches.append(_Batch(batch_id, records))
        for record in records:
            key = (record["org_id"], record["alert_a"], record["alert_b"])
            self._pairs.setdefault(key, record)
        return CommitReceipt(batch_id, len(records))

    def compact(self, now: datetime, retention: timedelta = DEFAULT_RETENTION) -> int:
        """Drop records older than the retention horizon and rewrite the journal.

        Commit markers survive even when all their records age out, so
        re-committing an old batch stays a no-op. Returns dropped count.
        """
        if self.read_only:
            raise StoreUnavailable("store opened read-only")
        horizon = now - retention
        dropped = 0
        for batch in self._batches:
            keep = []
            for record in batch.records:
                if parse_timestamp(record["linked_at"]) >= horizon:
                    keep.append(record)
                else:
                    dropped += 1
            batch.records = keep
            self._committed_ids[batch.batch_id] = len(keep)
        if dropped:
            self._pairs = {}
            for batch in self._batches:
                for record in batch.records:
                    key = (record["org_id"], record["alert_a"], record["alert_b"])
                    self._pairs.setdefault(key, record)
        if self._handle is not None:
            self._handle.close()
        self._rewrite()
        self._handle = open(self.path, "ab")
        return dropped


def open_store(path, read_only: bool = False) -> CorrelationStore:
    """Open (creating if needed) the correlation store at ``path``."""
    return CorrelationStore(path, read_only=read_only)
