"""Shared store machinery: snapshot semantics, retention, DRAM version index.

Version visibility.  A snapshot read at timestamp S resolves to the youngest
version with version_ts <= S.  When no such version can be found the outcome
depends on where S sits relative to the retention watermark W: at S >= W the
store is obliged to retain whatever would serve the read, so the miss means
the key truly had no version at S (not-found-at-snapshot); at S < W the
version that would have served may legally have been discarded, so the miss
reports version-retired.  Every store flavor classifies misses through the
same helper so that identical workloads produce identical outcomes.

Retention rule.  Given a watermark W, the retained versions of a key are all
versions with version_ts >= W plus the single youngest version with
version_ts < W.  W is fed by the transaction layer (minimum of client
acknowledgements) or by the benchmark driver, and must never move backwards.

Accounted memory.  Comparisons between store flavors use fixed per-entry
accounting: 20 bytes per DRAM version entry (4 location + 8 timestamp +
8 prior pointer), 4 bytes per hash-bucket head, 20 bytes per translation
cache entry (4 location + 16 LRU bookkeeping).  Key bytes held by Python
dicts are deliberately excluded from the accounted figures and reported
separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

from .errors import (
    MvftlError,
    NotFoundAtSnapshotError,
    NotFoundError,
    OrderingError,
    VersionRetiredError,
)
from .layout import KEY_SIZE

SEMEL_ENTRY_BYTES = 20
BUCKET_HEAD_BYTES = 4
CACHE_ENTRY_BYTES = 20
DEFAULT_KEYS_PER_BUCKET = 5
DEFAULT_CACHE_FRACTION = 0.10

WatermarkFn = Callable[[], int]


def no_watermark() -> int:
    return 0


class VersionRead(NamedTuple):
    value: bytes
    version_ts: int


def check_key(key: bytes) -> None:
    if not isinstance(key, (bytes, bytearray)) or len(key) != KEY_SIZE:
        raise MvftlError(f"keys are {KEY_SIZE}-byte strings, got {key!r}")


def retained_timestamps(version_ts_list, watermark: int) -> set[int]:
    """Apply the retention rule to one key's version timestamps."""
    keep = {ts for ts in version_ts_list if ts >= watermark}
    below = [ts for ts in version_ts_list if ts < watermark]
    if below:
        keep.add(max(below))
    return keep


def classify_snapshot_miss(snapshot_ts: int, watermark: int, key: bytes):
    """Exception for a snapshot read that found only newer versions."""
    if snapshot_ts < watermark:
        return VersionRetiredError(
            f"key {key!r}: version serving snapshot {snapshot_ts} is below the "
            f"retention watermark {watermark}")
    return NotFoundAtSnapshotError(
        f"key {key!r} has no version at snapshot {snapshot_ts}")


@dataclass
class IndexEntry:
    version_ts: int
    location: int


class VersionIndex:
    """DRAM-resident index: key -> newest-first list of version entries.

    Used directly by the full-index store and by the host layer of the
    stacked baseline.  In single-version mode an insert truncates the list,
    so only the newest version stays readable; flash contents are unchanged.
    """

    def __init__(self, *, multi_version: bool = True):
        self.multi_version = multi_version
        self._map: dict[bytes, list[IndexEntry]] = {}
        self.entry_count = 0

    def __contains__(self, key: bytes) -> bool:
        return key in self._map

    def keys(self):
        return self._map.keys()

    def versions(self, key: bytes) -> list[IndexEntry]:
        return self._map.get(key, [])

    def insert(self, key: bytes, version_ts: int, location: int) -> None:
        entries = self._map.get(key)
        if entries is None:
            self._map[key] = [IndexEntry(version_ts, location)]
            self.entry_count += 1
            return
        if entries and entries[0].version_ts >= version_ts:
            raise OrderingError(
                f"key {key!r}: version_ts {version_ts} not newer than "
                f"{entries[0].version_ts}")
        if self.multi_version:
            entries.insert(0, IndexEntry(version_ts, location))
            self.entry_count += 1
        else:
            entries[0] = IndexEntry(version_ts, location)

    def resolve(self, key: bytes, snapshot_ts: int, watermark: int) -> IndexEntry:
        entries = self._map.get(key)
        if not entries:
            raise NotFoundError(f"key {key!r} not found")
        for e in entries:
            if e.version_ts <= snapshot_ts:
                return e
        if not self.multi_version:
            # The overwritten history is gone by construction.
            raise VersionRetiredError(
                f"key {key!r}: snapshot {snapshot_ts} predates the only retained "
                f"version ({entries[0].version_ts})")
        raise classify_snapshot_miss(snapshot_ts, watermark, key)

    def latest(self, key: bytes) -> IndexEntry | None:
        entries = self._map.get(key)
        return entries[0] if entries else None

    def remove_version(self, key: bytes, version_ts: int) -> None:
        entries = self._map.get(key)
        if not entries:
            return
        for i, e in enumerate(entries):
            if e.version_ts == version_ts:
                del entries[i]
                self.entry_count -= 1
                break
        if not entries:
            del self._map[key]

    def prune_to_retained(self, key: bytes, watermark: int) -> int:
        """Drop entries the retention rule discards; returns how many."""
        entries = self._map.get(key)
        if not entries:
            return 0
        keep = retained_timestamps([e.version_ts for e in entries], watermark)
        kept = [e for e in entries if e.version_ts in keep]
        dropped = len(entries) - len(kept)
        if dropped:
            if kept:
                self._map[key] = kept
            else:
                del self._map[key]
            self.entry_count -= dropped
        return dropped

    def memory_usage(self) -> int:
        return SEMEL_ENTRY_BYTES * self.entry_count

    def key_bytes(self) -> int:
        return KEY_SIZE * len(self._map)


def index_memory_plan(key_count: int, capacity_records: int, *,
                      keys_per_bucket: int = DEFAULT_KEYS_PER_BUCKET,
                      cache_fraction: float = DEFAULT_CACHE_FRACTION) -> dict:
    """Accounted-memory arithmetic for sizing the two index designs.

    The full index is sized for the device: one 20-byte entry per record the
    flash can hold.  The bucket-chain index needs one 4-byte head per bucket
    (key_count / keys_per_bucket buckets) plus a 20-byte translation cache
    entry per cached key (cache_fraction of the key population).
    """
    buckets = math.ceil(key_count / keys_per_bucket)
    cache_entries = int(key_count * cache_fraction)
    semel_bytes = capacity_records * SEMEL_ENTRY_BYTES
    directory = buckets * BUCKET_HEAD_BYTES
    cache = cache_entries * CACHE_ENTRY_BYTES
    return {
        "bucket_count": buckets,
        "cache_entries": cache_entries,
        "semel_bytes": semel_bytes,
        "skimpy_directory_bytes": directory,
        "skimpy_cache_bytes": cache,
        "skimpy_bytes": directory + cache,
        "ratio": (directory + cache) / semel_bytes if semel_bytes else float("inf"),
    }
