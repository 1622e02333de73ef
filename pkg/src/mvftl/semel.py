"""Full-index store: every version of every key has a DRAM index entry.

The index maps each key to a newest-first list of (version_ts, location)
entries, so any snapshot read costs exactly one flash record read.  The price
is DRAM proportional to everything the flash can hold (20 accounted bytes per
version entry).

Garbage collection consumes the oldest log block: records still referenced by
the index are either re-appended at the log head (if the retention rule keeps
them) or dropped from the index (making the flash copy garbage); records no
longer referenced are skipped.  Afterwards the block is erased and returned
to the free pool.

``multi_version=False`` turns this into the single-version baseline used for
abort-rate comparisons: a put truncates the key's version list, so snapshot
reads older than the newest version fail with version-retired while flash
behavior stays identical.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import CorruptionError, NotFoundError, OrderingError
from .flashsim import DeviceConfig, FlashDevice
from .layout import NULL_LOC, KvRecord
from .log import LogAllocator
from .store import (
    VersionIndex,
    VersionRead,
    WatermarkFn,
    check_key,
    no_watermark,
    retained_timestamps,
)


@dataclass
class SemelStats:
    puts: int = 0
    gets: int = 0
    deletes: int = 0
    gc_runs: int = 0
    gc_records_rewritten: int = 0
    gc_blocks_reclaimed: int = 0
    corruption_errors: int = 0


class SemelStore:
    def __init__(self, device: FlashDevice | DeviceConfig, *,
                 multi_version: bool = True,
                 watermark: WatermarkFn | None = None,
                 reserve_fraction: float = 0.10,
                 pack_timeout_us: int = 1000,
                 stripe_width: int = 1):
        if isinstance(device, DeviceConfig):
            device = FlashDevice(device)
        self.device = device
        self.log = LogAllocator(device, reserve_fraction=reserve_fraction,
                                pack_timeout_us=pack_timeout_us,
                                stripe_width=stripe_width)
        self.index = VersionIndex(multi_version=multi_version)
        self.watermark: WatermarkFn = watermark if watermark is not None else no_watermark
        self.multi_version = multi_version
        self.stats = SemelStats()
        self._gc_active = False

    # -- write path -----------------------------------------------------------

    def put(self, key: bytes, value: bytes, version_ts: int,
            *, tombstone: bool = False) -> int:
        check_key(key)
        self.log.tick()
        latest = self.index.latest(key)
        if latest is not None and latest.version_ts >= version_ts:
            raise OrderingError(
                f"key {key!r}: version_ts {version_ts} not newer than {latest.version_ts}")
        self._ensure_space()
        prior = latest.location if latest is not None else NULL_LOC
        rec = KvRecord(key=key, value=value, version_ts=version_ts,
                       prior_version=prior, hash_next=NULL_LOC, tombstone=tombstone)
        loc = self.log.append(rec)
        self.index.insert(key, version_ts, loc)
        self.stats.puts += 1
        return loc

    def delete(self, key: bytes, version_ts: int) -> int:
        self.stats.deletes += 1
        return self.put(key, b"", version_ts, tombstone=True)

    # -- read path ------------------------------------------------------------

    def read_version(self, key: bytes, snapshot_ts: int | None = None) -> VersionRead:
        check_key(key)
        self.log.tick()
        self.stats.gets += 1
        snap = snapshot_ts if snapshot_ts is not None else 2 ** 63
        entry = self.index.resolve(key, snap, self.watermark())
        rec = self.log.read_record(entry.location)
        if rec.key != key or rec.version_ts != entry.version_ts:
            self.stats.corruption_errors += 1
            raise CorruptionError(
                f"index points at {rec.key!r}@{rec.version_ts}, expected "
                f"{key!r}@{entry.version_ts}")
        if rec.tombstone:
            raise NotFoundError(f"key {key!r} deleted as of snapshot {snap}")
        return VersionRead(rec.value, rec.version_ts)

    def get(self, key: bytes, snapshot_ts: int | None = None) -> bytes:
        return self.read_version(key, snapshot_ts).value

    def latest_version_ts(self, key: bytes) -> int | None:
        entry = self.index.latest(key)
        return entry.version_ts if entry is not None else None

    # -- garbage collection -----------------------------------------------------

    def gc_step(self) -> int:
        """Reclaim the oldest log block; returns blocks reclaimed (0 or 1)."""
        victims = self.log.victim_candidates()
        if not victims:
            return 0
        victim = victims[0]
        wm = self.watermark()
        keep_cache: dict[bytes, set[int]] = {}
        for loc, rec in self.log.iter_block_records(victim):
            entries = self.index.versions(rec.key)
            live = any(e.version_ts == rec.version_ts and e.location == loc
                       for e in entries)
            if not live:
                continue    # superseded copy or already-discarded version
            keep = keep_cache.get(rec.key)
            if keep is None:
                keep = retained_timestamps([e.version_ts for e in entries], wm)
                keep_cache[rec.key] = keep
            if rec.version_ts in keep:
                self._relocate(loc, rec)
            else:
                self.index.remove_version(rec.key, rec.version_ts)
        self.log.reclaim_block(victim)
        self.stats.gc_runs += 1
        self.stats.gc_blocks_reclaimed += 1
        return 1

    def _relocate(self, old_loc: int, rec: KvRecord) -> None:
        entries = self.index.versions(rec.key)
        prior = NULL_LOC
        for i, e in enumerate(entries):
            if e.version_ts == rec.version_ts:
                if i + 1 < len(entries):
                    prior = entries[i + 1].location
                new_loc = self.log.append(
                    KvRecord(key=rec.key, value=rec.value, version_ts=rec.version_ts,
                             prior_version=prior, hash_next=NULL_LOC,
                             tombstone=rec.tombstone),
                    gc=True)
                e.location = new_loc
                self.stats.gc_records_rewritten += 1
                return

    def apply_retention(self) -> int:
        """Prune index entries the retention rule discards, across all keys."""
        wm = self.watermark()
        dropped = 0
        for key in list(self.index.keys()):
            dropped += self.index.prune_to_retained(key, wm)
        return dropped

    def _ensure_space(self) -> None:
        if self._gc_active:
            return
        self._gc_active = True
        try:
            stalls = 0
            while self.log.free_blocks <= self.log.gc_trigger_blocks and stalls < 4:
                before = self.log.free_blocks
                if self.gc_step() == 0:
                    break
                stalls = stalls + 1 if self.log.free_blocks <= before else 0
        finally:
            self._gc_active = False

    # -- maintenance / reporting --------------------------------------------------

    def tick(self) -> None:
        self.log.tick()

    def flush(self) -> None:
        self.log.flush()

    def memory_usage(self) -> int:
        return self.index.memory_usage()

    def memory_report(self) -> dict:
        return {
            "accounted_bytes": self.index.memory_usage(),
            "entries": self.index.entry_count,
            "key_bytes_unaccounted": self.index.key_bytes(),
        }
