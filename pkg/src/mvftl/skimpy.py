"""Bucket-chained store: the version index lives on flash, not in DRAM.

DRAM holds only (a) a directory of 4-byte chain heads, one per hash bucket,
and (b) a fixed-capacity LRU translation cache mapping hot keys to the
location of their newest version.  Everything else is reconstructed by
walking chains on flash: each record's ``hash_next`` points at the previous
head of its bucket (so a chain lists records newest first, mixing the keys
that collide in the bucket), and ``prior_version`` points at the key's
next-older version when the writer knew it.  A put that misses the cache
writes ``UNKNOWN_PRIOR``; the missing link is filled in when the bucket is
next swept.

Garbage collection works a whole bucket at a time.  A cycle takes the oldest
log block, decodes its records, and sweeps every bucket that owns one: the
chain is walked, the retention rule picks survivors, and survivors are
re-appended oldest-first so the rebuilt chain is dense, newest-at-head, and
fully linked (no UNKNOWN_PRIOR survives a sweep).  A bucket whose current
chain has no record inside the victim is skipped: whatever the victim holds
for it is a stale copy already unreachable.  Once every bucket owning a
victim record has been handled the block is erased.

Sweeping a bucket excludes writers to that bucket for the duration (reads
stay allowed; the old chain remains intact until the head pointer swap).
"""

from __future__ import annotations

import threading
from array import array
from collections import OrderedDict
from dataclasses import dataclass
from hashlib import blake2b

from .errors import ConfigError, CorruptionError, NotFoundError, OrderingError
from .flashsim import DeviceConfig, FlashDevice
from .layout import KEY_SIZE, NULL_LOC, UNKNOWN_PRIOR, KvRecord, loc_page
from .log import LogAllocator
from .store import (
    BUCKET_HEAD_BYTES,
    CACHE_ENTRY_BYTES,
    DEFAULT_CACHE_FRACTION,
    DEFAULT_KEYS_PER_BUCKET,
    VersionRead,
    WatermarkFn,
    check_key,
    classify_snapshot_miss,
    no_watermark,
    retained_timestamps,
)


@dataclass
class SkimpyStats:
    puts: int = 0
    gets: int = 0
    deletes: int = 0
    cache_hits: int = 0            # get-path lookups served by the cache
    cache_misses: int = 0
    put_prior_hits: int = 0        # put-path prior-version probes
    put_prior_misses: int = 0
    chain_record_reads: int = 0    # records touched while walking hash chains
    prior_hops: int = 0            # records touched following prior_version links
    gc_runs: int = 0
    gc_blocks_reclaimed: int = 0
    sweeps: int = 0
    sweep_skips: int = 0
    sweep_records_rewritten: int = 0
    corruption_errors: int = 0

    @property
    def cache_hit_rate(self) -> float:
        probes = self.cache_hits + self.cache_misses
        return self.cache_hits / probes if probes else 0.0


class TranslationCache:
    """LRU map: key -> (location word, version_ts) of the newest version.

    Capacity is fixed at construction; accounting charges 20 bytes per slot
    (4 for the location plus 16 of LRU bookkeeping) regardless of occupancy.
    Key bytes are stored but reported separately, not in the accounted figure.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError(f"cache capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._map: OrderedDict[bytes, tuple[int, int]] = OrderedDict()

    def __len__(self) -> int:
        return len(self._map)

    def lookup(self, key: bytes) -> tuple[int, int] | None:
        hit = self._map.get(key)
        if hit is not None:
            self._map.move_to_end(key)
        return hit

    def store(self, key: bytes, loc: int, version_ts: int) -> None:
        self._map[key] = (loc, version_ts)
        self._map.move_to_end(key)
        if len(self._map) > self.capacity:
            self._map.popitem(last=False)

    def refresh(self, key: bytes, loc: int, version_ts: int) -> None:
        # Relocation fix-up: update in place without rewarding recency.
        if key in self._map:
            self._map[key] = (loc, version_ts)

    def drop(self, key: bytes) -> None:
        self._map.pop(key, None)

    def memory_usage(self) -> int:
        return CACHE_ENTRY_BYTES * self.capacity

    def key_bytes(self) -> int:
        return KEY_SIZE * len(self._map)


class SkimpyStore:
    def __init__(self, device: FlashDevice | DeviceConfig, *,
                 expected_keys: int | None = None,
                 bucket_count: int | None = None,
                 keys_per_bucket: int = DEFAULT_KEYS_PER_BUCKET,
                 cache_capacity: int | None = None,
                 cache_fraction: float = DEFAULT_CACHE_FRACTION,
                 hash_seed: int = 0,
                 watermark: WatermarkFn | None = None,
                 reserve_fraction: float = 0.10,
                 pack_timeout_us: int = 1000,
                 stripe_width: int = 1,
                 sweep_prepend_limit: int | None = None,
                 verify_gc: bool = False):
        if isinstance(device, DeviceConfig):
            device = FlashDevice(device)
        self.device = device
        self.log = LogAllocator(device, reserve_fraction=reserve_fraction,
                                pack_timeout_us=pack_timeout_us,
                                stripe_width=stripe_width)
        if keys_per_bucket < 1:
            raise ConfigError(f"keys_per_bucket must be >= 1, got {keys_per_bucket}")
        if bucket_count is None:
            if expected_keys is None:
                raise ConfigError("need bucket_count or expected_keys")
            bucket_count = max(1, -(-expected_keys // keys_per_bucket))
        elif bucket_count < 1:
            raise ConfigError(f"bucket_count must be >= 1, got {bucket_count}")
        if cache_capacity is None:
            base = expected_keys if expected_keys is not None else bucket_count * keys_per_bucket
            cache_capacity = max(1, int(base * cache_fraction))
        self.bucket_count = bucket_count
        self.directory = array("I", [NULL_LOC]) * bucket_count
        self.cache = TranslationCache(cache_capacity)
        self.watermark: WatermarkFn = watermark if watermark is not None else no_watermark
        self.stats = SkimpyStats()
        self.verify_gc = verify_gc
        self._hash_key = hash_seed.to_bytes(8, "little")
        self._sweeping: set[int] = set()
        self._sweep_cv = threading.Condition()
        self._gc_active = False
        self._max_chain_hops = device.config.total_pages * self.log.chunks_per_page + 1
        # Every put prepends to its bucket's chain, so between sweeps a
        # hot bucket accumulates stale versions that every cache-miss walk
        # must wade through.  Sweeping after a bounded number of prepends
        # caps walk length at the price of some rewrite traffic.
        if sweep_prepend_limit is None:
            sweep_prepend_limit = 4 * keys_per_bucket + 8
        if sweep_prepend_limit < 1:
            raise ConfigError(
                f"sweep_prepend_limit must be >= 1, got {sweep_prepend_limit}")
        self.sweep_prepend_limit = sweep_prepend_limit
        self._prepends = array("I", [0]) * bucket_count

    # -- hashing ----------------------------------------------------------------

    def bucket_of(self, key: bytes) -> int:
        digest = blake2b(key, digest_size=8, key=self._hash_key).digest()
        return int.from_bytes(digest, "little") % self.bucket_count

    # -- write path ---------------------------------------------------------------

    def put(self, key: bytes, value: bytes, version_ts: int,
            *, tombstone: bool = False) -> int:
        check_key(key)
        self.log.tick()
        self._ensure_space()
        b = self.bucket_of(key)
        with self._sweep_cv:
            while b in self._sweeping:
                self._sweep_cv.wait()
            cached = self.cache.lookup(key)
            if cached is not None:
                prior_loc, prior_ts = cached
                if version_ts <= prior_ts:
                    raise OrderingError(
                        f"key {key!r}: version_ts {version_ts} not newer than {prior_ts}")
                prior = prior_loc
                self.stats.put_prior_hits += 1
            else:
                prior = UNKNOWN_PRIOR
                self.stats.put_prior_misses += 1
            rec = KvRecord(key=key, value=value, version_ts=version_ts,
                           prior_version=prior, hash_next=self.directory[b],
                           tombstone=tombstone)
            loc = self.log.append(rec)
            self.directory[b] = loc
            self.cache.store(key, loc, version_ts)
            self.stats.puts += 1
            self._prepends[b] += 1
        if self._prepends[b] >= self.sweep_prepend_limit:
            self.sweep_bucket(b)
        return loc

    def delete(self, key: bytes, version_ts: int) -> int:
        self.stats.deletes += 1
        return self.put(key, b"", version_ts, tombstone=True)

    # -- read path ----------------------------------------------------------------

    def _walk_to_key(self, key: bytes, page_cache: dict) -> tuple[int, KvRecord]:
        """Walk the bucket chain to the key's newest record (cache miss path)."""
        loc = self.directory[self.bucket_of(key)]
        hops = 0
        while loc != NULL_LOC:
            rec = self.log.read_record(loc, page_cache)
            self.stats.chain_record_reads += 1
            hops += 1
            if hops > self._max_chain_hops:
                raise CorruptionError(f"bucket chain for key {key!r} does not terminate")
            if rec.key == key:
                return loc, rec
            loc = rec.hash_next
        raise NotFoundError(f"key {key!r} not found")

    def _lookup_latest(self, key: bytes, page_cache: dict) -> tuple[int, KvRecord]:
        cached = self.cache.lookup(key)
        if cached is not None:
            self.stats.cache_hits += 1
            loc, ts = cached
            rec = self.log.read_record(loc, page_cache)
            if rec.key != key or rec.version_ts != ts:
                self.stats.corruption_errors += 1
                raise CorruptionError(
                    f"translation cache points at {rec.key!r}@{rec.version_ts}, "
                    f"expected {key!r}@{ts}")
            return loc, rec
        self.stats.cache_misses += 1
        loc, rec = self._walk_to_key(key, page_cache)
        self.cache.store(key, loc, rec.version_ts)
        return loc, rec

    def read_version(self, key: bytes, snapshot_ts: int | None = None) -> VersionRead:
        check_key(key)
        self.log.tick()
        self.stats.gets += 1
        page_cache: dict = {}
        loc, rec = self._lookup_latest(key, page_cache)
        if snapshot_ts is not None:
            rec = self._resolve_snapshot(key, rec, snapshot_ts, page_cache)
        if rec.tombstone:
            raise NotFoundError(f"key {key!r} deleted as of the requested snapshot")
        return VersionRead(rec.value, rec.version_ts)

    def _resolve_snapshot(self, key: bytes, rec: KvRecord, snapshot_ts: int,
                          page_cache: dict) -> KvRecord:
        hops = 0
        while rec.version_ts > snapshot_ts:
            hops += 1
            if hops > self._max_chain_hops:
                raise CorruptionError(f"version chain for key {key!r} does not terminate")
            prior = rec.prior_version
            if prior == NULL_LOC:
                raise classify_snapshot_miss(snapshot_ts, self.watermark(), key)
            if prior == UNKNOWN_PRIOR:
                # Link not recorded at write time: resume along the bucket
                # chain until the key's next-older record shows up.
                nxt = self._next_of_key_in_chain(key, rec.hash_next, page_cache)
                if nxt is None:
                    raise classify_snapshot_miss(snapshot_ts, self.watermark(), key)
                rec = nxt
                continue
            rec = self.log.read_record(prior, page_cache)
            self.stats.prior_hops += 1
            if rec.key != key:
                self.stats.corruption_errors += 1
                raise CorruptionError(
                    f"prior_version link of {key!r} reached {rec.key!r}")
        return rec

    def _next_of_key_in_chain(self, key: bytes, loc: int,
                              page_cache: dict) -> KvRecord | None:
        hops = 0
        while loc != NULL_LOC:
            rec = self.log.read_record(loc, page_cache)
            self.stats.chain_record_reads += 1
            hops += 1
            if hops > self._max_chain_hops:
                raise CorruptionError(f"bucket chain for key {key!r} does not terminate")
            if rec.key == key:
                return rec
            loc = rec.hash_next
        return None

    def get(self, key: bytes, snapshot_ts: int | None = None) -> bytes:
        return self.read_version(key, snapshot_ts).value

    def latest_version_ts(self, key: bytes) -> int | None:
        check_key(key)
        try:
            _, rec = self._lookup_latest(key, {})
        except NotFoundError:
            return None
        return rec.version_ts

    def lookup_latest(self, key: bytes) -> int:
        """Flash location of the key's newest version; fills the cache on miss."""
        check_key(key)
        loc, _ = self._lookup_latest(key, {})
        return loc

    # -- garbage collection ----------------------------------------------------------

    def gc_cycle(self) -> int:
        """Sweep every bucket owning a record in the oldest block, then erase it.

        The chains of all touched buckets are walked together: each wave
        batch-reads the next record of every unfinished chain, so the walk
        overlaps across device channels instead of paying one serial read
        latency per record.  One page cache spans the whole cycle, so chains
        re-visiting the victim block (or each other's pages) read them once.
        """
        victims = self.log.victim_candidates()
        if not victims:
            return 0
        victim = victims[0]
        wm = self.watermark()
        page_cache: dict = {}
        buckets: list[int] = []
        seen: set[int] = set()
        for _, rec in self.log.iter_block_records(victim, page_cache):
            b = self.bucket_of(rec.key)
            if b not in seen:
                seen.add(b)
                buckets.append(b)
        with self._sweep_cv:
            while any(b in self._sweeping for b in buckets):
                self._sweep_cv.wait()
            self._sweeping.update(buckets)
        try:
            chains = self._walk_chains(buckets, page_cache)
            for b in buckets:
                self._rebuild_bucket(b, chains[b], wm, victim_blocks={victim})
        finally:
            with self._sweep_cv:
                self._sweeping.difference_update(buckets)
                self._sweep_cv.notify_all()
        if self.verify_gc:
            self._assert_unreachable(victim)
        self.log.reclaim_block(victim)
        self.stats.gc_runs += 1
        self.stats.gc_blocks_reclaimed += 1
        return 1

    def gc_step(self) -> int:
        return self.gc_cycle()

    def _walk_chains(self, buckets: list[int],
                     page_cache: dict) -> dict[int, list[tuple[int, KvRecord]]]:
        """Walk several bucket chains in lockstep waves of batched reads."""
        chains: dict[int, list[tuple[int, KvRecord]]] = {b: [] for b in buckets}
        cursor: dict[int, int] = {b: self.directory[b] for b in buckets}
        active = [b for b in buckets if cursor[b] != NULL_LOC]
        while active:
            self.log.prefetch_pages((loc_page(cursor[b]) for b in active), page_cache)
            still = []
            for b in active:
                loc = cursor[b]
                rec = self.log.read_record(loc, page_cache)
                self.stats.chain_record_reads += 1
                chains[b].append((loc, rec))
                if len(chains[b]) > self._max_chain_hops:
                    raise CorruptionError(f"bucket {b} chain does not terminate")
                cursor[b] = rec.hash_next
                if rec.hash_next != NULL_LOC:
                    still.append(b)
            active = still
        return chains

    def sweep_bucket(self, b: int, victim_blocks: set[int] | None = None,
                     wm: int | None = None) -> int:
        """Rebuild bucket `b` keeping only what the retention rule retains.

        Returns the number of records rewritten.  With `victim_blocks` given,
        a chain that has no record inside those blocks is left untouched.
        """
        if b in self._sweeping:
            return 0
        if wm is None:
            wm = self.watermark()
        with self._sweep_cv:
            self._sweeping.add(b)
        try:
            page_cache: dict = {}
            chain: list[tuple[int, KvRecord]] = []
            loc = self.directory[b]
            while loc != NULL_LOC:
                rec = self.log.read_record(loc, page_cache)
                self.stats.chain_record_reads += 1
                chain.append((loc, rec))
                if len(chain) > self._max_chain_hops:
                    raise CorruptionError(f"bucket {b} chain does not terminate")
                loc = rec.hash_next
            return self._rebuild_bucket(b, chain, wm, victim_blocks)
        finally:
            with self._sweep_cv:
                self._sweeping.discard(b)
                self._sweep_cv.notify_all()

    def _rebuild_bucket(self, b: int, chain: list[tuple[int, KvRecord]], wm: int,
                        victim_blocks: set[int] | None = None) -> int:
        """Retention + re-append phase of a sweep; caller holds the sweep mark."""
        if victim_blocks is not None:
            ppb = self.device.config.pages_per_block
            touched = any(loc_page(l) // ppb in victim_blocks for l, _ in chain)
            if not touched:
                self.stats.sweep_skips += 1
                return 0
        per_key: dict[bytes, list[KvRecord]] = {}
        for _, rec in chain:
            per_key.setdefault(rec.key, []).append(rec)
        survivors: list[KvRecord] = []
        dropped_keys: list[bytes] = []
        for key, recs in per_key.items():
            keep = retained_timestamps([r.version_ts for r in recs], wm)
            kept = [r for r in recs if r.version_ts in keep]
            # A lone tombstone below the watermark shadows nothing: purge it.
            if len(kept) == 1 and kept[0].tombstone and kept[0].version_ts < wm:
                kept = []
            if kept:
                survivors.extend(kept)
            else:
                dropped_keys.append(key)
        # Re-append oldest first so the rebuilt chain ends newest-at-head.
        survivors.sort(key=lambda r: (r.version_ts, r.key))
        total_chunks = sum(r.chunk_count() for r in survivors)
        self.log.align_for(total_chunks)   # pack small chains into one page
        new_head = NULL_LOC
        newest_per_key: dict[bytes, tuple[int, int]] = {}
        for rec in survivors:
            prior = newest_per_key.get(rec.key, (NULL_LOC, 0))[0]
            nloc = self.log.append(
                KvRecord(key=rec.key, value=rec.value, version_ts=rec.version_ts,
                         prior_version=prior, hash_next=new_head,
                         tombstone=rec.tombstone),
                gc=True)
            new_head = nloc
            newest_per_key[rec.key] = (nloc, rec.version_ts)
        self.directory[b] = new_head
        self._prepends[b] = 0
        for key, (nloc, ts) in newest_per_key.items():
            self.cache.refresh(key, nloc, ts)
        for key in dropped_keys:
            self.cache.drop(key)
        self.stats.sweeps += 1
        self.stats.sweep_records_rewritten += len(survivors)
        return len(survivors)

    def sweep_all_buckets(self) -> int:
        """Run retention over every bucket; returns records rewritten."""
        moved = 0
        for b in range(self.bucket_count):
            if self.directory[b] != NULL_LOC:
                moved += self.sweep_bucket(b)
        return moved

    def repack(self) -> int:
        """Sweep every bucket, harvesting stale blocks as the pool runs low.

        Scattered chains make collection expensive: reclaiming one block
        rewrites the whole chain of every bucket it touches, which can cost
        more free space than the erase returns.  A full repack rewrites each
        chain once, dense and contiguous, after which old blocks are entirely
        unreachable and collection is cheap again.  Returns records rewritten.
        """
        moved = 0
        for b in range(self.bucket_count):
            if self.directory[b] != NULL_LOC:
                moved += self.sweep_bucket(b)
            if self.log.free_blocks <= self.log.gc_trigger_blocks:
                self.gc_cycle()
        return moved

    def _assert_unreachable(self, victim: int) -> None:
        ppb = self.device.config.pages_per_block
        page_cache: dict = {}
        for b in range(self.bucket_count):
            loc = self.directory[b]
            hops = 0
            while loc != NULL_LOC:
                if loc_page(loc) // ppb == victim:
                    raise CorruptionError(
                        f"bucket {b} still reaches block {victim} after its sweep")
                rec = self.log.read_record(loc, page_cache)
                hops += 1
                if hops > self._max_chain_hops:
                    raise CorruptionError(f"bucket {b} chain does not terminate")
                loc = rec.hash_next

    def _ensure_space(self) -> None:
        if self._gc_active:
            return
        self._gc_active = True
        try:
            stalls = 0
            while self.log.free_blocks <= self.log.gc_trigger_blocks and stalls < 4:
                before = self.log.free_blocks
                if self.gc_cycle() == 0:
                    break
                stalls = stalls + 1 if self.log.free_blocks <= before else 0
        finally:
            self._gc_active = False

    # -- inspection / reporting ---------------------------------------------------------

    def scan_bucket(self, b: int) -> list[tuple[bytes, int, int]]:
        """(key, version_ts, location) for every record reachable in bucket b."""
        out = []
        page_cache: dict = {}
        loc = self.directory[b]
        hops = 0
        while loc != NULL_LOC:
            rec = self.log.read_record(loc, page_cache)
            hops += 1
            if hops > self._max_chain_hops:
                raise CorruptionError(f"bucket {b} chain does not terminate")
            out.append((rec.key, rec.version_ts, loc))
            loc = rec.hash_next
        return out

    def reachable_versions(self) -> dict[bytes, set[int]]:
        found: dict[bytes, set[int]] = {}
        for b in range(self.bucket_count):
            for key, ts, _ in self.scan_bucket(b):
                found.setdefault(key, set()).add(ts)
        return found

    def tick(self) -> None:
        self.log.tick()

    def flush(self) -> None:
        self.log.flush()

    def memory_usage(self) -> int:
        return BUCKET_HEAD_BYTES * self.bucket_count + self.cache.memory_usage()

    def memory_report(self) -> dict:
        return {
            "accounted_bytes": self.memory_usage(),
            "directory_bytes": BUCKET_HEAD_BYTES * self.bucket_count,
            "cache_bytes": self.cache.memory_usage(),
            "bucket_count": self.bucket_count,
            "cache_capacity": self.cache.capacity,
            "key_bytes_unaccounted": self.cache.key_bytes(),
        }
