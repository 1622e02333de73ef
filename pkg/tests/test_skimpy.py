"""Hash-directory store: chains, translation cache, bucket sweeps."""

import pytest

from mvftl.errors import (
    ConfigError,
    NotFoundAtSnapshotError,
    NotFoundError,
    OrderingError,
    VersionRetiredError,
)
from mvftl.flashsim import DeviceConfig, FlashDevice
from mvftl.layout import NULL_LOC, UNKNOWN_PRIOR, loc_page
from mvftl.skimpy import SkimpyStore, TranslationCache

from shadow import WatermarkBox, run_oracle_sequence

A = b"A" * 16
B = b"B" * 16
C = b"C" * 16


def make_store(blocks=16, **kw) -> SkimpyStore:
    kw.setdefault("bucket_count", 8)
    dev = FlashDevice(DeviceConfig(block_count=blocks))
    return SkimpyStore(dev, **kw)


def one_bucket(blocks=16, **kw) -> SkimpyStore:
    # All keys collide, which makes chain shapes fully predictable.
    kw["bucket_count"] = 1
    return make_store(blocks, **kw)


class TestConfig:
    def test_bucket_count_from_expected_keys(self):
        s = make_store(bucket_count=None, expected_keys=100, keys_per_bucket=5)
        assert s.bucket_count == 20
        assert s.cache.capacity == 10  # default 10% of expected keys

    def test_rounding_up(self):
        s = make_store(bucket_count=None, expected_keys=101, keys_per_bucket=5)
        assert s.bucket_count == 21

    def test_needs_some_sizing(self):
        dev = FlashDevice(DeviceConfig(block_count=8))
        with pytest.raises(ConfigError):
            SkimpyStore(dev)

    def test_zero_buckets_rejected(self):
        with pytest.raises(ConfigError):
            make_store(bucket_count=0)

    def test_zero_cache_rejected(self):
        with pytest.raises(ConfigError):
            make_store(cache_capacity=0)

    def test_zero_keys_per_bucket_rejected(self):
        dev = FlashDevice(DeviceConfig(block_count=8))
        with pytest.raises(ConfigError):
            SkimpyStore(dev, expected_keys=10, keys_per_bucket=0)


class TestPut:
    def test_head_insertion(self):
        s = one_bucket()
        loc_a = s.put(A, b"va", 1)
        assert s.directory[0] == loc_a
        rec_a = s.log.read_record(loc_a)
        assert rec_a.hash_next == NULL_LOC

        loc_b = s.put(B, b"vb", 2)
        assert s.directory[0] == loc_b
        rec_b = s.log.read_record(loc_b)
        assert rec_b.hash_next == loc_a  # old head becomes the tail link

    def test_prior_from_cache(self):
        s = one_bucket(cache_capacity=8)
        loc1 = s.put(A, b"v1", 10)
        s.put(A, b"v2", 20)
        head = s.log.read_record(s.directory[0])
        assert head.prior_version == loc1
        assert s.stats.put_prior_hits == 1

    def test_prior_unknown_when_cold(self):
        s = one_bucket(cache_capacity=1)
        s.put(A, b"v1", 10)
        s.put(B, b"vb", 15)      # capacity-1 cache now remembers only B
        s.put(A, b"v2", 20)
        head = s.log.read_record(s.directory[0])
        assert head.prior_version == UNKNOWN_PRIOR
        assert s.stats.put_prior_misses >= 2  # first-ever put is also a miss

    def test_stale_timestamp_rejected(self):
        s = one_bucket(cache_capacity=8)
        s.put(A, b"v1", 10)
        with pytest.raises(OrderingError):
            s.put(A, b"v0", 10)

    def test_put_returns_readable_location(self):
        s = make_store()
        loc = s.put(A, b"hello", 7)
        rec = s.log.read_record(loc)
        assert (rec.key, rec.value, rec.version_ts) == (A, b"hello", 7)


class TestReadPath:
    def test_cache_miss_walks_chain(self):
        s = one_bucket(cache_capacity=1)
        keys = [bytes([i]) * 16 for i in range(4)]
        for i, k in enumerate(keys):
            s.put(k, b"v%d" % i, i + 1)
        # Cache only remembers the last key written; the first key now sits
        # at depth 4 of the chain.
        before = s.stats.chain_record_reads
        assert s.get(keys[0]) == b"v0"
        assert s.stats.chain_record_reads - before == 4
        assert s.stats.cache_misses >= 1

    def test_cache_hit_skips_chain(self):
        s = one_bucket(cache_capacity=1)
        keys = [bytes([i]) * 16 for i in range(4)]
        for i, k in enumerate(keys):
            s.put(k, b"v%d" % i, i + 1)
        s.get(keys[0])               # fault the entry in
        before = s.stats.chain_record_reads
        hits = s.stats.cache_hits
        assert s.get(keys[0]) == b"v0"
        assert s.stats.chain_record_reads == before
        assert s.stats.cache_hits == hits + 1

    def test_lookup_latest_location(self):
        s = make_store()
        s.put(A, b"v1", 1)
        loc2 = s.put(A, b"v2", 2)
        assert s.lookup_latest(A) == loc2

    def test_unknown_key(self):
        s = make_store()
        with pytest.raises(NotFoundError):
            s.get(A)

    def test_latest_version_ts(self):
        s = make_store()
        assert s.latest_version_ts(A) is None
        s.put(A, b"v", 33)
        assert s.latest_version_ts(A) == 33


class TestSnapshots:
    def test_snapshot_via_prior_links(self):
        s = one_bucket(cache_capacity=8)
        for ts in (10, 20, 30):
            s.put(A, b"v%d" % ts, ts)
        assert s.get(A, snapshot_ts=25) == b"v20"
        assert s.get(A, snapshot_ts=10) == b"v10"
        assert s.get(A, snapshot_ts=99) == b"v30"

    def test_snapshot_resumes_after_unknown_prior(self):
        s = one_bucket(cache_capacity=1)
        s.put(A, b"old", 10)
        s.put(B, b"vb", 15)      # evicts A from the capacity-1 cache
        s.put(A, b"new", 30)     # so this link is recorded as unknown
        assert s.log.read_record(s.directory[0]).prior_version == UNKNOWN_PRIOR
        assert s.get(A, snapshot_ts=12) == b"old"

    def test_snapshot_before_first_version(self):
        s = one_bucket()
        s.put(A, b"v", 10)
        with pytest.raises(NotFoundAtSnapshotError):
            s.get(A, snapshot_ts=5)

    def test_snapshot_below_watermark_is_retired(self):
        wm = WatermarkBox()
        s = one_bucket(watermark=wm)
        s.put(A, b"v", 50)
        wm.advance_to(40)
        with pytest.raises(VersionRetiredError):
            s.get(A, snapshot_ts=30)

    def test_tombstone_hides_key(self):
        s = one_bucket(cache_capacity=8)
        s.put(A, b"v", 10)
        s.delete(A, 20)
        with pytest.raises(NotFoundError):
            s.get(A)
        assert s.get(A, snapshot_ts=15) == b"v"


class TestSweep:
    def test_retention_example(self):
        wm = WatermarkBox()
        s = one_bucket(cache_capacity=8, watermark=wm)
        s.put(A, b"v50", 50)
        s.put(B, b"v60", 60)
        s.put(A, b"v80", 80)
        s.put(A, b"v120", 120)
        wm.advance_to(100)
        rewritten = s.sweep_bucket(0)
        assert rewritten == 3
        assert [(k, ts) for k, ts, _ in s.scan_bucket(0)] == [
            (A, 120), (A, 80), (B, 60)]
        assert s.reachable_versions() == {A: {80, 120}, B: {60}}
        assert s.get(A, snapshot_ts=90) == b"v80"
        assert s.get(A, snapshot_ts=130) == b"v120"
        assert s.get(B, snapshot_ts=70) == b"v60"
        with pytest.raises(VersionRetiredError):
            s.get(A, snapshot_ts=60)

    def test_sweep_repairs_prior_links(self):
        wm = WatermarkBox()
        s = one_bucket(cache_capacity=1, watermark=wm)
        s.put(A, b"v50", 50)
        s.put(B, b"v60", 60)
        s.put(A, b"v80", 80)     # cold cache: link recorded as unknown
        s.put(A, b"v120", 120)
        s.sweep_bucket(0)
        locs = {ts: loc for _, ts, loc in s.scan_bucket(0) if _ == A}
        head = s.log.read_record(s.directory[0])
        assert head.version_ts == 120
        assert head.prior_version == locs[80]
        assert head.prior_version not in (NULL_LOC, UNKNOWN_PRIOR)

    def test_sweep_packs_chain_into_one_page(self):
        wm = WatermarkBox()
        s = one_bucket(cache_capacity=8, watermark=wm)
        s.put(A, b"v50", 50)
        s.put(B, b"v60", 60)
        s.put(A, b"v80", 80)
        s.put(A, b"v120", 120)
        wm.advance_to(100)
        s.sweep_bucket(0)
        pages = {loc_page(loc) for _, _, loc in s.scan_bucket(0)}
        assert len(pages) == 1

    def test_sweep_skips_untouched_chain(self):
        s = one_bucket()
        s.put(A, b"v", 1)
        s.flush()
        ppb = s.device.config.pages_per_block
        used = loc_page(s.directory[0]) // ppb
        assert s.sweep_bucket(0, victim_blocks={used + 1}) == 0
        assert s.stats.sweep_skips == 1
        assert s.get(A) == b"v"

    def test_sweep_empty_store(self):
        s = make_store()
        assert s.sweep_all_buckets() == 0

    def test_lone_old_tombstone_purged(self):
        wm = WatermarkBox()
        s = one_bucket(cache_capacity=8, watermark=wm)
        s.put(A, b"v", 10)
        s.delete(A, 20)
        wm.advance_to(30)
        s.sweep_bucket(0)
        assert s.scan_bucket(0) == []
        with pytest.raises(NotFoundError):
            s.get(A)

    def test_recent_tombstone_survives(self):
        wm = WatermarkBox()
        s = one_bucket(cache_capacity=8, watermark=wm)
        s.put(A, b"v", 10)
        s.delete(A, 20)
        wm.advance_to(15)
        s.sweep_bucket(0)
        # v10 is the youngest version below the watermark and the tombstone
        # is above it, so both stay; snapshot reads at 10..14 still work.
        assert {ts for _, ts, _ in s.scan_bucket(0)} == {10, 20}
        assert s.get(A, snapshot_ts=12) == b"v"


class TestGc:
    def fill(self, s, keys, rounds, start_ts=1):
        ts = start_ts
        for _ in range(rounds):
            for i in range(keys):
                s.put(b"%016d" % i, bytes(400), ts)
                ts += 1
        return ts

    def test_cycle_reclaims_oldest_block(self):
        wm = WatermarkBox()
        s = make_store(blocks=8, bucket_count=16, cache_capacity=64,
                       watermark=wm, verify_gc=True)
        ts = self.fill(s, 120, 4)
        wm.advance_to(ts)
        s.flush()
        free_before = s.log.free_blocks
        assert s.gc_cycle() == 1
        assert s.log.free_blocks >= free_before
        assert s.stats.gc_blocks_reclaimed == 1
        for i in range(120):
            assert s.get(b"%016d" % i) == bytes(400)
        assert s.stats.corruption_errors == 0

    def test_cycle_without_victims(self):
        s = make_store()
        assert s.gc_cycle() == 0


class TestMemory:
    def test_exact_accounting(self):
        s = make_store(bucket_count=1000, cache_capacity=500)
        assert s.memory_usage() == 4 * 1000 + 20 * 500
        report = s.memory_report()
        assert report["directory_bytes"] == 4000
        assert report["cache_bytes"] == 10000

    def test_large_plan_figures(self):
        # 20M keys at 5 keys/bucket and a 10% cache: 16 MB of heads plus
        # 40 MB of cache slots.
        s = make_store(bucket_count=4_000_000, cache_capacity=2_000_000)
        assert s.memory_usage() == 16_000_000 + 40_000_000

    def test_accounting_independent_of_occupancy(self):
        s = make_store(bucket_count=100, cache_capacity=50)
        base = s.memory_usage()
        for i in range(40):
            s.put(b"%016d" % i, b"x", i + 1)
        assert s.memory_usage() == base


class TestTranslationCache:
    def test_lru_eviction(self):
        c = TranslationCache(2)
        c.store(A, 1, 10)
        c.store(B, 2, 20)
        c.lookup(A)            # A becomes most recent
        c.store(C, 3, 30)      # evicts B
        assert c.lookup(B) is None
        assert c.lookup(A) == (1, 10)
        assert c.lookup(C) == (3, 30)

    def test_refresh_does_not_promote(self):
        c = TranslationCache(2)
        c.store(A, 1, 10)
        c.store(B, 2, 20)
        c.refresh(A, 9, 10)    # fix-up only; A stays least recent
        c.store(C, 3, 30)
        assert c.lookup(A) is None
        assert c.lookup(B) == (2, 20)

    def test_refresh_ignores_absent_key(self):
        c = TranslationCache(1)
        c.refresh(A, 1, 10)
        assert c.lookup(A) is None


def test_randomized_oracle_small():
    wm = WatermarkBox()
    dev = FlashDevice(DeviceConfig(block_count=48))
    store = SkimpyStore(dev, bucket_count=16, cache_capacity=24,
                        watermark=wm, verify_gc=True)
    counts = run_oracle_sequence(
        store, keys=60, ops=4000, seed=21,
        gc_step=store.gc_cycle, watermark_box=wm)
    assert counts["put"] > 0 and counts["gc"] > 0
    assert store.stats.corruption_errors == 0


def test_randomized_chain_integrity():
    import random
    wm = WatermarkBox()
    dev = FlashDevice(DeviceConfig(block_count=32))
    s = SkimpyStore(dev, bucket_count=4, cache_capacity=8, watermark=wm,
                    verify_gc=True)
    rng = random.Random(5)
    keys = [b"%016d" % i for i in range(24)]
    latest = {}
    history = {}
    ts = 0
    for step in range(2500):
        ts += 1
        k = rng.choice(keys)
        s.put(k, b"s%d" % ts, ts)
        latest[k] = ts
        history.setdefault(k, []).append(ts)
        if step % 400 == 399:
            wm.advance_to(ts - 100)
            s.sweep_all_buckets()
    s.flush()
    for k, want in latest.items():
        assert s.get(k) == b"s%d" % want
    # Every reachable chain terminates and the newest version per key is at
    # the front of its bucket ordering.
    found = s.reachable_versions()
    for k, versions in found.items():
        assert latest[k] in versions
    assert s.stats.corruption_errors == 0
