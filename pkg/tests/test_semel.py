"""Full-DRAM-index store."""

import pytest

from mvftl.errors import (
    NotFoundAtSnapshotError,
    NotFoundError,
    OrderingError,
    VersionRetiredError,
)
from mvftl.flashsim import DeviceConfig, FlashDevice
from mvftl.semel import SemelStore
from mvftl.store import SEMEL_ENTRY_BYTES

from shadow import WatermarkBox, run_oracle_sequence

K1 = b"1" * 16
K2 = b"2" * 16


def make_store(blocks=16, **kw) -> SemelStore:
    dev = FlashDevice(DeviceConfig(block_count=blocks))
    return SemelStore(dev, **kw)


class TestPutGet:
    def test_put_then_get(self):
        s = make_store()
        s.put(K1, b"v", 10)
        assert s.get(K1) == b"v"

    def test_index_newest_first(self):
        s = make_store()
        s.put(K1, b"v1", 10)
        s.put(K1, b"v2", 20)
        assert [e.version_ts for e in s.index.versions(K1)] == [20, 10]

    def test_equal_timestamp_rejected(self):
        s = make_store()
        s.put(K1, b"v1", 10)
        with pytest.raises(OrderingError):
            s.put(K1, b"v2", 10)

    def test_unknown_key(self):
        with pytest.raises(NotFoundError):
            make_store().get(K1)

    def test_snapshot_resolution(self):
        s = make_store()
        for ts in (10, 20, 30):
            s.put(K1, b"v%d" % ts, ts)
        assert s.get(K1, 25) == b"v20"
        assert s.get(K1, 30) == b"v30"
        assert s.get(K1) == b"v30"           # no snapshot means latest

    def test_snapshot_before_first_version(self):
        s = make_store()
        s.put(K1, b"v", 10)
        with pytest.raises(NotFoundAtSnapshotError):
            s.get(K1, 5)

    def test_miss_below_watermark_is_retired(self):
        wm = WatermarkBox()
        s = make_store(watermark=wm)
        for ts in (80, 120):                 # the ts-50 version was collected
            s.put(K1, b"v%d" % ts, ts)
        wm.advance_to(100)
        with pytest.raises(VersionRetiredError):
            s.get(K1, 60)

    def test_delete_hides_key(self):
        s = make_store()
        s.put(K1, b"v", 10)
        s.delete(K1, 20)
        with pytest.raises(NotFoundError):
            s.get(K1)
        assert s.get(K1, 15) == b"v"         # older snapshot still readable


class TestSingleVersion:
    def test_only_latest_readable(self):
        s = make_store(multi_version=False)
        s.put(K1, b"v1", 10)
        s.put(K1, b"v2", 20)
        assert s.get(K1) == b"v2"
        with pytest.raises(VersionRetiredError):
            s.get(K1, 15)

    def test_index_holds_one_entry(self):
        s = make_store(multi_version=False)
        for ts in (10, 20, 30):
            s.put(K1, b"x", ts)
        assert s.index.entry_count == 1


class TestGc:
    def fill(self, s: SemelStore, n: int, start_ts: int = 1):
        for i in range(n):
            s.put(b"%016d" % i, bytes(474), start_ts + i)

    def test_retention_on_collection(self):
        wm = WatermarkBox()
        s = make_store(watermark=wm)
        for ts in (50, 80, 120):
            s.put(K1, b"v%d" % ts, ts)
        # Push enough single-version filler past block 0 that it stops being
        # the open block; FIFO then picks it as the first victim.
        for i in range(254):
            s.put(b"f%015d" % i, b"x", 200 + i)
        wm.advance_to(100)
        s.flush()
        assert s.gc_step() == 1
        assert sorted(e.version_ts for e in s.index.versions(K1)) == [80, 120]
        assert s.get(K1, 90) == b"v80"
        assert s.get(K1, 130) == b"v120"

    def test_all_versions_above_watermark_survive(self):
        wm = WatermarkBox()
        s = make_store(watermark=wm)
        for ts in (110, 120, 130):
            s.put(K1, b"v%d" % ts, ts)
        wm.advance_to(100)
        s.flush()
        while s.gc_step():
            pass
        assert [e.version_ts for e in s.index.versions(K1)] == [130, 120, 110]

    def test_gc_reclaims_overwritten_space(self):
        wm = WatermarkBox()
        s = make_store(blocks=8, watermark=wm)
        ts = 0
        for round_ in range(6):              # overwrite 200 keys repeatedly
            for i in range(200):
                ts += 1
                s.put(b"%016d" % i, bytes(474), ts)
                wm.advance_to(ts)
        assert s.stats.gc_blocks_reclaimed > 0
        for i in range(200):
            s.get(b"%016d" % i)              # everything still readable

    def test_gc_noop_without_victims(self):
        s = make_store()
        s.put(K1, b"v", 1)
        assert s.gc_step() == 0

    def test_memory_accounting(self):
        s = make_store()
        self.fill(s, 12)
        assert s.memory_usage() == 12 * SEMEL_ENTRY_BYTES
        report = s.memory_report()
        assert report["accounted_bytes"] == 12 * SEMEL_ENTRY_BYTES
        assert report["entries"] == 12


def test_randomized_oracle_small():
    wm = WatermarkBox()
    dev = FlashDevice(DeviceConfig(block_count=48))
    store = SemelStore(dev, watermark=wm)
    counts = run_oracle_sequence(
        store, keys=60, ops=4000, seed=11,
        gc_step=store.gc_step, watermark_box=wm)
    assert counts["put"] > 0 and counts["gc"] > 0


def test_randomized_oracle_single_version():
    wm = WatermarkBox()
    dev = FlashDevice(DeviceConfig(block_count=48))
    store = SemelStore(dev, multi_version=False, watermark=wm)
    run_oracle_sequence(
        store, keys=60, ops=3000, seed=12,
        gc_step=store.gc_step, watermark_box=wm, multi_version=False)
