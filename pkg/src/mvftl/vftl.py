"""Stacked baseline: the full-index store running on top of a plain
page-mapped block-device FTL, with neither layer aware of the other.

The device-side FTL withholds 10% of physical capacity for itself and exports
the rest as a logical page space.  Logical writes land on a physical write
frontier and remap, invalidating the overwritten physical page; trim
invalidates without writing.  When the free pool runs low the device migrates
the surviving pages of the emptiest block to a fresh block and erases.

The host side is literally the full-index store, pointed at a facade that
answers the flash-device protocol with logical reads, writes, and (for block
erase) trims.  The host log keeps its own 10% reserve of the logical space
and runs its own cleaning, so every user write is subject to two independent
garbage collectors stacked on top of each other.  Device-level and host-level
write counters stay separately observable for exactly that reason.
"""

from __future__ import annotations

import math
import threading
from collections import deque
from dataclasses import dataclass

from .errors import (
    AddressError,
    ConfigError,
    CorruptionError,
    SequenceError,
    StoreFullError,
    WriteViolationError,
)
from .flashsim import DeviceConfig, ERASED_BYTE, FlashDevice
from .semel import SemelStore
from .store import WatermarkFn


@dataclass
class FtlStats:
    logical_writes: int = 0
    logical_reads: int = 0
    trims: int = 0
    gc_runs: int = 0
    migrated_pages: int = 0


class PageMappedFtl:
    """Standard block-device FTL: logical pages remapped onto flash with
    greedy garbage collection, oblivious to what the host stores in them."""

    GC_FREE_THRESHOLD = 2

    def __init__(self, device: FlashDevice, *, op_fraction: float = 0.10,
                 stripe_width: int = 1):
        if not 0.0 < op_fraction < 1.0:
            raise ConfigError(f"op_fraction {op_fraction} not in (0, 1)")
        if stripe_width < 1:
            raise ConfigError(f"stripe_width must be >= 1, got {stripe_width}")
        self.device = device
        cfg = device.config
        op_blocks = max(1, math.ceil(cfg.block_count * op_fraction))
        if cfg.block_count - op_blocks < 2:
            raise ConfigError("device too small to withhold over-provisioning")
        self.exported_blocks = cfg.block_count - op_blocks
        self.exported_pages = self.exported_blocks * cfg.pages_per_block
        # Host writes rotate over this many physical frontiers so consecutive
        # pages land on distinct channels.  Migration keeps one frontier: GC
        # throughput is not the bottleneck it protects.
        self.stripe_width = max(1, min(stripe_width, cfg.block_count // 4))
        self.stats = FtlStats()
        self._map: list[int | None] = [None] * self.exported_pages
        self._reverse: dict[int, int] = {}          # physical -> logical
        self._valid: dict[int, int] = {}            # block -> valid page count
        self._free: deque[int] = deque(range(cfg.block_count))
        self._written: dict[int, int] = {}          # block -> allocation sequence
        self._seq = 0
        self._host_slots: list[list] = [[None, 0] for _ in range(self.stripe_width)]
        self._host_cursor = 0
        self._gc_block: int | None = None
        self._gc_index = 0
        self._erased_page = bytes([ERASED_BYTE]) * cfg.page_size_bytes
        self._lock = threading.RLock()

    def _check_lpage(self, lpage: int) -> None:
        if not 0 <= lpage < self.exported_pages:
            raise AddressError(
                f"logical page {lpage} outside exported space ({self.exported_pages} pages)")

    def _frontier_blocks(self) -> set[int]:
        blocks = {block for block, _ in self._host_slots if block is not None}
        if self._gc_block is not None:
            blocks.add(self._gc_block)
        return blocks

    def _alloc(self, gc: bool) -> int:
        """Next physical page on the host or GC write frontier."""
        ppb = self.device.config.pages_per_block
        if gc:
            slot = [self._gc_block, self._gc_index]
        else:
            slot = self._host_slots[self._host_cursor % self.stripe_width]
            self._host_cursor += 1
        block, index = slot
        if block is None or index >= ppb:
            if not self._free:
                raise StoreFullError("device out of free blocks")
            block = self._free.popleft()
            self._seq += 1
            self._written[block] = self._seq
            self._valid.setdefault(block, 0)
            index = 0
        if gc:
            self._gc_block, self._gc_index = block, index + 1
        else:
            slot[0], slot[1] = block, index + 1
        return block * ppb + index

    def _invalidate(self, ppage: int) -> None:
        self._reverse.pop(ppage, None)
        self._valid[self.device.block_of_page(ppage)] -= 1

    def logical_write(self, lpage: int, data: bytes) -> int:
        """Remap `lpage` to a fresh physical page; returns completion µs."""
        self._check_lpage(lpage)
        with self._lock:
            self._maybe_gc()
            ppage = self._alloc(gc=False)
            end = self.device.write_page(ppage, data)
            old = self._map[lpage]
            if old is not None:
                self._invalidate(old)
            self._map[lpage] = ppage
            self._reverse[ppage] = lpage
            self._valid[self.device.block_of_page(ppage)] += 1
            self.stats.logical_writes += 1
            return end

    def logical_read(self, lpage: int) -> bytes:
        self._check_lpage(lpage)
        with self._lock:
            self.stats.logical_reads += 1
            ppage = self._map[lpage]
            if ppage is None:
                return self._erased_page
            return self.device.read_page(ppage)

    def logical_read_batch(self, lpages: list[int]) -> list[bytes]:
        for lpage in lpages:
            self._check_lpage(lpage)
        with self._lock:
            self.stats.logical_reads += len(lpages)
            phys = [self._map[lp] for lp in lpages]
            wanted = [p for p in phys if p is not None]
            bufs = iter(self.device.read_pages(wanted)) if wanted else iter(())
            return [self._erased_page if p is None else next(bufs) for p in phys]

    def logical_trim(self, lpage: int) -> None:
        self._check_lpage(lpage)
        with self._lock:
            old = self._map[lpage]
            if old is not None:
                self._invalidate(old)
                self._map[lpage] = None
            self.stats.trims += 1

    def is_mapped(self, lpage: int) -> bool:
        self._check_lpage(lpage)
        return self._map[lpage] is not None

    def valid_pages(self, block: int) -> int:
        return self._valid.get(block, 0)

    def device_gc_step(self) -> int:
        """Clean the written block with the fewest valid pages.

        Surviving pages are copied to the GC frontier and remapped, then the
        victim is erased and refreed.  Returns the number of pages migrated.
        """
        with self._lock:
            frontiers = self._frontier_blocks()
            candidates = [b for b in self._written if b not in frontiers]
            if not candidates:
                return 0
            victim = min(candidates, key=lambda b: (self._valid[b], self._written[b]))
            ppb = self.device.config.pages_per_block
            migrated = 0
            for ppage in range(victim * ppb, (victim + 1) * ppb):
                lpage = self._reverse.get(ppage)
                if lpage is None:
                    continue
                data = self.device.read_page(ppage)
                npage = self._alloc(gc=True)
                self.device.write_page(npage, data)
                del self._reverse[ppage]
                self._valid[victim] -= 1
                self._map[lpage] = npage
                self._reverse[npage] = lpage
                self._valid[self.device.block_of_page(npage)] += 1
                migrated += 1
            if self._valid.get(victim, 0) != 0:
                raise CorruptionError(f"block {victim} still counts valid pages after migration")
            del self._written[victim]
            self._valid.pop(victim, None)
            self.device.erase_block(victim)
            self._free.append(victim)
            self.stats.gc_runs += 1
            self.stats.migrated_pages += migrated
            return migrated

    def _maybe_gc(self) -> None:
        stalls = 0
        while len(self._free) <= self.GC_FREE_THRESHOLD and stalls < 4:
            before = len(self._free)
            had_victims = bool(set(self._written) - self._frontier_blocks())
            if not had_victims:
                break
            self.device_gc_step()
            stalls = stalls + 1 if len(self._free) <= before else 0


class LogicalDevice:
    """Flash-device facade over a PageMappedFtl's logical space.

    Mimics the device protocol the log allocator expects -- geometry config,
    page read/write, block erase -- so the host layer cannot tell it is not
    talking to raw flash.  "Erasing" a logical block trims its pages, which
    costs no device time; the physical erases happen later, inside the FTL's
    own garbage collection.  Program-sequence and erase-before-write rules
    are enforced here too, at logical granularity, to keep the host honest.
    """

    def __init__(self, ftl: PageMappedFtl):
        self.ftl = ftl
        phys = ftl.device.config
        self.config = DeviceConfig(
            block_count=ftl.exported_blocks,
            page_size_bytes=phys.page_size_bytes,
            pages_per_block=phys.pages_per_block,
            read_latency_us=phys.read_latency_us,
            write_latency_us=phys.write_latency_us,
            erase_latency_us=phys.erase_latency_us,
            queue_depth=phys.queue_depth,
            channel_count=phys.channel_count,
            time_mode=phys.time_mode,
        )
        self.clock = ftl.device.clock
        self._next_index = [0] * ftl.exported_blocks

    def block_of_page(self, page: int) -> int:
        return page // self.config.pages_per_block

    def is_written(self, page: int) -> bool:
        block, index = divmod(page, self.config.pages_per_block)
        return index < self._next_index[block]

    def read_page(self, page: int) -> bytes:
        return self.ftl.logical_read(page)

    def read_pages(self, pages: list[int]) -> list[bytes]:
        return self.ftl.logical_read_batch(list(pages))

    def write_page(self, page: int, data: bytes) -> int:
        block, index = divmod(page, self.config.pages_per_block)
        if index < self._next_index[block]:
            raise WriteViolationError(
                f"logical page {page} already written since last erase of block {block}")
        if index > self._next_index[block]:
            raise SequenceError(
                f"logical block {block}: page index {index} before {self._next_index[block]}")
        end = self.ftl.logical_write(page, data)
        self._next_index[block] = index + 1
        return end

    def erase_block(self, block: int) -> int:
        base = block * self.config.pages_per_block
        for lpage in range(base, base + self.config.pages_per_block):
            self.ftl.logical_trim(lpage)
        self._next_index[block] = 0
        return self.clock.now_us


class VftlStore:
    """Versioned store with the full-index host behavior over a block FTL."""

    def __init__(self, device: FlashDevice | DeviceConfig, *,
                 multi_version: bool = True,
                 watermark: WatermarkFn | None = None,
                 op_fraction: float = 0.10,
                 host_reserve_fraction: float = 0.10,
                 pack_timeout_us: int = 1000,
                 stripe_width: int = 1):
        if isinstance(device, DeviceConfig):
            device = FlashDevice(device)
        self.device = device
        self.ftl = PageMappedFtl(device, op_fraction=op_fraction,
                                 stripe_width=stripe_width)
        self.host_device = LogicalDevice(self.ftl)
        self.host = SemelStore(self.host_device,      # type: ignore[arg-type]
                               multi_version=multi_version,
                               watermark=watermark,
                               reserve_fraction=host_reserve_fraction,
                               pack_timeout_us=pack_timeout_us)

    # Host-layer interface, verbatim.

    @property
    def index(self):
        return self.host.index

    @property
    def log(self):
        return self.host.log

    @property
    def stats(self):
        return self.host.stats

    @property
    def watermark(self):
        return self.host.watermark

    @property
    def multi_version(self) -> bool:
        return self.host.multi_version

    def put(self, key: bytes, value: bytes, version_ts: int, *, tombstone: bool = False) -> int:
        return self.host.put(key, value, version_ts, tombstone=tombstone)

    def delete(self, key: bytes, version_ts: int) -> int:
        return self.host.delete(key, version_ts)

    def read_version(self, key: bytes, snapshot_ts: int | None = None):
        return self.host.read_version(key, snapshot_ts)

    def get(self, key: bytes, snapshot_ts: int | None = None) -> bytes:
        return self.host.get(key, snapshot_ts)

    def latest_version_ts(self, key: bytes) -> int | None:
        return self.host.latest_version_ts(key)

    def host_gc_step(self) -> int:
        """Clean one host-log block: rewrite retained records at the log head,
        then trim the source logical pages."""
        return self.host.gc_step()

    def gc_step(self) -> int:
        return self.host.gc_step()

    def apply_retention(self) -> int:
        return self.host.apply_retention()

    def tick(self) -> None:
        self.host.tick()

    def flush(self) -> None:
        self.host.flush()

    def memory_usage(self) -> int:
        return self.host.memory_usage()

    def memory_report(self) -> dict:
        return self.host.memory_report()

    def write_report(self) -> dict:
        """Host-level vs device-level write accounting."""
        return {
            "host_pages_written": self.host.log.stats.pages_flushed,
            "host_records_rewritten": self.host.stats.gc_records_rewritten,
            "device_pages_written": self.device.stats.page_writes,
            "device_pages_migrated": self.ftl.stats.migrated_pages,
            "device_gc_runs": self.ftl.stats.gc_runs,
            "trims": self.ftl.stats.trims,
        }
