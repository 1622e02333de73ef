"""NAND flash device emulator.

Models the constraints that shape every layer above it:

* reads and writes are whole pages; erase is a whole block;
* pages within a block must be programmed sequentially;
* a page cannot be reprogrammed until its block is erased;
* an erased page reads back as all 0xFF bytes;
* blocks are striped across independent channels (block mod channel_count),
  and operations on the same channel serialize while operations on distinct
  channels overlap.

Two time modes exist.  In ``virtual`` mode no wall time passes: each channel
keeps a ``free_at`` timestamp, reads move the shared clock forward to their
completion (the caller logically blocks on the data), while writes and erases
only occupy the channel (the caller is acknowledged at submission, the way a
queued program operation behaves).  A bounded submission queue provides
backpressure: once ``queue_depth`` operations are outstanding the submitter
waits for the oldest completion, or is rejected in non-blocking mode.  In
``realtime`` mode every operation actually sleeps for its latency while
holding its channel lock.
"""

from __future__ import annotations

import heapq
import threading
from dataclasses import dataclass, field

from .clock import RealtimeClock, VirtualClock, make_clock
from .errors import (
    AddressError,
    ConfigError,
    DeviceBusyError,
    SequenceError,
    WriteViolationError,
)

ERASED_BYTE = 0xFF

# 29 bits of page address are available to layers that pack a page id and a
# chunk offset into one 32-bit word, so a device may not expose more pages.
MAX_ADDRESSABLE_PAGES = 2 ** 29


@dataclass
class DeviceConfig:
    block_count: int
    page_size_bytes: int = 4096
    pages_per_block: int = 32
    read_latency_us: int = 50
    write_latency_us: int = 100
    erase_latency_us: int = 1000
    queue_depth: int = 128
    channel_count: int = 8
    time_mode: str = "virtual"

    def __post_init__(self):
        for name in ("block_count", "page_size_bytes", "pages_per_block",
                     "read_latency_us", "write_latency_us", "erase_latency_us",
                     "queue_depth", "channel_count"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.time_mode not in ("virtual", "realtime"):
            raise ConfigError(f"time_mode must be 'virtual' or 'realtime', got {self.time_mode!r}")
        if self.total_pages > MAX_ADDRESSABLE_PAGES:
            raise ConfigError(
                f"device exposes {self.total_pages} pages; at most {MAX_ADDRESSABLE_PAGES} are addressable")
        if self.page_size_bytes % 8 != 0:
            raise ConfigError("page_size_bytes must be a multiple of 8")

    @property
    def total_pages(self) -> int:
        return self.block_count * self.pages_per_block


@dataclass
class DeviceStats:
    page_reads: int = 0
    page_writes: int = 0
    block_erases: int = 0
    rejected_ops: int = 0
    # Completion time of the latest operation scheduled so far (microseconds).
    simulated_time_us: int = 0


@dataclass
class _BlockState:
    next_page: int = 0       # next programmable page index within the block
    erase_count: int = 0


class FlashDevice:
    def __init__(self, config: DeviceConfig, clock=None):
        self.config = config
        self.clock = clock if clock is not None else make_clock(config.time_mode)
        self.stats = DeviceStats()
        self._blocks = [_BlockState() for _ in range(config.block_count)]
        self._pages: dict[int, bytes] = {}
        self._erased_page = bytes([ERASED_BYTE]) * config.page_size_bytes
        self._channel_free = [0] * config.channel_count
        self._outstanding: list[int] = []   # completion-time heap (virtual mode)
        self._lock = threading.RLock()
        self._realtime = isinstance(self.clock, RealtimeClock) or config.time_mode == "realtime"
        if self._realtime:
            self._queue_slots = threading.BoundedSemaphore(config.queue_depth)
            self._channel_locks = [threading.Lock() for _ in range(config.channel_count)]

    # -- geometry helpers ---------------------------------------------------

    def block_of_page(self, page: int) -> int:
        return page // self.config.pages_per_block

    def channel_of_block(self, block: int) -> int:
        return block % self.config.channel_count

    def channel_of_page(self, page: int) -> int:
        return self.channel_of_block(self.block_of_page(page))

    def _check_page(self, page: int) -> None:
        if not 0 <= page < self.config.total_pages:
            raise AddressError(f"page {page} outside device ({self.config.total_pages} pages)")

    def _check_block(self, block: int) -> None:
        if not 0 <= block < self.config.block_count:
            raise AddressError(f"block {block} outside device ({self.config.block_count} blocks)")

    # -- state inspection ---------------------------------------------------

    def is_written(self, page: int) -> bool:
        self._check_page(page)
        block = self._blocks[self.block_of_page(page)]
        return page % self.config.pages_per_block < block.next_page

    def next_program_index(self, block: int) -> int:
        self._check_block(block)
        return self._blocks[block].next_page

    def erase_count(self, block: int) -> int:
        self._check_block(block)
        return self._blocks[block].erase_count

    # -- timing core --------------------------------------------------------

    def _schedule(self, channel: int, latency_us: int, sync: bool, blocking: bool) -> int:
        """Occupy `channel` for `latency_us`; returns the completion time."""
        if self._realtime:
            if not self._queue_slots.acquire(blocking=blocking):
                self.stats.rejected_ops += 1
                raise DeviceBusyError("device queue full")
            try:
                with self._channel_locks[channel]:
                    self.clock.advance(latency_us)
            finally:
                self._queue_slots.release()
            self.stats.simulated_time_us = max(self.stats.simulated_time_us, self.clock.now_us)
            return self.clock.now_us

        now = self.clock.now_us
        while self._outstanding and self._outstanding[0] <= now:
            heapq.heappop(self._outstanding)
        if len(self._outstanding) >= self.config.queue_depth:
            if not blocking:
                self.stats.rejected_ops += 1
                raise DeviceBusyError("device queue full")
            # Submitter stalls until the oldest outstanding op completes.
            now = self.clock.wait_until(self._outstanding[0])
            while self._outstanding and self._outstanding[0] <= now:
                heapq.heappop(self._outstanding)
        start = max(now, self._channel_free[channel])
        end = start + latency_us
        self._channel_free[channel] = end
        heapq.heappush(self._outstanding, end)
        self.stats.simulated_time_us = max(self.stats.simulated_time_us, end)
        if sync:
            self.clock.wait_until(end)
        return end

    # -- operations ---------------------------------------------------------

    def read_page(self, page: int, *, blocking: bool = True) -> bytes:
        self._check_page(page)
        with self._lock:
            self._schedule(self.channel_of_page(page), self.config.read_latency_us,
                           sync=True, blocking=blocking)
            self.stats.page_reads += 1
            return self._pages.get(page, self._erased_page)

    def read_pages(self, pages: list[int], *, blocking: bool = True) -> list[bytes]:
        """Read a batch of pages, overlapping across channels.

        The batch is dispatched in order; reads on distinct channels proceed
        in parallel and the caller blocks until the last one completes, so a
        burst of N scattered reads costs about N/channel_count read latencies
        instead of N.  Same-channel reads still serialize.
        """
        for page in pages:
            self._check_page(page)
        with self._lock:
            if self._realtime:
                return [self.read_page(p, blocking=blocking) for p in pages]
            last_end = self.clock.now_us
            for page in pages:
                end = self._schedule(self.channel_of_page(page), self.config.read_latency_us,
                                     sync=False, blocking=blocking)
                last_end = max(last_end, end)
                self.stats.page_reads += 1
            if pages:
                self.clock.wait_until(last_end)
            return [self._pages.get(p, self._erased_page) for p in pages]

    def write_page(self, page: int, data: bytes, *, blocking: bool = True) -> int:
        """Program a page; returns the operation's completion time (µs)."""
        self._check_page(page)
        if len(data) != self.config.page_size_bytes:
            raise AddressError(
                f"write_page wants exactly {self.config.page_size_bytes} bytes, got {len(data)}")
        with self._lock:
            block_id = self.block_of_page(page)
            block = self._blocks[block_id]
            index = page % self.config.pages_per_block
            if index < block.next_page:
                raise WriteViolationError(
                    f"page {page} already programmed since last erase of block {block_id}")
            if index > block.next_page:
                raise SequenceError(
                    f"block {block_id}: page index {index} programmed before index {block.next_page}")
            end = self._schedule(self.channel_of_block(block_id), self.config.write_latency_us,
                                 sync=self._realtime, blocking=blocking)
            block.next_page = index + 1
            self._pages[page] = bytes(data)
            self.stats.page_writes += 1
            return end

    def erase_block(self, block: int, *, blocking: bool = True) -> int:
        """Erase a block; returns the operation's completion time (µs)."""
        self._check_block(block)
        with self._lock:
            end = self._schedule(self.channel_of_block(block), self.config.erase_latency_us,
                                 sync=self._realtime, blocking=blocking)
            state = self._blocks[block]
            state.next_page = 0
            state.erase_count += 1
            base = block * self.config.pages_per_block
            for p in range(base, base + self.config.pages_per_block):
                self._pages.pop(p, None)
            self.stats.block_erases += 1
            return end
