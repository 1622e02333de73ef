"""Log-structured page allocation shared by every store flavor.

Appended records are packed into an open page buffer and the buffer is
flushed to flash when it fills, or when the oldest buffered record has waited
``pack_timeout_us`` (a flush deadline checked on the next operation or an
explicit ``tick``).  Records buffered in the open page are readable before
the flush happens.

Blocks are consumed from a free pool in FIFO order; fully written blocks form
the log in allocation order, and victims for garbage collection are offered
oldest first.  A caller-facing reserve keeps ``reserve_fraction`` of blocks
free: ordinary appends may not dip into the reserve (StoreFullError tells the
store to reclaim space first), while GC appends may, down to the last block.

Erasing is guarded by per-block reader pins: ``reclaim_block`` on a pinned
block defers the physical erase until the last reader unpins.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from collections import deque

from .errors import AddressError, ConfigError, RecordTooLargeError, StoreFullError
from .flashsim import FlashDevice
from .layout import (
    CHUNK_SIZE,
    KvRecord,
    decode_location,
    decode_record,
    encode_location,
    encode_record,
    MAX_PAGE,
    RECORD_MAGIC,
)


@dataclass
class LogStats:
    records_appended: int = 0
    gc_records_appended: int = 0
    pages_flushed: int = 0
    flushes_on_timeout: int = 0
    records_read: int = 0


class LogAllocator:
    def __init__(self, device: FlashDevice, *, reserve_fraction: float = 0.10,
                 pack_timeout_us: int = 1000, stripe_width: int = 1):
        cfg = device.config
        if cfg.page_size_bytes % CHUNK_SIZE != 0 or cfg.page_size_bytes // CHUNK_SIZE > 8:
            raise ConfigError("page size must be 1..8 chunks of 512 bytes")
        if cfg.total_pages > MAX_PAGE + 1:
            raise ConfigError("device too large for the 29-bit page address space")
        if not 0.0 <= reserve_fraction < 1.0:
            raise ConfigError(f"reserve_fraction {reserve_fraction} not in [0, 1)")
        if stripe_width < 1:
            raise ConfigError(f"stripe_width must be >= 1, got {stripe_width}")
        self.device = device
        self.clock = device.clock
        self.chunks_per_page = cfg.page_size_bytes // CHUNK_SIZE
        self.pack_timeout_us = pack_timeout_us
        self.reserve_blocks = max(1, math.ceil(cfg.block_count * reserve_fraction))
        # Consecutive pages rotate over this many open blocks; with one open
        # block per channel, temporally adjacent writes (hot keys, say) land
        # on distinct channels instead of piling onto one.  Capped so small
        # devices are not mostly open blocks.
        self.stripe_width = max(1, min(stripe_width, cfg.block_count // 4))
        self.stats = LogStats()

        self._free: deque[int] = deque(range(cfg.block_count))
        self._written: dict[int, int] = {}       # block -> allocation sequence
        self._seq = 0
        # One (block, next page index) frontier per stripe slot.
        self._slots: list[list] = [[None, 0] for _ in range(self.stripe_width)]
        self._cursor = 0
        self._open_slot: int | None = None
        self._open_page: int | None = None
        self._buf: bytearray | None = None
        self._buf_chunks = 0
        self._deadline_us: int | None = None
        self._pins: dict[int, int] = {}
        self._deferred_erase: set[int] = set()
        # (page, completion time) per flush; drivers that ack writes on
        # durability drain this every operation.  Bounded so an undrained
        # queue cannot grow without limit.
        self._flush_completions: deque[tuple[int, int]] = deque(maxlen=1 << 16)
        self._lock = threading.RLock()

    @property
    def _open_blocks(self) -> set[int]:
        return {block for block, _ in self._slots if block is not None}

    # -- capacity -----------------------------------------------------------

    @property
    def free_blocks(self) -> int:
        return len(self._free)

    @property
    def gc_trigger_blocks(self) -> int:
        # Stores start reclaiming a little before the reserve floor bites.
        return self.reserve_blocks + 2

    def victim_candidates(self) -> list[int]:
        """Fully written blocks, oldest allocation first."""
        with self._lock:
            open_blocks = self._open_blocks
            return sorted((b for b in self._written if b not in open_blocks),
                          key=self._written.__getitem__)

    # -- append path ----------------------------------------------------------

    def append(self, rec: KvRecord, *, gc: bool = False) -> int:
        """Buffer `rec` for packing; returns its location word immediately."""
        with self._lock:
            data = encode_record(rec)
            nchunks = len(data) // CHUNK_SIZE
            if nchunks > self.chunks_per_page:
                raise RecordTooLargeError(
                    f"record of {rec.encoded_size()} bytes exceeds one page")
            if self._buf is not None and self._buf_chunks + nchunks > self.chunks_per_page:
                self._flush_open_page()
            if self._buf is None:
                self._open_new_page(gc=gc)
            chunk_index = self._buf_chunks
            off = chunk_index * CHUNK_SIZE
            self._buf[off:off + len(data)] = data
            self._buf_chunks += nchunks
            loc = encode_location(self._open_page, chunk_index)
            if self._deadline_us is None:
                self._deadline_us = self.clock.now_us + self.pack_timeout_us
            self.stats.records_appended += 1
            if gc:
                self.stats.gc_records_appended += 1
            if self._buf_chunks == self.chunks_per_page:
                self._flush_open_page()
            return loc

    def align_for(self, nchunks: int) -> None:
        """Flush the open page unless `nchunks` more chunks fit in it.

        Lets a caller about to append a small batch keep the batch within a
        single page, so later walks over those records cost one device read.
        """
        with self._lock:
            if nchunks > self.chunks_per_page:
                return
            if self._buf is not None and self._buf_chunks > 0 \
                    and self._buf_chunks + nchunks > self.chunks_per_page:
                self._flush_open_page()

    def tick(self) -> None:
        """Flush the open page if its pack deadline has passed."""
        with self._lock:
            if self._buf is not None and self._deadline_us is not None \
                    and self.clock.now_us >= self._deadline_us:
                self.stats.flushes_on_timeout += 1
                self._flush_open_page()

    def flush(self) -> None:
        with self._lock:
            if self._buf is not None and self._buf_chunks > 0:
                self._flush_open_page()

    def _open_new_page(self, *, gc: bool) -> None:
        ppb = self.device.config.pages_per_block
        slot_index = self._cursor % self.stripe_width
        self._cursor += 1
        slot = self._slots[slot_index]
        if slot[0] is None or slot[1] >= ppb:
            if not self._free:
                raise StoreFullError("no free blocks left")
            if not gc and len(self._free) <= self.reserve_blocks:
                raise StoreFullError(
                    f"free pool at reserve floor ({len(self._free)} blocks); reclaim first")
            block = self._free.popleft()
            self._seq += 1
            self._written[block] = self._seq
            slot[0] = block
            slot[1] = 0
        self._open_slot = slot_index
        self._open_page = slot[0] * ppb + slot[1]
        self._buf = bytearray(self.device.config.page_size_bytes)
        self._buf_chunks = 0
        self._deadline_us = None

    def _flush_open_page(self) -> None:
        if self._buf is None:
            return
        end = self.device.write_page(self._open_page, bytes(self._buf))
        self._flush_completions.append((self._open_page, end))
        self.stats.pages_flushed += 1
        self._slots[self._open_slot][1] += 1
        self._open_slot = None
        self._open_page = None
        self._buf = None
        self._buf_chunks = 0
        self._deadline_us = None

    @property
    def pending_page(self) -> int | None:
        """Page number of the open buffer if it holds records, else None."""
        with self._lock:
            if self._buf is not None and self._buf_chunks > 0:
                return self._open_page
            return None

    @property
    def deadline_us(self) -> int | None:
        return self._deadline_us

    def drain_flush_completions(self) -> list[tuple[int, int]]:
        """Return and clear (page, completion µs) tuples for recent flushes."""
        with self._lock:
            out = list(self._flush_completions)
            self._flush_completions.clear()
            return out

    # -- read path ------------------------------------------------------------

    def read_record(self, loc_word: int, page_cache: dict | None = None) -> KvRecord:
        """Fetch and decode the record at `loc_word`.

        `page_cache` is an optional per-operation dict (page id -> bytes): a
        chain walk that hops between records packed into the same page pays
        for a single device read.
        """
        page, chunk = decode_location(loc_word)
        with self._lock:
            if self._buf is not None and page == self._open_page:
                buf = self._buf
            elif page_cache is not None and page in page_cache:
                buf = page_cache[page]
            else:
                block = self.device.block_of_page(page)
                with self.read_guard(block):
                    buf = self.device.read_page(page)
                if page_cache is not None:
                    page_cache[page] = buf
            self.stats.records_read += 1
            return decode_record(buf, chunk * CHUNK_SIZE)

    def prefetch_pages(self, pages, page_cache: dict) -> None:
        """Batch-read `pages` into `page_cache`, overlapping channels.

        Pages already cached, unwritten, or sitting in the open buffer are
        skipped; ``read_record`` serves those paths itself.
        """
        wanted: list[int] = []
        seen: set[int] = set()
        with self._lock:
            for page in pages:
                if page in page_cache or page in seen or page == self._open_page:
                    continue
                if not self.device.is_written(page):
                    continue
                seen.add(page)
                wanted.append(page)
            if not wanted:
                return
            blocks = {self.device.block_of_page(p) for p in wanted}
            for blk in blocks:
                self.pin_block(blk)
            try:
                bufs = self.device.read_pages(wanted)
            finally:
                for blk in blocks:
                    self.unpin_block(blk)
            for page, buf in zip(wanted, bufs):
                page_cache[page] = buf

    def iter_block_records(self, block: int,
                           page_cache: dict | None = None) -> list[tuple[int, KvRecord]]:
        """Decode every record stored in `block` as (location word, record)."""
        cfg = self.device.config
        if not 0 <= block < cfg.block_count:
            raise AddressError(f"block {block} out of range")
        out: list[tuple[int, KvRecord]] = []
        base = block * cfg.pages_per_block
        with self.read_guard(block):
            for page in range(base, base + cfg.pages_per_block):
                if not self.device.is_written(page):
                    continue
                if page_cache is not None and page in page_cache:
                    buf = page_cache[page]
                else:
                    buf = self.device.read_page(page)
                    if page_cache is not None:
                        page_cache[page] = buf
                chunk = 0
                while chunk < self.chunks_per_page:
                    off = chunk * CHUNK_SIZE
                    if buf[off] != RECORD_MAGIC:
                        chunk += 1          # padding or unused tail
                        continue
                    rec = decode_record(buf, off)
                    out.append((encode_location(page, chunk), rec))
                    chunk += rec.chunk_count()
        return out

    # -- reclamation ------------------------------------------------------------

    def pin_block(self, block: int) -> None:
        with self._lock:
            self._pins[block] = self._pins.get(block, 0) + 1

    def unpin_block(self, block: int) -> None:
        with self._lock:
            n = self._pins.get(block, 0) - 1
            if n < 0:
                raise AddressError(f"unpin of block {block} without matching pin")
            if n == 0:
                del self._pins[block]
                if block in self._deferred_erase:
                    self._deferred_erase.discard(block)
                    self._erase_now(block)
            else:
                self._pins[block] = n

    @contextmanager
    def read_guard(self, block: int):
        self.pin_block(block)
        try:
            yield
        finally:
            self.unpin_block(block)

    def reclaim_block(self, block: int) -> bool:
        """Retire a fully written block; erase immediately or once readers drain.

        Returns True if the erase happened now, False if it was deferred.
        """
        with self._lock:
            if block in self._open_blocks:
                raise AddressError("cannot reclaim an open log-head block")
            if block not in self._written:
                raise AddressError(f"block {block} is not part of the log")
            del self._written[block]
            if self._pins.get(block, 0) > 0:
                self._deferred_erase.add(block)
                return False
            self._erase_now(block)
            return True

    def _erase_now(self, block: int) -> None:
        self.device.erase_block(block)
        self._free.append(block)

    @property
    def pending_erases(self) -> int:
        return len(self._deferred_erase)
