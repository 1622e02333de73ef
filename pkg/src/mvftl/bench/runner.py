"""Benchmark drivers.

Both drivers are deterministic event loops over the device's virtual clock:
each worker carries its own notion of "now", the loop always runs the
earliest worker, and the shared clock is rewound to that worker's time before
it issues an operation.  Concurrency (channel overlap, queue backpressure,
GC stalls landing on whoever triggered them) then falls out of the device
model instead of thread scheduling, and identical seeds replay identical
runs.  With a realtime clock the same loop degrades gracefully: set_now
becomes a sleep and operations take wall time.

The KV driver is closed-loop (each of N clients issues its next operation as
soon as the previous one finishes).  A get completes when the record read
returns; a put completes when the flash page holding its record is written,
so a put that lands in the packing buffer parks its client until the page
fills or the pack timeout flushes it.

The transaction driver is open-loop: arrivals are scheduled at a fixed rate
regardless of completions, so offered load beyond capacity shows up as
queueing delay and a latency knee rather than a throughput plateau alone.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, KeyError_, MvftlError, TxnAborted
from ..flashsim import DeviceConfig, FlashDevice
from ..layout import loc_page, record_chunks
from ..semel import SemelStore
from ..skimpy import SkimpyStore
from ..store import no_watermark
from ..txn import TransactionManager
from ..vftl import VftlStore
from .workload import KvOpStream, KvSpec, TxnSpec, TxnStream, key_of

STORE_KINDS = ("semel", "skimpy", "vftl")

# Desk-scale sizing keeps live data at roughly a third of device capacity,
# the same fullness ratio the full-scale configuration uses.
DEFAULT_LIVE_FRACTION = 1.0 / 3.0


def default_device_blocks(keys: int, value_size: int,
                          live_fraction: float = DEFAULT_LIVE_FRACTION,
                          pages_per_block: int = 32,
                          chunks_per_page: int = 8) -> int:
    """Blocks needed so one version of every key fills `live_fraction`."""
    live_pages = math.ceil(keys * record_chunks(value_size) / chunks_per_page)
    blocks = math.ceil(live_pages / (live_fraction * pages_per_block))
    return max(blocks, 16)


class VersionCounter:
    """Monotonic version-timestamp source for the non-transactional driver.

    Doubles as the store's watermark: with the watermark pinned to the newest
    issued timestamp, retention keeps exactly the youngest version of each
    key, which is the plain upsert behavior the KV benchmark wants.
    """

    def __init__(self):
        self.current = 0

    def next(self) -> int:
        self.current += 1
        return self.current

    def watermark(self) -> int:
        return self.current


class WatermarkHolder:
    """Late-bound watermark function, so a store can be built before the
    transaction layer that supplies its watermark exists."""

    def __init__(self):
        self.fn = no_watermark

    def __call__(self) -> int:
        return self.fn()


@dataclass
class BenchSetup:
    store: object
    device: FlashDevice
    kind: str
    counter: VersionCounter
    watermark_holder: WatermarkHolder | None = None
    bucket_count: int | None = None
    cache_pct: float | None = None


def build_store(kind: str, *, keys: int, value_size: int = 474,
                device_blocks: int | None = None,
                channels: int = 8, queue_depth: int = 128,
                time_mode: str = "virtual",
                multi_version: bool = True,
                keys_per_bucket: int = 5,
                cache_fraction: float = 0.10,
                watermark_mode: str = "kv",
                pack_timeout_us: int = 1000) -> BenchSetup:
    """Construct a store of the given kind on a fresh emulated device.

    ``watermark_mode``: "kv" pins the watermark to the newest written
    version (upsert retention); "txn" leaves a holder to be wired to a
    transaction manager; "none" retains everything.
    """
    if kind not in STORE_KINDS:
        raise ConfigError(f"unknown store kind {kind!r}")
    if device_blocks is None:
        device_blocks = default_device_blocks(keys, value_size)
    config = DeviceConfig(block_count=device_blocks, channel_count=channels,
                          queue_depth=queue_depth, time_mode=time_mode)
    device = FlashDevice(config)
    counter = VersionCounter()
    holder: WatermarkHolder | None = None
    if watermark_mode == "kv":
        watermark = counter.watermark
    elif watermark_mode == "txn":
        # Until a transaction manager takes over, retention follows the
        # load counter so preconditioning behaves like a plain upsert store.
        holder = WatermarkHolder()
        holder.fn = counter.watermark
        watermark = holder
    elif watermark_mode == "none":
        watermark = no_watermark
    else:
        raise ConfigError(f"unknown watermark_mode {watermark_mode!r}")

    bucket_count = None
    cache_pct = None
    stripe = device.config.channel_count
    if kind == "semel":
        store = SemelStore(device, multi_version=multi_version, watermark=watermark,
                           pack_timeout_us=pack_timeout_us, stripe_width=stripe)
    elif kind == "skimpy":
        if not multi_version:
            raise ConfigError("single-version mode is only available on semel and vftl")
        store = SkimpyStore(device, expected_keys=keys,
                            keys_per_bucket=keys_per_bucket,
                            cache_fraction=cache_fraction,
                            watermark=watermark,
                            pack_timeout_us=pack_timeout_us,
                            stripe_width=stripe)
        bucket_count = store.bucket_count
        cache_pct = 100.0 * cache_fraction
    else:
        store = VftlStore(device, multi_version=multi_version, watermark=watermark,
                          pack_timeout_us=pack_timeout_us, stripe_width=stripe)
    return BenchSetup(store=store, device=device, kind=kind, counter=counter,
                      watermark_holder=holder, bucket_count=bucket_count,
                      cache_pct=cache_pct)


def precondition(setup: BenchSetup, spec, rng: np.random.Generator, *,
                 min_reclaims: int = 8, max_extra_factor: int = 12) -> None:
    """Bring a fresh store to its write steady state before measurement.

    Loads every key once, then churns with the workload's key skew while
    collecting in the background, until the free pool hovers at the
    collector's trigger and reclaims are routine.  A long-running store under
    write traffic lives in exactly that regime, so measurement windows taken
    from it carry realistic garbage-collection and chain-layout costs.

    Version timestamps during the load phase are assigned by key rank, not
    by write order, so two stores preconditioned for the same spec hold
    identical logical states regardless of their placement choices.
    """
    store = setup.store
    counter = setup.counter
    value = bytes(spec.value_size)
    ranks = range(spec.keys)
    if hasattr(store, "bucket_of"):
        # Group the load by bucket: chains start dense, the way any bulk
        # load into a hash-chained store would lay them out.
        ranks = sorted(ranks, key=lambda r: store.bucket_of(key_of(r)))
    for rank in ranks:
        store.put(key_of(rank), value, rank + 1)
    counter.current = max(counter.current, spec.keys)
    alpha = getattr(spec, "zipf_alpha", None)
    if alpha is None:
        alpha = getattr(spec, "alpha_rw", 0.99)
    from .workload import ZipfGenerator
    zipf = ZipfGenerator(spec.keys, alpha, rng)
    # Enough writes to sink a fresh device to its collection trigger and
    # cycle a while there, whichever of key count and device size dominates.
    slots_per_pass = (setup.device.config.total_pages
                      * setup.store.log.chunks_per_page
                      // record_chunks(spec.value_size))
    budget = max(max_extra_factor * spec.keys, 2 * slots_per_pass)
    gc_soft = store.log.gc_trigger_blocks + 8
    hover = gc_soft + 8
    while budget > 0 and not (store.log.free_blocks <= hover
                              and store.stats.gc_blocks_reclaimed >= min_reclaims):
        store.put(zipf.next_key(), value, counter.next())
        if store.log.free_blocks <= gc_soft:
            store.gc_step()
        budget -= 1
    if store.stats.gc_blocks_reclaimed < min_reclaims:
        raise MvftlError(
            f"precondition could not reach {min_reclaims} reclaims; "
            f"device far larger than workload")
    store.flush()


@dataclass
class RunMetrics:
    store: str
    mode: str
    workload: str
    keys: int
    seed: int
    put_pct: float | None = None
    offered_load: float | None = None
    buckets: int | None = None
    cache_pct: float | None = None
    throughput: float = 0.0
    p50_us: float = 0.0
    p95_us: float = 0.0
    p99_us: float = 0.0
    abort_rate: float | None = None
    commit_rate: float | None = None
    cache_hit_rate: float | None = None
    write_amp: float | None = None
    index_bytes: int = 0
    # Extra observability, not part of the CSV schema.
    ops: int = 0
    commits: int = 0
    aborts: int = 0
    window_s: float = 0.0
    achieved_rate: float = 0.0
    gc_runs: int = 0
    device_reads: int = 0
    device_writes: int = 0
    block_erases: int = 0


def _percentiles(latencies: list[int]) -> tuple[float, float, float]:
    if not latencies:
        return 0.0, 0.0, 0.0
    arr = np.asarray(latencies, dtype=np.float64)
    p50, p95, p99 = np.percentile(arr, [50, 95, 99])
    return float(p50), float(p95), float(p99)


class _CounterWindow:
    """Delta tracker over the stats objects a run touches."""

    def __init__(self, setup: BenchSetup):
        self.setup = setup
        self.start: dict[str, int] = {}

    _DEVICE = ("page_reads", "page_writes", "block_erases")
    _STORE = ("puts", "gets", "gc_runs")
    _CACHE = ("cache_hits", "cache_misses")

    def snapshot(self) -> None:
        s: dict[str, int] = {}
        for name in self._DEVICE:
            s[name] = getattr(self.setup.device.stats, name)
        stats = self.setup.store.stats
        for name in self._STORE + self._CACHE:
            s[name] = getattr(stats, name, 0)
        self.start = s

    def deltas(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for name in self._DEVICE:
            out[name] = getattr(self.setup.device.stats, name) - self.start.get(name, 0)
        stats = self.setup.store.stats
        for name in self._STORE + self._CACHE:
            out[name] = getattr(stats, name, 0) - self.start.get(name, 0)
        return out


def _finish_metrics(metrics: RunMetrics, window: _CounterWindow,
                    value_size: int) -> None:
    d = window.deltas()
    metrics.gc_runs = d["gc_runs"]
    metrics.device_reads = d["page_reads"]
    metrics.device_writes = d["page_writes"]
    metrics.block_erases = d["block_erases"]
    probes = d["cache_hits"] + d["cache_misses"]
    if probes > 0:
        metrics.cache_hit_rate = d["cache_hits"] / probes
    pages_per_put = record_chunks(value_size) / window.setup.store.log.chunks_per_page
    if d["puts"] > 0:
        metrics.write_amp = d["page_writes"] / (d["puts"] * pages_per_put)
    metrics.index_bytes = window.setup.store.memory_usage()


def run_kv(setup: BenchSetup, spec: KvSpec, *, seed: int,
           warmup_fraction: float = 0.2) -> RunMetrics:
    """Closed-loop KV benchmark on a preconditioned store."""
    store = setup.store
    clock = setup.device.clock
    rng = np.random.default_rng(seed)
    stream = KvOpStream(spec, rng)
    counter = setup.counter
    value = bytes(spec.value_size)

    t0 = clock.now_us
    duration_us = int(spec.duration_s * 1_000_000)
    warm_end = t0 + int(duration_us * warmup_fraction)
    t_stop = t0 + duration_us
    window = _CounterWindow(setup)
    window.snapshot()
    warm_snapped = warmup_fraction <= 0.0

    heap: list[tuple[int, int, str, int]] = []
    seq = 0
    for wid in range(spec.clients):
        heapq.heappush(heap, (t0, seq, "worker", wid))
        seq += 1

    latencies: list[int] = []
    ops_done = 0
    ops_issued = 0
    active = spec.clients
    page_ends: dict[int, int] = {}
    waiters: dict[int, list[tuple[int, int]]] = {}

    # Garbage collection runs on its own timeline, like one more worker: a
    # cycle is scheduled whenever the free pool nears the reclaim trigger, so
    # cleaning overlaps foreground traffic instead of stalling the put that
    # happened to exhaust the pool.  The store's inline reclaim path remains
    # as backstop when this worker falls behind.
    gc_soft = store.log.gc_trigger_blocks + 8
    gc_queued = False
    gc_free_at = t0

    def maybe_schedule_gc(now_ts: int) -> None:
        nonlocal seq, gc_queued
        if gc_queued or now_ts >= t_stop:
            return
        if store.log.free_blocks > gc_soft:
            return
        heapq.heappush(heap, (max(now_ts, gc_free_at), seq, "gc", -1))
        seq += 1
        gc_queued = True

    def drain() -> None:
        nonlocal seq
        for page, end in store.log.drain_flush_completions():
            page_ends[page] = end
            for wid, op_start in waiters.pop(page, ()):  # parked put clients
                finish(wid, op_start, end)
        if len(page_ends) > 8192:
            cutoff = max(page_ends) - 4096
            for page in [p for p in page_ends if p < cutoff]:
                del page_ends[page]

    def finish(wid: int, op_start: int, op_end: int) -> None:
        nonlocal ops_done, seq, active
        if op_start >= warm_end and op_end <= t_stop:
            latencies.append(op_end - op_start)
        ops_done += 1
        if op_end >= t_stop:
            active -= 1
            return
        heapq.heappush(heap, (op_end, seq, "worker", wid))
        seq += 1

    def schedule_tick() -> None:
        nonlocal seq
        deadline = store.log.deadline_us
        if store.log.pending_page is not None and deadline is not None:
            heapq.heappush(heap, (deadline, seq, "tick", -1))
            seq += 1

    while heap and active > 0:
        t, _, kind, wid = heapq.heappop(heap)
        if not warm_snapped and t >= warm_end:
            window.snapshot()
            warm_snapped = True
        if kind == "tick":
            clock.set_now(t)
            store.tick()
            drain()
            if waiters:
                schedule_tick()
            continue
        if kind == "gc":
            clock.set_now(t)
            reclaimed = store.gc_step()
            gc_free_at = clock.now_us
            gc_queued = False
            drain()
            if reclaimed > 0:
                maybe_schedule_gc(gc_free_at)
            continue
        if t >= t_stop:
            active -= 1
            continue
        clock.set_now(t)
        op = stream.next_op()
        if op.is_put:
            loc = store.put(op.key, value, counter.next())
            t1 = clock.now_us
            drain()
            maybe_schedule_gc(t1)
            page = loc_page(loc)
            if page in page_ends:
                finish(wid, t, max(t1, page_ends[page]))
            elif store.log.pending_page == page:
                waiters.setdefault(page, []).append((wid, t))
                schedule_tick()
            else:
                # Record's page was flushed before instrumentation saw it
                # (possible only after a drain gap); complete at current time.
                finish(wid, t, t1)
        else:
            try:
                store.get(op.key)
            except KeyError_:
                pass
            t1 = clock.now_us
            drain()
            finish(wid, t, t1)
        ops_issued += 1

    store.flush()
    clock.set_now(max(clock.now_us, t_stop))
    drain()
    for page, entries in list(waiters.items()):
        for wid, op_start in entries:
            end = page_ends.get(page, t_stop)
            if op_start >= warm_end and end <= t_stop:
                latencies.append(end - op_start)
            ops_done += 1
    waiters.clear()

    window_s = (t_stop - warm_end) / 1e6
    p50, p95, p99 = _percentiles(latencies)
    metrics = RunMetrics(store=setup.kind, mode="kv", workload="zipf-kv",
                         keys=spec.keys, seed=seed, put_pct=spec.put_pct,
                         buckets=setup.bucket_count, cache_pct=setup.cache_pct,
                         throughput=len(latencies) / window_s if window_s > 0 else 0.0,
                         p50_us=p50, p95_us=p95, p99_us=p99,
                         ops=ops_done, window_s=window_s)
    _finish_metrics(metrics, window, spec.value_size)
    return metrics


def run_txn(setup: BenchSetup, spec: TxnSpec, *, seed: int,
            warmup_fraction: float = 0.2,
            drain_grace: float = 3.0) -> RunMetrics:
    """Open-loop transactional benchmark on a preconditioned store."""
    store = setup.store
    clock = setup.device.clock
    mgr = TransactionManager(store)
    mgr.oracle.advance_to(setup.counter.current)   # preloaded versions come first
    if setup.watermark_holder is not None:
        setup.watermark_holder.fn = mgr.watermark
    for wid in range(spec.clients):
        mgr.register_client(wid)

    rng = np.random.default_rng(seed)
    stream = TxnStream(spec, rng)

    t0 = clock.now_us
    duration_us = int(spec.duration_s * 1_000_000)
    warm_end = t0 + int(duration_us * warmup_fraction)
    t_stop = t0 + duration_us
    t_hard_stop = t0 + int(duration_us * max(drain_grace, 1.0))
    window = _CounterWindow(setup)
    window.snapshot()
    warm_snapped = warmup_fraction <= 0.0

    n_arrivals = max(1, int(spec.rate_tps * spec.duration_s))
    gap = 1_000_000.0 / spec.rate_tps
    arrivals = [(t0 + int(i * gap), stream.next_txn()) for i in range(n_arrivals)]
    next_arrival = 0

    heap: list[tuple[int, int, int]] = []
    seq = 0
    for wid in range(spec.clients):
        heapq.heappush(heap, (t0, seq, wid))
        seq += 1

    # Per-worker execution state: None when idle.
    running: list[dict | None] = [None] * spec.clients
    latencies: list[int] = []
    commits = aborts = 0
    commits_measured = aborts_measured = 0

    # Background reclaim worker; see run_kv.
    gc_soft = store.log.gc_trigger_blocks + 8
    gc_queued = False
    gc_free_at = t0
    GC_WID = -1

    def maybe_schedule_gc(now_ts: int) -> None:
        nonlocal seq, gc_queued
        if gc_queued or now_ts >= t_stop:
            return
        if store.log.free_blocks > gc_soft:
            return
        heapq.heappush(heap, (max(now_ts, gc_free_at), seq, GC_WID))
        seq += 1
        gc_queued = True

    def finalize(wid: int, state: dict, end: int, committed: bool) -> None:
        nonlocal commits, aborts, commits_measured, aborts_measured, seq
        if committed:
            commits += 1
        else:
            aborts += 1
        if warm_end <= state["arrival"] and end <= t_stop:
            if committed:
                commits_measured += 1
                latencies.append(end - state["arrival"])
            else:
                aborts_measured += 1
        running[wid] = None
        heapq.heappush(heap, (end, seq, wid))
        seq += 1

    while heap:
        t, _, wid = heapq.heappop(heap)
        if not warm_snapped and t >= warm_end:
            window.snapshot()
            warm_snapped = True
        if t > t_hard_stop:
            break
        if wid == GC_WID:
            clock.set_now(t)
            reclaimed = store.gc_step()
            gc_free_at = clock.now_us
            gc_queued = False
            if reclaimed > 0:
                maybe_schedule_gc(gc_free_at)
            continue
        state = running[wid]
        if state is None:
            if next_arrival >= len(arrivals):
                continue    # worker retires; no more arrivals
            arrival_t, program = arrivals[next_arrival]
            if arrival_t > t:
                heapq.heappush(heap, (arrival_t, seq, wid))
                seq += 1
                continue
            next_arrival += 1
            clock.set_now(t)
            ctx = mgr.begin(wid)
            state = {"arrival": arrival_t, "program": program, "ctx": ctx, "step": 0}
            running[wid] = state
            # Fall through: execute the first step at this event.
        program = state["program"]
        ctx = state["ctx"]
        step = state["step"]
        clock.set_now(t)
        try:
            if step < len(program.keys):
                key = program.keys[step]
                mgr.read(ctx, key)
                if not program.readonly:
                    mgr.write(ctx, key, program.value)
                state["step"] += 1
                heapq.heappush(heap, (clock.now_us, seq, wid))
                seq += 1
            else:
                mgr.commit(ctx)
                finalize(wid, state, clock.now_us, committed=True)
                maybe_schedule_gc(clock.now_us)
        except TxnAborted:
            finalize(wid, state, clock.now_us, committed=False)

    window_s = (t_stop - warm_end) / 1e6
    completed = commits_measured + aborts_measured
    p50, p95, p99 = _percentiles(latencies)
    metrics = RunMetrics(store=setup.kind, mode="txn", workload="social-mix",
                         keys=spec.keys, seed=seed,
                         offered_load=spec.rate_tps,
                         buckets=setup.bucket_count, cache_pct=setup.cache_pct,
                         throughput=commits_measured / window_s if window_s > 0 else 0.0,
                         p50_us=p50, p95_us=p95, p99_us=p99,
                         abort_rate=aborts_measured / completed if completed else 0.0,
                         commit_rate=commits_measured / completed if completed else 0.0,
                         ops=completed, commits=commits, aborts=aborts,
                         window_s=window_s,
                         achieved_rate=completed / window_s if window_s > 0 else 0.0)
    _finish_metrics(metrics, window, spec.value_size)
    return metrics


def sweep_keys_per_bucket(values: list[int], spec: KvSpec, *, seed: int,
                          device_blocks: int | None = None,
                          min_reclaims: int = 8) -> list[RunMetrics]:
    """One skimpy run per keys/bucket value, fixed cache, same seed."""
    out = []
    for kpb in values:
        setup = build_store("skimpy", keys=spec.keys, value_size=spec.value_size,
                            device_blocks=device_blocks, keys_per_bucket=kpb)
        precondition(setup, spec, np.random.default_rng(seed),
                     min_reclaims=min_reclaims)
        out.append(run_kv(setup, spec, seed=seed))
    return out


def sweep_offered_load(rates: list[float], spec: TxnSpec, kind: str, *, seed: int,
                       device_blocks: int | None = None,
                       multi_version: bool = True,
                       min_reclaims: int = 8) -> list[RunMetrics]:
    """One open-loop transactional run per offered-load point."""
    out = []
    for rate in rates:
        point = TxnSpec(keys=spec.keys, value_size=spec.value_size,
                        readonly_pct=spec.readonly_pct,
                        alpha_read=spec.alpha_read, alpha_rw=spec.alpha_rw,
                        ro_keys_max=spec.ro_keys_max, rw_keys_max=spec.rw_keys_max,
                        rate_tps=rate, duration_s=spec.duration_s,
                        clients=spec.clients, single_version=spec.single_version)
        setup = build_store(kind, keys=spec.keys, value_size=spec.value_size,
                            device_blocks=device_blocks,
                            multi_version=multi_version, watermark_mode="txn")
        precondition(setup, point, np.random.default_rng(seed),
                     min_reclaims=min_reclaims)
        out.append(run_txn(setup, point, seed=seed))
    return out
