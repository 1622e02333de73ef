"""Optimistic multi-version transactions over any store flavor.

Reads run against the snapshot fixed by the transaction's start timestamp;
writes are buffered in the transaction context and applied only at commit.
Commit of a read-write transaction validates backward: if any key it read or
wrote has gained a version after the transaction's start, the transaction
aborts (first committer wins).  Read-only transactions commit without
validation: their snapshot is already consistent.  A snapshot read that hits
a retired version (possible in single-version mode, where every overwrite
discards history) aborts the transaction on the spot.

Clients acknowledge their last completed transaction's timestamp; the
retention watermark handed to the stores' garbage collectors is the minimum
acknowledgement over all registered clients.  Because a client's next start
timestamp is always issued after its last acknowledgement, the watermark can
never overtake an active transaction's snapshot, which is what makes aborts
on retired versions impossible in multi-version mode.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from .errors import (
    MvftlError,
    NotFoundError,
    StoreFullError,
    TxnAborted,
    VersionRetiredError,
)
from .store import check_key

ABORT_CONFLICT = "conflict"
ABORT_STALE_READ = "stale_read"
ABORT_USER = "user"

ACTIVE = "active"
COMMITTED = "committed"
ABORTED = "aborted"


class TimestampOracle:
    """Hands out strictly increasing 64-bit timestamps, starting at 1."""

    def __init__(self):
        self._next = 1
        self._lock = threading.Lock()

    def issue(self) -> int:
        with self._lock:
            ts = self._next
            self._next += 1
            return ts

    def advance_to(self, ts: int) -> None:
        """Never issue a timestamp at or below `ts` (e.g. preloaded data)."""
        with self._lock:
            if ts + 1 > self._next:
                self._next = ts + 1

    @property
    def current(self) -> int:
        return self._next - 1


class WatermarkTracker:
    """Minimum of per-client acknowledgements; never moves backwards."""

    def __init__(self):
        self._acks: dict[str, int] = {}
        self._watermark = 0
        self._lock = threading.Lock()

    def register(self, client: str, ts: int = 0) -> None:
        with self._lock:
            self._acks.setdefault(client, ts)

    def ack(self, client: str, ts: int) -> None:
        with self._lock:
            if client not in self._acks:
                raise MvftlError(f"client {client!r} is not registered")
            if ts < self._acks[client]:
                raise MvftlError(
                    f"client {client!r} acknowledgement moved backwards "
                    f"({self._acks[client]} -> {ts})")
            self._acks[client] = ts
            wm = min(self._acks.values())
            if wm < self._watermark:
                raise MvftlError("watermark regressed")   # cannot happen; guard anyway
            self._watermark = wm

    def watermark(self) -> int:
        return self._watermark


@dataclass
class TxnContext:
    txn_id: int
    client: str
    start_ts: int
    read_set: dict[bytes, int] = field(default_factory=dict)
    write_set: dict[bytes, bytes] = field(default_factory=dict)
    status: str = ACTIVE
    abort_reason: str | None = None


@dataclass
class TxnStats:
    begun: int = 0
    committed: int = 0
    read_only_committed: int = 0
    aborted: int = 0
    aborts_conflict: int = 0
    aborts_stale_read: int = 0
    aborts_user: int = 0


class TransactionManager:
    def __init__(self, store, *, lock_stripes: int = 64):
        self.store = store
        self.oracle = TimestampOracle()
        self.clients = WatermarkTracker()
        self.stats = TxnStats()
        self._locks = [threading.RLock() for _ in range(lock_stripes)]
        self._next_txn_id = 0

    # The stores consult this at GC time.
    def watermark(self) -> int:
        return self.clients.watermark()

    def register_client(self, client: str) -> None:
        self.clients.register(client, self.oracle.current)

    def report_ack(self, client: str, ts: int) -> None:
        self.clients.ack(client, ts)

    def begin(self, client: str) -> TxnContext:
        start_ts = self.oracle.issue()
        wm = self.clients.watermark()
        if wm > start_ts:
            raise MvftlError(f"watermark {wm} overtook start_ts {start_ts}")
        self._next_txn_id += 1
        self.stats.begun += 1
        return TxnContext(txn_id=self._next_txn_id, client=client, start_ts=start_ts)

    # -- operations ------------------------------------------------------------

    def read(self, ctx: TxnContext, key: bytes) -> bytes:
        self._require_active(ctx)
        check_key(key)
        if key in ctx.write_set:
            return ctx.write_set[key]       # read-your-own-writes
        try:
            vr = self.store.read_version(key, ctx.start_ts)
        except VersionRetiredError as e:
            raise self._abort(ctx, ABORT_STALE_READ, str(e))
        except NotFoundError:
            raise                            # absence is an answer, not a conflict
        ctx.read_set[key] = vr.version_ts
        return vr.value

    def write(self, ctx: TxnContext, key: bytes, value: bytes) -> None:
        self._require_active(ctx)
        check_key(key)
        ctx.write_set[key] = value

    def commit(self, ctx: TxnContext) -> int:
        self._require_active(ctx)
        if not ctx.write_set:
            ctx.status = COMMITTED
            self.stats.committed += 1
            self.stats.read_only_committed += 1
            self.clients.ack(ctx.client, ctx.start_ts)
            return ctx.start_ts
        keys = sorted(set(ctx.read_set) | set(ctx.write_set))
        stripes = sorted({self._stripe(k) for k in keys})
        for s in stripes:
            self._locks[s].acquire()
        try:
            for key in keys:
                latest = self.store.latest_version_ts(key)
                if latest is not None and latest > ctx.start_ts:
                    raise self._abort(
                        ctx, ABORT_CONFLICT,
                        f"key {key!r} gained version {latest} after start {ctx.start_ts}")
            commit_ts = self.oracle.issue()
            try:
                for key in sorted(ctx.write_set):
                    self.store.put(key, ctx.write_set[key], commit_ts)
            except StoreFullError as e:
                # Half-applied writes cannot be rolled back on flash; this is
                # a capacity misconfiguration, not a recoverable conflict.
                raise MvftlError(f"store filled up mid-commit: {e}") from e
        finally:
            for s in reversed(stripes):
                self._locks[s].release()
        ctx.status = COMMITTED
        self.stats.committed += 1
        self.clients.ack(ctx.client, commit_ts)
        return commit_ts

    def abort(self, ctx: TxnContext, reason: str = ABORT_USER) -> None:
        self._require_active(ctx)
        self._abort(ctx, reason, "requested")

    # -- internals ------------------------------------------------------------

    def _abort(self, ctx: TxnContext, reason: str, detail: str) -> TxnAborted:
        ctx.status = ABORTED
        ctx.abort_reason = reason
        self.stats.aborted += 1
        if reason == ABORT_CONFLICT:
            self.stats.aborts_conflict += 1
        elif reason == ABORT_STALE_READ:
            self.stats.aborts_stale_read += 1
        else:
            self.stats.aborts_user += 1
        # The aborted transaction no longer holds its snapshot open.
        self.clients.ack(ctx.client, ctx.start_ts)
        return TxnAborted(reason, detail)

    def _require_active(self, ctx: TxnContext) -> None:
        if ctx.status != ACTIVE:
            raise MvftlError(f"transaction {ctx.txn_id} is {ctx.status}")

    def _stripe(self, key: bytes) -> int:
        return hash(key) % len(self._locks)
