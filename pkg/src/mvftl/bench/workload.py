"""Key-popularity and operation-stream generators for the benchmark drivers.

All randomness flows from one numpy Generator per run, so a (spec, seed) pair
reproduces the exact operation sequence on any machine.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..layout import KEY_SIZE


def key_of(rank: int) -> bytes:
    """Fixed-width key for a popularity rank; rank 0 is the hottest key."""
    key = b"%016d" % rank
    assert len(key) == KEY_SIZE
    return key


class ZipfGenerator:
    """Bounded Zipf sampler over ranks 0..n-1.

    P(rank k) is proportional to 1/(k+1)^alpha.  Sampling inverts the CDF
    with searchsorted in batches; alpha = 0 degenerates to uniform.
    """

    BATCH = 4096

    def __init__(self, n: int, alpha: float, rng: np.random.Generator):
        if n < 1:
            raise ConfigError(f"zipf needs at least one key, got {n}")
        if alpha < 0:
            raise ConfigError(f"zipf alpha must be >= 0, got {alpha}")
        self.n = n
        self.alpha = alpha
        self._rng = rng
        weights = 1.0 / np.power(np.arange(1, n + 1, dtype=np.float64), alpha)
        self._pmf = weights / weights.sum()
        self._cdf = np.cumsum(self._pmf)
        self._cdf[-1] = 1.0
        self._batch = np.empty(0, dtype=np.int64)
        self._pos = 0

    def pmf(self, rank: int) -> float:
        return float(self._pmf[rank])

    def next_rank(self) -> int:
        if self._pos >= len(self._batch):
            u = self._rng.random(self.BATCH)
            self._batch = np.searchsorted(self._cdf, u, side="right")
            self._pos = 0
        rank = int(self._batch[self._pos])
        self._pos += 1
        return rank

    def next_key(self) -> bytes:
        return key_of(self.next_rank())


@dataclass
class KvSpec:
    """Closed-loop key-value workload shape."""

    keys: int = 10_000
    value_size: int = 474
    get_pct: float = 95.0
    zipf_alpha: float = 0.99
    clients: int = 8
    duration_s: float = 1.0
    max_ops: int | None = None
    single_version: bool = False

    def __post_init__(self):
        if not 0.0 <= self.get_pct <= 100.0:
            raise ConfigError(f"get_pct {self.get_pct} not in [0, 100]")
        if self.clients < 1:
            raise ConfigError("need at least one client")
        if self.keys < 1:
            raise ConfigError("need at least one key")

    @property
    def put_pct(self) -> float:
        return 100.0 - self.get_pct


@dataclass
class TxnSpec:
    """Open-loop transactional workload shape.

    Transactions arrive at ``rate_tps`` regardless of completion.  Most are
    read-only snapshot reads over 1..10 keys; the rest read-modify-write
    1..5 keys.  The two classes draw keys from separately skewed
    distributions, the write-side one flatter than the read-side one.
    """

    keys: int = 10_000
    value_size: int = 474
    readonly_pct: float = 90.0
    alpha_read: float = 0.99
    alpha_rw: float = 0.75
    ro_keys_max: int = 10
    rw_keys_max: int = 5
    rate_tps: float = 10_000.0
    duration_s: float = 1.0
    clients: int = 8
    single_version: bool = False

    def __post_init__(self):
        if not 0.0 <= self.readonly_pct <= 100.0:
            raise ConfigError(f"readonly_pct {self.readonly_pct} not in [0, 100]")
        if self.rate_tps <= 0:
            raise ConfigError("rate_tps must be positive")
        if self.clients < 1:
            raise ConfigError("need at least one client")
        if self.ro_keys_max < 1 or self.rw_keys_max < 1:
            raise ConfigError("transactions must touch at least one key")


@dataclass
class KvOp:
    """One generated operation: a get at the latest snapshot, or a put."""

    is_put: bool
    key: bytes
    value: bytes = b""


@dataclass
class TxnProgram:
    """One generated transaction: the keys it touches and the write payload.

    Read-only programs read every key at the transaction snapshot.
    Read-write programs read-modify-write each key.
    """

    readonly: bool
    keys: list[bytes] = field(default_factory=list)
    value: bytes = b""


class KvOpStream:
    def __init__(self, spec: KvSpec, rng: np.random.Generator):
        self.spec = spec
        self._zipf = ZipfGenerator(spec.keys, spec.zipf_alpha, rng)
        self._rng = rng
        self._value = bytes(spec.value_size)
        self._put_prob = spec.put_pct / 100.0

    def next_op(self) -> KvOp:
        key = self._zipf.next_key()
        if self._rng.random() < self._put_prob:
            return KvOp(is_put=True, key=key, value=self._value)
        return KvOp(is_put=False, key=key)


class TxnStream:
    def __init__(self, spec: TxnSpec, rng: np.random.Generator):
        self.spec = spec
        self._zipf_read = ZipfGenerator(spec.keys, spec.alpha_read, rng)
        self._zipf_rw = ZipfGenerator(spec.keys, spec.alpha_rw, rng)
        self._rng = rng
        self._value = bytes(spec.value_size)
        self._ro_prob = spec.readonly_pct / 100.0

    def _distinct_keys(self, zipf: ZipfGenerator, count: int) -> list[bytes]:
        count = min(count, self.spec.keys)   # tiny keyspaces cap the txn size
        seen: list[bytes] = []
        attempts = max(count * 8, 32)
        while len(seen) < count and attempts > 0:
            k = zipf.next_key()
            if k not in seen:
                seen.append(k)
            attempts -= 1
        while len(seen) < count:          # tiny keyspace fallback
            k = key_of(int(self._rng.integers(self.spec.keys)))
            if k not in seen:
                seen.append(k)
        return seen

    def next_txn(self) -> TxnProgram:
        if self._rng.random() < self._ro_prob:
            count = int(self._rng.integers(1, self.spec.ro_keys_max + 1))
            return TxnProgram(readonly=True,
                              keys=self._distinct_keys(self._zipf_read, count))
        count = int(self._rng.integers(1, self.spec.rw_keys_max + 1))
        return TxnProgram(readonly=False,
                          keys=self._distinct_keys(self._zipf_rw, count),
                          value=self._value)
