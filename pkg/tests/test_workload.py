"""Key-popularity sampling and operation-stream generation."""

import numpy as np
import pytest

from mvftl.bench.workload import (
    KvOpStream,
    KvSpec,
    TxnSpec,
    TxnStream,
    ZipfGenerator,
    key_of,
)
from mvftl.errors import ConfigError


def rng(seed=0):
    return np.random.default_rng(seed)


class TestKeyOf:
    def test_fixed_width(self):
        assert len(key_of(0)) == 16
        assert len(key_of(10**15 - 1)) == 16

    def test_distinct(self):
        assert len({key_of(i) for i in range(1000)}) == 1000


class TestZipf:
    def test_validation(self):
        with pytest.raises(ConfigError):
            ZipfGenerator(0, 0.99, rng())
        with pytest.raises(ConfigError):
            ZipfGenerator(10, -0.5, rng())

    def test_alpha_zero_is_uniform(self):
        g = ZipfGenerator(4, 0.0, rng(1))
        n = 200_000
        counts = np.bincount([g.next_rank() for _ in range(n)], minlength=4)
        for c in counts:
            assert abs(c / n - 0.25) < 0.01

    def test_skew_ratio(self):
        g = ZipfGenerator(1000, 0.99, rng(2))
        # Exact pmf ratio between the two hottest ranks.
        assert g.pmf(0) / g.pmf(1) == pytest.approx(2 ** 0.99, rel=1e-12)
        n = 300_000
        counts = np.bincount([g.next_rank() for _ in range(n)], minlength=1000)
        assert counts[0] / counts[1] == pytest.approx(2 ** 0.99, rel=0.05)

    def test_ranks_in_bounds(self):
        for alpha in (0.0, 0.5, 0.99, 1.2):
            g = ZipfGenerator(7, alpha, rng(3))
            ranks = [g.next_rank() for _ in range(5000)]
            assert min(ranks) >= 0 and max(ranks) < 7

    def test_pmf_sums_to_one(self):
        g = ZipfGenerator(500, 0.99, rng())
        assert sum(g.pmf(i) for i in range(500)) == pytest.approx(1.0)

    def test_seed_determinism(self):
        a = ZipfGenerator(100, 0.99, rng(42))
        b = ZipfGenerator(100, 0.99, rng(42))
        c = ZipfGenerator(100, 0.99, rng(43))
        seq_a = [a.next_rank() for _ in range(100)]
        seq_b = [b.next_rank() for _ in range(100)]
        seq_c = [c.next_rank() for _ in range(100)]
        assert seq_a == seq_b
        assert seq_a != seq_c


class TestSpecs:
    def test_kv_validation(self):
        with pytest.raises(ConfigError):
            KvSpec(get_pct=101)
        with pytest.raises(ConfigError):
            KvSpec(clients=0)
        with pytest.raises(ConfigError):
            KvSpec(keys=0)

    def test_put_pct(self):
        assert KvSpec(get_pct=95.0).put_pct == pytest.approx(5.0)

    def test_txn_validation(self):
        with pytest.raises(ConfigError):
            TxnSpec(readonly_pct=-1)
        with pytest.raises(ConfigError):
            TxnSpec(rate_tps=0)
        with pytest.raises(ConfigError):
            TxnSpec(ro_keys_max=0)


class TestKvOpStream:
    def test_mix_fraction(self):
        s = KvOpStream(KvSpec(keys=100, get_pct=75.0), rng(4))
        n = 40_000
        puts = sum(s.next_op().is_put for _ in range(n))
        assert abs(puts / n - 0.25) < 0.02

    def test_value_size(self):
        s = KvOpStream(KvSpec(keys=10, get_pct=0.0, value_size=333), rng())
        op = s.next_op()
        assert op.is_put and len(op.value) == 333

    def test_determinism(self):
        mk = lambda seed: KvOpStream(KvSpec(keys=50), rng(seed))
        tape = lambda s: [(o.is_put, o.key) for o in (s.next_op() for _ in range(200))]
        assert tape(mk(7)) == tape(mk(7))
        assert tape(mk(7)) != tape(mk(8))


class TestTxnStream:
    def test_mix_fraction(self):
        s = TxnStream(TxnSpec(keys=100, readonly_pct=80.0), rng(5))
        n = 20_000
        ro = sum(s.next_txn().readonly for _ in range(n))
        assert abs(ro / n - 0.8) < 0.02

    def test_key_counts_and_distinctness(self):
        spec = TxnSpec(keys=1000, ro_keys_max=10, rw_keys_max=5)
        s = TxnStream(spec, rng(6))
        for _ in range(2000):
            t = s.next_txn()
            limit = spec.ro_keys_max if t.readonly else spec.rw_keys_max
            assert 1 <= len(t.keys) <= limit
            assert len(set(t.keys)) == len(t.keys)
            if not t.readonly:
                assert len(t.value) == spec.value_size

    def test_tiny_keyspace_terminates(self):
        s = TxnStream(TxnSpec(keys=2, ro_keys_max=10, rw_keys_max=5), rng(7))
        for _ in range(500):
            t = s.next_txn()
            assert 1 <= len(t.keys) <= 2

    def test_determinism(self):
        mk = lambda seed: TxnStream(TxnSpec(keys=200), rng(seed))
        tape = lambda s: [(t.readonly, tuple(t.keys))
                          for t in (s.next_txn() for _ in range(300))]
        assert tape(mk(9)) == tape(mk(9))
        assert tape(mk(9)) != tape(mk(10))
