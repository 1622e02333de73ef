"""mvftl: a flash-device emulator plus three multi-version key-value store
designs built on it, with a snapshot transaction layer and a benchmark
harness.

The stores share one record format and one retention rule and differ only in
how they find versions:

- ``SemelStore``: full in-memory version index, one entry per stored version.
- ``SkimpyStore``: hash-bucket directory plus on-flash chaining, with a small
  translation cache; index memory is per bucket, not per version.
- ``VftlStore``: the same full-index design layered on a page-mapped FTL that
  does its own garbage collection underneath.
"""

from .clock import RealtimeClock, VirtualClock, make_clock
from .errors import (
    AddressError,
    ConfigError,
    CorruptionError,
    DeviceBusyError,
    MvftlError,
    NotFoundAtSnapshotError,
    NotFoundError,
    OrderingError,
    RecordTooLargeError,
    SequenceError,
    StoreFullError,
    TxnAborted,
    VersionRetiredError,
    WriteViolationError,
)
from .flashsim import DeviceConfig, DeviceStats, FlashDevice
from .layout import (
    CHUNK_SIZE,
    KEY_SIZE,
    NULL_LOC,
    UNKNOWN_PRIOR,
    KvRecord,
    decode_location,
    decode_record,
    encode_location,
    encode_record,
)
from .log import LogAllocator
from .semel import SemelStore
from .skimpy import SkimpyStore, TranslationCache
from .store import VersionIndex, VersionRead, index_memory_plan
from .txn import (
    TimestampOracle,
    TransactionManager,
    TxnContext,
    WatermarkTracker,
)
from .vftl import PageMappedFtl, VftlStore

__version__ = "0.1.0"

__all__ = [
    "AddressError",
    "CHUNK_SIZE",
    "ConfigError",
    "CorruptionError",
    "DeviceBusyError",
    "DeviceConfig",
    "DeviceStats",
    "FlashDevice",
    "KEY_SIZE",
    "KvRecord",
    "LogAllocator",
    "MvftlError",
    "NotFoundAtSnapshotError",
    "NotFoundError",
    "NULL_LOC",
    "OrderingError",
    "PageMappedFtl",
    "RealtimeClock",
    "RecordTooLargeError",
    "SemelStore",
    "SequenceError",
    "SkimpyStore",
    "StoreFullError",
    "TimestampOracle",
    "TransactionManager",
    "TranslationCache",
    "TxnAborted",
    "TxnContext",
    "UNKNOWN_PRIOR",
    "VersionIndex",
    "VersionRead",
    "VersionRetiredError",
    "VftlStore",
    "VirtualClock",
    "WatermarkTracker",
    "WriteViolationError",
    "decode_location",
    "decode_record",
    "encode_location",
    "encode_record",
    "index_memory_plan",
    "make_clock",
]
