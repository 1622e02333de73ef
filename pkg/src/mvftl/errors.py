"""Exception types shared across the device, log, store, and transaction layers."""


class MvftlError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MvftlError):
    """A configuration value is out of range or inconsistent."""


class AddressError(MvftlError):
    """Page, block, or chunk address outside the device/log geometry."""


class WriteViolationError(MvftlError):
    """Attempt to program a page that has not been erased since its last write."""


class SequenceError(MvftlError):
    """Attempt to program pages of a block out of sequential order."""


class DeviceBusyError(MvftlError):
    """Non-blocking submission rejected because the device queue is full."""


class CorruptionError(MvftlError):
    """Bytes read back from flash do not parse as the record that was expected."""


class RecordTooLargeError(MvftlError):
    """Encoded record would not fit inside a single flash page."""


class StoreFullError(MvftlError):
    """No free block can be allocated without breaking the reserve floor."""


class OrderingError(MvftlError):
    """Per-key version timestamps must be strictly increasing."""


class KeyError_(MvftlError):
    # Named with a trailing underscore to avoid shadowing the builtin.
    """Base for lookup failures."""


class NotFoundError(KeyError_):
    """Key has never been written (or its newest version is a tombstone)."""


class NotFoundAtSnapshotError(KeyError_):
    """Key exists, but no version is visible at the requested snapshot."""


class VersionRetiredError(KeyError_):
    """The version that would serve this snapshot was discarded by retention."""


class TxnAborted(MvftlError):
    """Raised to the caller when a transaction aborts; .reason carries why."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"transaction aborted: {reason}" + (f" ({detail})" if detail else ""))
        self.reason = reason
