"""On-flash layout: compact location words and the record wire format.

A flash location is one unsigned 32-bit word: bits [31..3] hold a page id and
bits [2..0] hold the index of the record's first 512-byte chunk inside that
page.  The two largest words are reserved as sentinels, which is why a device
used with this codec may expose at most 2**29 - 1 pages: the encoding of any
real location must never collide with a sentinel.

Record wire format (little-endian, offsets in bytes):

    0   magic        u8   0x5F
    1   flags        u8   bit0 = tombstone
    2   key_len      u16  always 16
    4   value_len    u16
    6   version_ts   u64
    14  prior_version u32 (location word or sentinel)
    18  hash_next    u32  (location word or sentinel)
    22  key          16 bytes
    38  value        value_len bytes
    ..  zero padding up to a multiple of the chunk size

A record always occupies an integral number of contiguous chunks and never
straddles a page boundary.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import AddressError, CorruptionError, RecordTooLargeError

NULL_LOC = 0xFFFFFFFF       # "no location": end of a chain / no prior version
UNKNOWN_PRIOR = 0xFFFFFFFE  # prior version exists but its location was not known at write time

CHUNK_SIZE = 512
KEY_SIZE = 16
RECORD_MAGIC = 0x5F
_FLAG_TOMBSTONE = 0x01

_HEADER = struct.Struct("<BBHHQII")
HEADER_SIZE = _HEADER.size + KEY_SIZE   # 38 bytes of header + key
assert HEADER_SIZE == 38

MAX_PAGE = 2 ** 29 - 2      # encode(MAX_PAGE, 7) == 0xFFFFFFF7 < UNKNOWN_PRIOR


def encode_location(page: int, chunk: int) -> int:
    if not 0 <= page <= MAX_PAGE:
        raise AddressError(f"page {page} not encodable (max {MAX_PAGE})")
    if not 0 <= chunk <= 7:
        raise AddressError(f"chunk index {chunk} not in [0, 7]")
    return (page << 3) | chunk


def decode_location(word: int) -> tuple[int, int]:
    if is_sentinel(word):
        raise AddressError(f"0x{word:08X} is a sentinel, not a location")
    if not 0 <= word <= 0xFFFFFFFF:
        raise AddressError(f"location word 0x{word:X} out of 32-bit range")
    return word >> 3, word & 0x7


def is_sentinel(word: int) -> bool:
    return word == NULL_LOC or word == UNKNOWN_PRIOR


def loc_page(word: int) -> int:
    return decode_location(word)[0]


@dataclass
class KvRecord:
    key: bytes
    value: bytes = b""
    version_ts: int = 0
    prior_version: int = NULL_LOC
    hash_next: int = NULL_LOC
    tombstone: bool = False

    def __post_init__(self):
        if len(self.key) != KEY_SIZE:
            raise AddressError(f"keys are exactly {KEY_SIZE} bytes, got {len(self.key)}")

    def encoded_size(self) -> int:
        return HEADER_SIZE + len(self.value)

    def chunk_count(self, chunk_size: int = CHUNK_SIZE) -> int:
        return -(-self.encoded_size() // chunk_size)


def record_chunks(value_len: int, chunk_size: int = CHUNK_SIZE) -> int:
    return -(-(HEADER_SIZE + value_len) // chunk_size)


def encode_record(rec: KvRecord, chunk_size: int = CHUNK_SIZE) -> bytes:
    value_len = len(rec.value)
    if value_len > 0xFFFF:
        raise RecordTooLargeError(f"value of {value_len} bytes exceeds the u16 length field")
    flags = _FLAG_TOMBSTONE if rec.tombstone else 0
    header = _HEADER.pack(RECORD_MAGIC, flags, KEY_SIZE, value_len,
                          rec.version_ts, rec.prior_version, rec.hash_next)
    body = header + rec.key + rec.value
    padded = rec.chunk_count(chunk_size) * chunk_size
    return body + bytes(padded - len(body))


def decode_record(buf: bytes, offset: int = 0) -> KvRecord:
    """Parse one record starting at `offset`; raises CorruptionError on garbage."""
    if offset + HEADER_SIZE > len(buf):
        raise CorruptionError(f"truncated record header at offset {offset}")
    magic, flags, key_len, value_len, version_ts, prior, nxt = _HEADER.unpack_from(buf, offset)
    if magic != RECORD_MAGIC:
        raise CorruptionError(f"bad record magic 0x{magic:02X} at offset {offset}")
    if key_len != KEY_SIZE:
        raise CorruptionError(f"unsupported key length {key_len} at offset {offset}")
    start = offset + _HEADER.size
    end = start + KEY_SIZE + value_len
    if end > len(buf):
        raise CorruptionError(f"record value runs past end of buffer at offset {offset}")
    key = bytes(buf[start:start + KEY_SIZE])
    value = bytes(buf[start + KEY_SIZE:end])
    return KvRecord(key=key, value=value, version_ts=version_ts,
                    prior_version=prior, hash_next=nxt,
                    tombstone=bool(flags & _FLAG_TOMBSTONE))
