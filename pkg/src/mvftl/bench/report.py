"""Benchmark result serialization.

One row per run, fixed column order.  Fields that do not apply to a run
(abort rate for the KV driver, bucket count for stores without a hash
directory) are left empty rather than zero so downstream tooling can tell
"not applicable" from "measured zero".
"""

from __future__ import annotations

import csv
import io
from os import PathLike

from .runner import RunMetrics

CSV_COLUMNS = [
    "store", "mode", "workload", "put_pct", "offered_load", "keys",
    "buckets", "cache_pct", "throughput", "p50_us", "p95_us", "p99_us",
    "abort_rate", "commit_rate", "cache_hit_rate", "write_amp",
    "index_bytes", "seed",
]


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        # str() of a float is the shortest form that parses back exactly.
        return str(value)
    return str(value)


def metrics_to_row(m: RunMetrics) -> dict[str, str]:
    return {
        "store": m.store,
        "mode": m.mode,
        "workload": m.workload,
        "put_pct": _cell(m.put_pct),
        "offered_load": _cell(m.offered_load),
        "keys": _cell(m.keys),
        "buckets": _cell(m.buckets),
        "cache_pct": _cell(m.cache_pct),
        "throughput": _cell(m.throughput),
        "p50_us": _cell(m.p50_us),
        "p95_us": _cell(m.p95_us),
        "p99_us": _cell(m.p99_us),
        "abort_rate": _cell(m.abort_rate),
        "commit_rate": _cell(m.commit_rate),
        "cache_hit_rate": _cell(m.cache_hit_rate),
        "write_amp": _cell(m.write_amp),
        "index_bytes": _cell(m.index_bytes),
        "seed": _cell(m.seed),
    }


def write_csv(path: str | PathLike | io.TextIOBase, rows: list[RunMetrics]) -> None:
    """Write runs to CSV; an empty run list still produces the header."""
    if isinstance(path, io.TextIOBase):
        _write(path, rows)
    else:
        with open(path, "w", newline="") as fh:
            _write(fh, rows)


def _write(fh, rows: list[RunMetrics]) -> None:
    writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
    writer.writeheader()
    for m in rows:
        writer.writerow(metrics_to_row(m))


_INT_FIELDS = {"keys", "buckets", "index_bytes", "seed"}
_STR_FIELDS = {"store", "mode", "workload"}


def parse_csv(path: str | PathLike | io.TextIOBase) -> list[dict]:
    """Read a results CSV back into typed dicts ('' becomes None)."""
    if isinstance(path, io.TextIOBase):
        return _parse(path)
    with open(path, newline="") as fh:
        return _parse(fh)


def _parse(fh) -> list[dict]:
    out = []
    for raw in csv.DictReader(fh):
        row: dict = {}
        for col in CSV_COLUMNS:
            cell = raw.get(col, "")
            if col in _STR_FIELDS:
                row[col] = cell
            elif cell == "" or cell is None:
                row[col] = None
            elif col in _INT_FIELDS:
                row[col] = int(cell)
            else:
                row[col] = float(cell)
        out.append(row)
    return out


def summary_lines(rows: list[RunMetrics]) -> list[str]:
    """Human-readable one-liners, one per run."""
    lines = []
    for m in rows:
        bits = [f"{m.store}/{m.mode}", f"keys={m.keys}"]
        if m.put_pct is not None:
            bits.append(f"put%={m.put_pct:g}")
        if m.offered_load is not None:
            bits.append(f"offered={m.offered_load:g}/s")
        bits.append(f"thr={m.throughput:,.0f}/s")
        bits.append(f"p50={m.p50_us:.0f}us p95={m.p95_us:.0f}us p99={m.p99_us:.0f}us")
        if m.abort_rate is not None:
            bits.append(f"abort={m.abort_rate:.3f}")
        if m.cache_hit_rate is not None:
            bits.append(f"hit={m.cache_hit_rate:.3f}")
        if m.write_amp is not None:
            bits.append(f"WA={m.write_amp:.2f}")
        bits.append(f"idx={m.index_bytes:,}B")
        lines.append("  ".join(bits))
    return lines
