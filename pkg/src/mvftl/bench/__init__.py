"""Benchmark harness: workload generators, drivers, and CSV reporting."""

from .workload import KvSpec, TxnSpec, ZipfGenerator, key_of
from .runner import (
    BenchSetup,
    RunMetrics,
    build_store,
    default_device_blocks,
    precondition,
    run_kv,
    run_txn,
    sweep_keys_per_bucket,
    sweep_offered_load,
)
from .report import CSV_COLUMNS, metrics_to_row, parse_csv, summary_lines, write_csv

__all__ = [
    "BenchSetup",
    "CSV_COLUMNS",
    "KvSpec",
    "RunMetrics",
    "TxnSpec",
    "ZipfGenerator",
    "build_store",
    "default_device_blocks",
    "key_of",
    "metrics_to_row",
    "parse_csv",
    "precondition",
    "run_kv",
    "run_txn",
    "summary_lines",
    "sweep_keys_per_bucket",
    "sweep_offered_load",
]
