"""Command-line benchmark entry point.

Every option can also come from a config file (``--config FILE``) holding
``key=value`` lines that mirror the flag names; values given on the command
line win over the file.  Results print as a one-line summary per run and can
be appended to a CSV with ``--out``.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from ..errors import MvftlError
from .report import summary_lines, write_csv
from .runner import build_store, precondition, run_kv, run_txn
from .workload import KvSpec, TxnSpec

_DEFAULTS = {
    "store": "semel",
    "mode": "kv",
    "single_version": False,
    "keys": 10_000,
    "value_size": 474,
    "get_pct": 95.0,
    "zipf": 0.99,
    "zipf_rw": 0.75,
    "readonly_pct": 90.0,
    "duration": 5.0,
    "rate": 10_000.0,
    "clients": 8,
    "cache_pct": 10.0,
    "keys_per_bucket": 5,
    "device_blocks": None,
    "channels": 8,
    "queue_depth": 128,
    "time": "realtime",
    "seed": 42,
    "out": None,
    "precondition": False,
}

_BOOL_KEYS = {"single_version", "precondition"}
_CHOICES = {"store": ("semel", "skimpy", "vftl"),
            "mode": ("kv", "txn"),
            "time": ("virtual", "realtime")}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mvftl-bench",
        description="Run a KV or transactional benchmark against an emulated flash store.")
    p.add_argument("--config", metavar="FILE", help="key=value option file")
    p.add_argument("--store", choices=_CHOICES["store"], default=None)
    p.add_argument("--mode", choices=_CHOICES["mode"], default=None)
    p.add_argument("--single-version", action="store_true", default=None,
                   help="keep only the newest version of each key")
    p.add_argument("--keys", type=int, default=None, metavar="N")
    p.add_argument("--value-size", type=int, default=None, metavar="B")
    p.add_argument("--get-pct", type=float, default=None, metavar="P",
                   help="KV mode: percentage of operations that are gets")
    p.add_argument("--zipf", type=float, default=None, metavar="A",
                   help="skew for KV keys / transactional read sets")
    p.add_argument("--zipf-rw", type=float, default=None, metavar="A",
                   help="skew for transactional read-write sets")
    p.add_argument("--readonly-pct", type=float, default=None, metavar="P",
                   help="txn mode: percentage of read-only transactions")
    p.add_argument("--duration", type=float, default=None, metavar="S")
    p.add_argument("--rate", type=float, default=None, metavar="R",
                   help="txn mode: offered load, transactions per second")
    p.add_argument("--clients", type=int, default=None, metavar="C")
    p.add_argument("--cache-pct", type=float, default=None, metavar="P",
                   help="skimpy translation cache size, percent of keys")
    p.add_argument("--keys-per-bucket", type=int, default=None, metavar="K")
    p.add_argument("--device-blocks", type=int, default=None, metavar="N",
                   help="emulated device size (default: sized from --keys)")
    p.add_argument("--channels", type=int, default=None, metavar="C")
    p.add_argument("--queue-depth", type=int, default=None, metavar="Q")
    p.add_argument("--time", choices=_CHOICES["time"], default=None,
                   help="virtual: simulated latencies, deterministic; "
                        "realtime: operations take wall-clock time (default)")
    p.add_argument("--seed", type=int, default=None, metavar="S")
    p.add_argument("--out", metavar="FILE.csv", default=None,
                   help="append-style CSV output (header + one row per run)")
    p.add_argument("--precondition", action="store_true", default=None,
                   help="load all keys and run GC warm-up before measuring")
    return p


def _coerce(key: str, text: str):
    text = text.strip()
    if key in _BOOL_KEYS:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise MvftlError(f"config: {key} expects a boolean, got {text!r}")
    if key in _CHOICES:
        if text not in _CHOICES[key]:
            raise MvftlError(f"config: {key} must be one of {_CHOICES[key]}, got {text!r}")
        return text
    if key == "out":
        return text
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise MvftlError(f"config: {key} expects a number, got {text!r}")


def load_config(path: str) -> dict:
    """Parse a key=value option file; '#' starts a comment line."""
    values: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise MvftlError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, text = line.partition("=")
            key = key.strip().replace("-", "_")
            if key not in _DEFAULTS:
                raise MvftlError(f"{path}:{lineno}: unknown option {key!r}")
            values[key] = _coerce(key, text)
    return values


def merge_options(args: argparse.Namespace) -> dict:
    """defaults < config file < explicit command-line flags."""
    merged = dict(_DEFAULTS)
    if args.config:
        merged.update(load_config(args.config))
    for key in _DEFAULTS:
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            merged[key] = cli_val
    return merged


def run_from_options(opt: dict) -> "RunMetrics":
    from .runner import RunMetrics  # noqa: F401  (type only)

    setup = build_store(
        opt["store"],
        keys=opt["keys"],
        value_size=opt["value_size"],
        device_blocks=opt["device_blocks"],
        channels=opt["channels"],
        queue_depth=opt["queue_depth"],
        time_mode=opt["time"],
        multi_version=not opt["single_version"],
        keys_per_bucket=opt["keys_per_bucket"],
        cache_fraction=opt["cache_pct"] / 100.0,
        watermark_mode="kv" if opt["mode"] == "kv" else "txn",
    )
    if opt["mode"] == "kv":
        spec = KvSpec(keys=opt["keys"], value_size=opt["value_size"],
                      get_pct=opt["get_pct"], zipf_alpha=opt["zipf"],
                      clients=opt["clients"], duration_s=opt["duration"],
                      single_version=opt["single_version"])
    else:
        spec = TxnSpec(keys=opt["keys"], value_size=opt["value_size"],
                       readonly_pct=opt["readonly_pct"],
                       alpha_read=opt["zipf"], alpha_rw=opt["zipf_rw"],
                       rate_tps=opt["rate"], duration_s=opt["duration"],
                       clients=opt["clients"],
                       single_version=opt["single_version"])
    if opt["precondition"]:
        precondition(setup, spec, np.random.default_rng(opt["seed"]))
    if opt["mode"] == "kv":
        return run_kv(setup, spec, seed=opt["seed"])
    return run_txn(setup, spec, seed=opt["seed"])


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        opt = merge_options(args)
        metrics = run_from_options(opt)
    except MvftlError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    for line in summary_lines([metrics]):
        print(line)
    if opt["out"]:
        write_csv(opt["out"], [metrics])
        print(f"wrote {opt['out']}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
