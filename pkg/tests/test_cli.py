"""Benchmark CLI: flag names, config files, precedence, end-to-end runs."""

import pytest

from mvftl.bench.cli import (
    _DEFAULTS,
    build_parser,
    load_config,
    main,
    merge_options,
)
from mvftl.bench.report import parse_csv
from mvftl.errors import MvftlError


def parse(argv):
    return build_parser().parse_args(argv)


class TestFlags:
    def test_every_documented_flag_parses(self):
        args = parse([
            "--store", "skimpy", "--mode", "txn", "--single-version",
            "--keys", "500", "--value-size", "256", "--get-pct", "90",
            "--zipf", "0.99", "--zipf-rw", "0.75", "--readonly-pct", "80",
            "--duration", "2", "--rate", "1000", "--clients", "4",
            "--cache-pct", "10", "--keys-per-bucket", "5",
            "--device-blocks", "64", "--channels", "8",
            "--queue-depth", "128", "--time", "virtual", "--seed", "7",
            "--out", "x.csv", "--precondition",
        ])
        assert args.store == "skimpy"
        assert args.mode == "txn"
        assert args.single_version is True
        assert args.keys == 500
        assert args.value_size == 256
        assert args.zipf_rw == 0.75
        assert args.time == "virtual"
        assert args.precondition is True

    def test_bad_store_rejected(self):
        with pytest.raises(SystemExit):
            parse(["--store", "rocksdb"])

    def test_defaults(self):
        merged = merge_options(parse([]))
        assert merged["store"] == "semel"
        assert merged["mode"] == "kv"
        assert merged["time"] == "realtime"
        assert merged["seed"] == 42
        assert merged["keys"] == 10_000
        assert merged["single_version"] is False

    def test_unset_flags_stay_none(self):
        # None marks "not given", so config values are not shadowed.
        args = parse([])
        assert args.store is None
        assert args.single_version is None


class TestConfigFile:
    def write(self, tmp_path, text):
        f = tmp_path / "bench.conf"
        f.write_text(text)
        return str(f)

    def test_basic_parse(self, tmp_path):
        path = self.write(tmp_path, """
# comment line
store = skimpy
keys=250
get-pct = 80.5
single-version = true
time=virtual
""")
        values = load_config(path)
        assert values == {"store": "skimpy", "keys": 250, "get_pct": 80.5,
                          "single_version": True, "time": "virtual"}

    def test_unknown_key(self, tmp_path):
        path = self.write(tmp_path, "threads=4\n")
        with pytest.raises(MvftlError, match="unknown option"):
            load_config(path)

    def test_malformed_line(self, tmp_path):
        path = self.write(tmp_path, "just some words\n")
        with pytest.raises(MvftlError, match="key=value"):
            load_config(path)

    def test_bad_boolean(self, tmp_path):
        path = self.write(tmp_path, "precondition=maybe\n")
        with pytest.raises(MvftlError, match="boolean"):
            load_config(path)

    def test_bad_choice(self, tmp_path):
        path = self.write(tmp_path, "store=leveldb\n")
        with pytest.raises(MvftlError, match="one of"):
            load_config(path)

    def test_bad_number(self, tmp_path):
        path = self.write(tmp_path, "keys=lots\n")
        with pytest.raises(MvftlError, match="number"):
            load_config(path)

    def test_cli_overrides_config(self, tmp_path):
        path = self.write(tmp_path, "keys=100\nseed=1\n")
        merged = merge_options(parse(["--config", path, "--seed", "9"]))
        assert merged["keys"] == 100   # from config
        assert merged["seed"] == 9     # CLI wins
        assert merged["store"] == "semel"  # untouched default


class TestEndToEnd:
    COMMON = ["--keys", "64", "--duration", "0.05", "--time", "virtual",
              "--clients", "2", "--device-blocks", "24"]

    def test_kv_run_writes_csv(self, tmp_path, capsys):
        out = tmp_path / "r.csv"
        rc = main(["--store", "semel", "--mode", "kv", "--out", str(out),
                   "--precondition", *self.COMMON])
        assert rc == 0
        captured = capsys.readouterr()
        assert "semel/kv" in captured.out
        rows = parse_csv(out)
        assert len(rows) == 1
        assert rows[0]["store"] == "semel"
        assert rows[0]["mode"] == "kv"
        assert rows[0]["throughput"] > 0

    def test_txn_run(self, tmp_path, capsys):
        out = tmp_path / "t.csv"
        rc = main(["--store", "vftl", "--mode", "txn", "--rate", "500",
                   "--out", str(out), "--precondition", *self.COMMON])
        assert rc == 0
        rows = parse_csv(out)
        assert rows[0]["mode"] == "txn"
        assert rows[0]["commit_rate"] is not None

    def test_skimpy_single_version_is_an_error(self, capsys):
        rc = main(["--store", "skimpy", "--single-version", *self.COMMON])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_config_driven_run(self, tmp_path, capsys):
        conf = tmp_path / "c.conf"
        conf.write_text(
            "store=skimpy\nmode=kv\nkeys=64\nduration=0.05\n"
            "time=virtual\nclients=2\ndevice-blocks=24\nprecondition=true\n")
        rc = main(["--config", str(conf)])
        assert rc == 0
        assert "skimpy/kv" in capsys.readouterr().out

    def test_missing_config_file(self, capsys):
        with pytest.raises(OSError):
            main(["--config", "/nonexistent/x.conf"])
