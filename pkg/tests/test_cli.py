from __future__ import annotations

import csv
import subprocess
import sys

import pytest

from ssle import experiments as ex
from ssle.cli import main


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_empty_seed_range_is_a_config_error(tmp_path, capsys):
    assert main(["--seeds", "5..2", "--graph", "path:4", "--out", str(tmp_path)]) == 2
    assert "seed range is empty" in capsys.readouterr().err
    assert not (tmp_path / "summary.csv").exists()


@pytest.mark.parametrize("argv", [["--graph", "wheel:4"], ["--graph", "path:0"],
                                  ["--graph", "path:4", "--adversary", "hostile:99"],
                                  ["--graph", "path:4", "--max-rounds", "0"]])
def test_bad_arguments_are_config_errors(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path), "--quiet"]) == 2


def test_ten_clean_path_runs(tmp_path):
    code = main(["--graph", "path:4", "--seeds", "0..9", "--out", str(tmp_path), "--quiet"])
    assert code == 0
    rows = read_csv(tmp_path / "summary.csv")
    assert len(rows) == 10
    assert all(r["failed"] == "" and set(r["verdicts"]) == {"1"} for r in rows)
    assert all(r["within_bound"] == "1" for r in rows)
    assert len(list((tmp_path / "runs").glob("*.jsonl"))) == 10
    for name in ("aggregate.csv", "scaling.csv", "report.txt"):
        assert (tmp_path / name).exists()


def test_output_is_byte_reproducible_across_job_counts(tmp_path):
    argv = ["--graph", "cycle:3", "--adversary", "random", "--seeds", "0..3", "--no-traces", "--quiet"]
    assert main(argv + ["--out", str(tmp_path / "a")]) == 0
    assert main(argv + ["--out", str(tmp_path / "b")]) == 0
    assert main(argv + ["--out", str(tmp_path / "c"), "--jobs", "2"]) == 0
    a = (tmp_path / "a" / "summary.csv").read_bytes()
    assert a == (tmp_path / "b" / "summary.csv").read_bytes() == (tmp_path / "c" / "summary.csv").read_bytes()
    assert not (tmp_path / "a" / "runs").exists()


def test_config_file(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(f"graphs = path:2, star:3\nadversaries = clean hostile:1\nseeds = 0..1\n"
                   f"out = {tmp_path / 'o'}\ntraces = false\nquiet = true\n")
    assert main(["--config", str(cfg)]) == 0
    rows = read_csv(tmp_path / "o" / "summary.csv")
    assert len(rows) == 2 * 2 * 2
    assert {r["strategy"] for r in rows} == {"clean", "hostile:1"}
    cfg.write_text("colour = blue\n")
    assert main(["--config", str(cfg)]) == 2


def test_parsers():
    assert ex.parse_seeds("3..5") == range(3, 6)
    assert ex.parse_seeds("7") == range(7, 8)
    assert ex.parse_graph("gnp:8:0.3") == ex.GraphSpec("gnp", 8, 0.3)
    assert len(ex.parse_adversary("hostile")) == 7
    assert len(ex.parse_adversary("all")) == 9
    with pytest.raises(ex.ConfigError):
        ex.parse_graph("gnp:8:1.5")
    with pytest.raises(ex.ConfigError):
        ex.parse_seeds("a..b")


def test_findany_bench_from_the_command_line(tmp_path, capsys):
    assert main(["--findany", "30", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "findany.csv")
    assert {r["fixture"] for r in rows} == {f.name for f in ex.standard_fixtures()}
    assert all(r["unsound"] == "0" for r in rows)
    assert "success=" in capsys.readouterr().out


def test_module_entry_point_help():
    out = subprocess.run([sys.executable, "-m", "ssle", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "--seeds" in out.stdout
