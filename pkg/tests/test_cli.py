import csv
import io
import json
import os

import pytest

from mapf_fico.benchmark import COLUMNS, ConfigError, RunConfig, report_agent_reduction, run_benchmark
from mapf_fico.cli import main, parse_int_list


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_parse_int_list():
    assert parse_int_list("0-4") == [0, 1, 2, 3, 4]
    assert parse_int_list("1,5,9") == [1, 5, 9]
    assert parse_int_list("1-2,7") == [1, 2, 7]


def test_run_csv_is_byte_identical(capsys):
    args = ["run", "--map", "empty-8-8", "--agents", "6", "--seeds", "7"]
    code, first, _ = run_cli(capsys, *args)
    assert code == 0
    _, second, _ = run_cli(capsys, *args)
    assert first == second
    rows = list(csv.DictReader(io.StringIO(first)))
    assert [r["algo"] for r in rows] == ["fico", "pibt"]
    assert list(rows[0]) == COLUMNS
    assert all(r["delta_soc"] != "" and r["violations"] == "0" for r in rows)


def test_lifelong_rows_have_throughput(capsys):
    code, out, _ = run_cli(capsys, "run", "--map", "empty-8-8", "--agents", "5", "--mode", "lifelong",
                           "--t-max", "30", "--format", "jsonl", "--algo", "fico")
    assert code == 0
    (row,) = [json.loads(x) for x in out.splitlines()]
    assert row["delta_soc"] is None and row["throughput"] > 0
    assert row["steps"] == 30


def test_timing_columns_opt_in(capsys):
    _, out, _ = run_cli(capsys, "run", "--map", "empty-8-8", "--agents", "3", "--timing", "--algo", "pibt")
    row = next(csv.DictReader(io.StringIO(out)))
    assert float(row["ert_s"]) >= 0 and "mean_plan_s" in row


@pytest.mark.parametrize("argv", [
    ["run", "--map", "empty-8-8", "--agents", "65"],
    ["run", "--map", "empty-8-8", "--mode", "lifelong"],
    ["run", "--map", "empty-8-8", "--algo", "cbs"],
    ["run", "--map", "no/such/file.map"],
    ["run", "--map", "empty-8-8", "--horizon", "0"],
])
def test_bad_configs_exit_2(capsys, argv):
    code, _, err = run_cli(capsys, *argv)
    assert code == 2 and err.startswith("error:")


def test_bad_probability_is_usage_error(capsys):
    with pytest.raises(SystemExit) as e:
        main(["run", "--p-delay", "2"])
    assert e.value.code == 2


def test_scenario_file(tmp_path, capsys):
    mp = tmp_path / "m.map"
    mp.write_text("type octile\nheight 3\nwidth 4\nmap\n....\n.@..\n....\n")
    sc = tmp_path / "m.scen"
    sc.write_text("version 1\n0\tm.map\t4\t3\t0\t0\t3\t2\t5\n0\tm.map\t4\t3\t3\t0\t0\t2\t5\n")
    code, out, _ = run_cli(capsys, "run", "--map", str(mp), "--scen", str(sc), "--agents", "2",
                           "--algo", "fico")
    assert code == 0
    row = next(csv.DictReader(io.StringIO(out)))
    assert row["complete"] == "1" and row["violations"] == "0"
    code, _, err = run_cli(capsys, "run", "--map", str(mp), "--scen", str(sc), "--agents", "3")
    assert code == 2


def test_trace_dir(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "run", "--map", "empty-8-8", "--agents", "4", "--algo", "fico",
                         "--trace-dir", str(tmp_path), "--out", str(tmp_path / "rows.csv"))
    assert code == 0
    lines = (tmp_path / "trace_fico_seed0.jsonl").read_text().splitlines()
    assert json.loads(lines[-1])["type"] == "summary"
    assert (tmp_path / "rows.csv").read_text().startswith("map,")


def test_reduction_single_agent(capsys):
    code, out, _ = run_cli(capsys, "reduction", "--map", "empty-8-8", "--agents", "1,20", "--seeds", "0-1")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 4
    assert all(float(r["cf_fraction"]) == 1.0 for r in rows if r["agents"] == "1")


def test_report_writes_figures(tmp_path, capsys):
    out_dir = tmp_path / "rep"
    code, out, _ = run_cli(capsys, "report", "--map", "empty-8-8", "--agents", "4,8", "--seeds", "0-1",
                           "--out-dir", str(out_dir))
    assert code == 0
    names = set(os.listdir(out_dir))
    assert {"results.csv", "reduction.csv", "delta_soc.png", "reduction.png"} <= names
    assert all(os.path.getsize(out_dir / n) > 0 for n in names)


def test_benchmark_api():
    cfg = RunConfig(map="empty-8-8", agents=5, seeds=(0, 1), algos=("fico", "pibt"), threads=2)
    rows = run_benchmark(cfg)
    assert [(r["seed"], r["algo"]) for r in rows] == [(0, "fico"), (0, "pibt"), (1, "fico"), (1, "pibt")]
    assert rows == run_benchmark(RunConfig(map="empty-8-8", agents=5, seeds=(0, 1)))
    red = report_agent_reduction(RunConfig(map="empty-8-8", seeds=(0,)), [1])
    assert red[0]["cf_fraction"] == 1.0
    with pytest.raises(ConfigError):
        RunConfig(p_add=1.5).check()
