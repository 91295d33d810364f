import json
import subprocess
import sys

import pytest

from tiltcomb.cli import ResultEnvelope, execute, main, parse_config
from tiltcomb.config import BRule, build_config, read_config_file
from tiltcomb.errors import ParseError


def run_json(argv, capsys):
    rc = main(argv + ["--format", "json"])
    out = capsys.readouterr()
    return rc, (json.loads(out.out) if out.out else None), out.err


# --- B rules -----------------------------------------------------------------------


def test_b_rules():
    assert BRule("all").resolve(5) is None
    assert BRule("none").resolve(5) == []
    assert BRule("odd").resolve(6) == [1, 3, 5]
    assert BRule("even").resolve(6) == [2, 4, 6]
    assert BRule("prefix:3").resolve(10) == [1, 2, 3]
    assert BRule("power:0.4").resolve(1000) == list(range(1, 16))
    assert BRule("list:4,2,9").resolve(5) == [2, 4]
    for bad in ("prime", "power:2", "prefix:-1", "list:0"):
        with pytest.raises(ParseError):
            BRule(bad)


# --- parse_config -------------------------------------------------------------------


def test_parse_count_flags():
    cfg = parse_config(["count", "--family", "multiset", "--U", "all", "--R", "unbounded", "--n", "100"])
    assert cfg.command == "count" and cfg.n == (100,)
    assert cfg.ensemble == {"family": "multiset", "U": "all", "R": "unbounded"}


def test_parse_tv_odd():
    cfg = parse_config(["tv", "--B", "odd", "--n", "500"])
    assert cfg.command == "tv" and cfg.B == "odd" and cfg.n == (500,)
    assert cfg.b_rule().resolve(7) == [1, 3, 5, 7]


def test_grid_not_increasing():
    with pytest.raises(ParseError) as info:
        parse_config(["count", "--n", "100,50"])
    assert info.value.field == "n"


@pytest.mark.parametrize("argv", [
    ["count", "--n", "10", "--format", "xml"],
    ["count", "--n", "10", "--seed", "-1"],
    ["count", "--n", "10", "--seed", str(2 ** 64)],
    ["count", "--n", "abc"],
    ["count", "--n", "10", "--family", "groups"],
    ["tv", "--n", "10", "--B", "prime"],
    ["count"],
    ["stats", "--n", "10", "--statistic", "median"],
    ["count", "--n", "10", "--threshold", "nope=1"],
])
def test_parse_errors(argv):
    with pytest.raises(ParseError):
        parse_config(argv)


def test_config_file_with_line_numbers(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\ncommand = verdict\nn = 200,500\nB = power:0.4\n\n[ensemble]\nfamily = multiset\n"
                    "U = all\n\n[thresholds]\nsigma_lambda_M = 0.01\n")
    cfg = parse_config(["--config", str(path)])
    assert cfg.command == "verdict" and cfg.n == (200, 500) and cfg.thresholds == {"sigma_lambda_M": 0.01}
    # flags win over the file
    assert parse_config(["--config", str(path), "--n", "300"]).n == (300,)
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\ncommand = count\nn = 10\ncolour = 3\n")
    with pytest.raises(ParseError) as info:
        read_config_file(bad)
    assert info.value.line == 4 and info.value.field == "colour"
    worse = tmp_path / "worse.ini"
    worse.write_text("[run]\ncommand = count\nn = 30,20\n")
    with pytest.raises(ParseError) as info:
        parse_config(["--config", str(worse)])
    assert info.value.line == 3


def test_unknown_section(tmp_path):
    path = tmp_path / "x.ini"
    path.write_text("[extra]\na = 1\n")
    with pytest.raises(ParseError):
        read_config_file(path)


def test_build_config_requires_command():
    with pytest.raises(ParseError):
        build_config({"run": {"n": ("10", 1)}})


# --- execute ------------------------------------------------------------------------


def test_count_row(capsys):
    rc, doc, _ = run_json(["count", "--n", "10"], capsys)
    assert rc == 0
    assert doc["payload"]["rows"][0]["count"] == "42" and doc["payload"]["rows"][0]["n"] == 10


def test_count_set_partitions(capsys):
    rc, doc, _ = run_json(["count", "--family", "assembly", "--n", "5,10"], capsys)
    assert rc == 0 and [r["count"] for r in doc["payload"]["rows"]] == ["52", "115975"]


def test_approx_row():
    env = execute(parse_config(["approx", "--n", "1000"]))
    row = env.payload["rows"][0]
    for key in ("exact", "log_estimate", "ratio", "sigma_max_over_sigma", "sigma_lambda_M", "M_size"):
        assert row[key] is not None
    assert abs(row["ratio"] - 1) < 3 * 1000 ** -0.25


def test_verdict_greedy(capsys):
    rc, doc, _ = run_json(["verdict", "--n", "300", "--B", "all"], capsys)
    assert rc == 0 and doc["payload"]["rows"][0]["verdict"] == "GreedyFailure"


def test_tv_and_budget_rows():
    env = execute(parse_config(["tv", "--n", "200,400", "--B", "prefix:5"]))
    rows = env.payload["rows"]
    assert [r["n"] for r in rows] == [200, 400]
    assert rows[1]["d_TV_exact"] < rows[0]["d_TV_exact"]
    env = execute(parse_config(["budget", "--n", "500", "--B", "odd"]))
    assert env.payload["rows"][0]["M_size"] > 0


def test_stats_and_sample(tmp_path):
    env = execute(parse_config(["stats", "--n", "40", "--samples", "200", "--seed", "3"]))
    row = env.payload["rows"][0]
    assert row["samples"] == 200 and row["acceptance_rate"] > 0
    out = tmp_path / "s.ndjson"
    env = execute(parse_config(["sample", "--n", "25", "--samples", "10", "--samples_out", str(out)]))
    assert len(env.payload["rows"]) == 10 and all(r["total"] == 25 for r in env.payload["rows"])
    assert len(out.read_text().splitlines()) == 11


def test_byte_stable_payload():
    argv = ["stats", "--n", "30,60", "--samples", "100", "--seed", "12345678901234567890"]
    a = execute(parse_config(argv))
    b = execute(parse_config(argv + ["--jobs", "2"]))
    assert a.payload_json() == b.payload_json()
    assert a.payload["command"]["seed"] == "12345678901234567890"


def test_grid_order_preserved_in_parallel():
    env = execute(parse_config(["tilt", "--n", "20,50,80", "--jobs", "3"]))
    assert [r["n"] for r in env.payload["rows"]] == [20, 50, 80]


def test_csv_output(tmp_path):
    out = tmp_path / "c.csv"
    rc = main(["count", "--n", "4,5", "--format", "csv", "--out", str(out)])
    text = out.read_text().splitlines()
    assert rc == 0
    assert text[0].startswith("# timestamp")
    assert "n,count,log_count" in text and text[-1].startswith("5,7,")


def test_warnings_recorded_exit_zero(capsys):
    rc, doc, _ = run_json(["budget", "--n", "50", "--C3", "1e9"], capsys)
    assert rc == 0 and any("EmptyStabilizingSet" in w for w in doc["payload"]["warnings"])


def test_module_error_exit_code(capsys):
    rc = main(["tilt", "--n", "5", "--U", "list:1", "--R", "bounded:1"])
    err = json.loads(capsys.readouterr().err)
    assert rc == 1 and err["error"] == "BracketFailure"


def test_parse_error_exit_code(capsys):
    rc = main(["count", "--n", "100,50"])
    err = json.loads(capsys.readouterr().err)
    assert rc == 2 and err["error"] == "ParseError" and err["field"] == "n"


def test_envelope_isolates_header():
    env = ResultEnvelope({"rows": [{"a": 1}]}, {"timestamp": "t"})
    doc = json.loads(env.to_json())
    assert doc["header"] == {"timestamp": "t"} and doc["payload"] == {"rows": [{"a": 1}]}


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "tiltcomb.cli", "count", "--n", "10"], capture_output=True,
                         text=True, check=True)
    assert json.loads(out.stdout)["payload"]["rows"][0]["count"] == "42"
