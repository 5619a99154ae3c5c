import csv
import io
import json
import time
from pathlib import Path

import numpy as np
import pytest

from llmpred.cli import main, parse_range
from llmpred.decomposition import DEFAULT_GRID
from llmpred.synthetic import sine, two_channel

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def sine_csv(csv_factory):
    return csv_factory(sine(400, 1.0, noise=0.05), names=["sine"])


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_parse_range():
    assert parse_range("0.4..0.8") == [0.4, 0.5, 0.6, 0.7, 0.8]
    assert parse_range("1..4", integer=True) == [1, 2, 3, 4]
    assert parse_range("2.5,5") == [2.5, 5.0]


def test_decompose_json(sine_csv, tmp_path, capsys):
    assert main(["decompose", "--dataset", str(sine_csv), "--out-dir", str(tmp_path)]) == 0
    out = json.loads((tmp_path / "decompose.json").read_text())
    assert out["channels"][0]["split"]["f_cut"] in DEFAULT_GRID
    assert sum(r["selected"] == "True" for r in rows(capsys.readouterr().out)) == 1


def test_alpha_sweep_rows(csv_factory, capsys):
    path = csv_factory(two_channel(300), names=["a", "b"])
    assert main(["decompose", "--dataset", str(path), "--alpha-sweep", "0.4..0.8"]) == 0
    table = rows(capsys.readouterr().out)
    for ch in ("0", "1"):
        assert sum(r["channel"] == ch for r in table) == 5 * len(DEFAULT_GRID)


def test_missing_file_exit_2(tmp_path, capsys):
    assert main(["decompose", "--dataset", str(tmp_path / "nope.csv")]) == 2
    assert capsys.readouterr().err.startswith("ERROR MISSING_FILE")


def test_usage_error_exit_2(capsys):
    with pytest.raises(SystemExit) as ei:
        main(["budget", "--h", "x"])
    assert ei.value.code == 2
    assert capsys.readouterr().err.startswith("ERROR USAGE")


@pytest.mark.parametrize("H, lo, hi", [(96, 4, 6), (48, 8, 10)])
def test_budget_table(H, lo, hi, capsys):
    assert main(["budget", "--h", str(H), "--c-range", "1..10"]) == 0
    table = rows(capsys.readouterr().out)
    totals = [int(r["total"]) for r in table]
    assert totals == sorted(totals)
    first_bad = next(int(r["C"]) for r in table if r["feasible"] == "False")
    assert lo <= first_bad <= hi


def test_budget_grouped_never_less_feasible(capsys):
    main(["budget", "--h", "96", "--c-range", "1..10"])
    per_char = rows(capsys.readouterr().out)
    main(["budget", "--h", "96", "--c-range", "1..10", "--scheme", "bpe_grouped"])
    grouped = rows(capsys.readouterr().out)
    for a, b in zip(per_char, grouped):
        assert not (a["feasible"] == "True" and b["feasible"] == "False")


def test_bad_alpha_is_config_error(sine_csv, tmp_path, capsys):
    code = main(["evaluate", "--dataset", str(sine_csv), "--alpha", "1.5", "--out-dir", str(tmp_path)])
    assert code == 2
    err = capsys.readouterr().err
    assert err.startswith("ERROR CONFIG_ERROR") and "alpha" in err


def test_print_config_applies_overrides(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dataset": "d.csv", "H": 96, "seed": 1}))
    assert main(["evaluate", "--config", str(cfg), "--seed", "9", "--print-config"]) == 0
    resolved = json.loads(capsys.readouterr().out)
    assert resolved["seed"] == 9 and resolved["H"] == 96
    assert resolved["dataset"] == str(tmp_path / "d.csv")


def test_shipped_example_and_warm_cache(tmp_path, capsys):
    out = tmp_path / "run"
    args = ["evaluate", "--config", str(ROOT / "configs" / "mock_example.json"), "--out-dir", str(out)]
    t0 = time.perf_counter()
    assert main(args) == 0
    assert time.perf_counter() - t0 < 60
    first = json.loads((out / "run_stats.json").read_text())
    report = json.loads((out / "report.json").read_text())
    assert main(args) == 0
    second = json.loads((out / "run_stats.json").read_text())
    assert second["backend_calls"] == 0
    # two prompts (low and high component) per window
    n_windows = report["meta"]["n_windows"] - report["meta"]["n_skipped_windows"]
    assert second["cache_hits"] == first["backend_calls"] == 2 * n_windows
    assert (out / "report.json").read_text() == json.dumps(report, indent=2, sort_keys=True)


def test_forecast_writes_csv(sine_csv, tmp_path, capsys):
    out = tmp_path / "f"
    code = main(["forecast", "--dataset", str(sine_csv), "--h", "48", "--out-dir", str(out), "--seed", "3"])
    assert code == 0
    table = rows((out / "forecasts.csv").read_text())
    assert table and set(table[0]) == {"window", "offset", "channel", "step", "forecast", "truth"}
    assert "scored=" in capsys.readouterr().out


def test_budget_exceeded_exit_1(csv_factory, tmp_path, capsys):
    path = csv_factory(np.random.default_rng(0).normal(size=(300, 9)))
    code = main(["evaluate", "--dataset", str(path), "--h", "96", *sum((["--channel", str(c)] for c in range(8)), []),
                 "--out-dir", str(tmp_path)])
    assert code == 1
    assert capsys.readouterr().err.startswith("ERROR BUDGET_EXCEEDED")
