import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from ippest.cli import main

ROOT = Path(__file__).resolve().parents[1]
GAMMA = {"family": "gamma", "alpha": 2.0, "beta": 3.0}
SINE = {"family": "sine", "A": 1.0, "lambda0": 2.0, "theta": [1.0]}


def write_config(tmp_path, cfg, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def simulate(tmp_path, model, n, seed, capsys, name="events.ndjson", extra=()):
    cfg = write_config(tmp_path, {"model": model, "seed": {"base_seed": seed}}, f"sim_{name}.json")
    out = str(tmp_path / name)
    code, _, _ = run(["simulate", "-c", cfg, "--n", str(n), "-o", out, *extra], capsys)
    assert code == 0
    return out


def cli(*args):
    return subprocess.run([sys.executable, "-m", "ippest", *args], capture_output=True, cwd=ROOT, check=False)


# ---------------------------------------------------------------- simulate


def test_simulate_writes_one_line_per_path(tmp_path, capsys):
    cfg = write_config(tmp_path, {"model": GAMMA, "seed": {"base_seed": 7}})
    code, out, err = run(["simulate", "-c", cfg, "--n", "10"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 10
    assert all(isinstance(json.loads(line)["events"], list) for line in lines)
    assert err.startswith("n=10 total_events=")
    assert run(["simulate", "-c", cfg, "--n", "10"], capsys)[1] == out


def test_simulate_rejects_zero_paths(tmp_path, capsys):
    cfg = write_config(tmp_path, {"model": GAMMA})
    code, _, err = run(["simulate", "-c", cfg, "--n", "0"], capsys)
    assert code == 2 and "ConfigError" in err


def test_simulate_flat_sine_mean_count(tmp_path, capsys):
    path = simulate(tmp_path, {"family": "sine", "A": 0.0, "lambda0": 2.0, "theta": [1.0]}, 10000, 1, capsys)
    counts = [len(json.loads(line)["events"]) for line in Path(path).read_text().splitlines()]
    assert np.mean(counts) == pytest.approx(2.0, abs=0.05)


def test_theta_override_dimension(tmp_path, capsys):
    cfg = write_config(tmp_path, {"model": GAMMA})
    code, _, err = run(["simulate", "-c", cfg, "--n", "5", "--theta", "1,2,3"], capsys)
    assert code == 2 and "--theta" in err


# ---------------------------------------------------------------- estimate


def test_mme_round_trip_within_three_standard_errors(tmp_path, capsys):
    cfg = write_config(tmp_path, {"model": GAMMA, "moments": {"g": ["poly:1", "poly:2"]}})
    D = np.array([[48.0, 88.0], [88.0, 168.0]])
    bound = 3 * np.sqrt(np.diag(D) / 1000)
    inside = 0
    for seed in range(20):
        events = simulate(tmp_path, GAMMA, 1000, seed, capsys)
        code, out, _ = run(["mme", "-c", cfg, "-i", events], capsys)
        assert code == 0
        result = json.loads(out)
        assert result["estimator"] == "mme" and result["N"] is None and result["preliminary"] is None
        inside += np.all(np.abs(np.array(result["theta"]) - [2.0, 3.0]) < bound)
    assert inside >= 18


def test_onestep_delta_out_of_range(tmp_path, capsys):
    events = simulate(tmp_path, GAMMA, 200, 1, capsys)
    cfg = write_config(tmp_path, {"model": GAMMA})
    code, out, err = run(["onestep", "-c", cfg, "-i", events, "--delta", "0.45"], capsys)
    assert code == 4 and "DeltaOutOfRange" in err and out == ""


def test_onestep_json_fields(tmp_path, capsys):
    events = simulate(tmp_path, GAMMA, 1000, 2, capsys)
    cfg = write_config(tmp_path, {"model": GAMMA})
    code, out, _ = run(["onestep", "-c", cfg, "-i", events], capsys)
    result = json.loads(out)
    assert code == 0 and result["N"] == 63 and result["n"] == 1000 and result["delta"] == 0.6
    assert result["learning_paths"] == [0, 63] and result["correction_paths"] == [63, 1000]


def test_empty_event_file(tmp_path, capsys):
    empty = tmp_path / "empty.ndjson"
    empty.write_text("")
    cfg = write_config(tmp_path, {"model": GAMMA})
    code, _, err = run(["mme", "-c", cfg, "-i", str(empty)], capsys)
    assert code == 4 and "EmptySample" in err


def test_malformed_event_file(tmp_path, capsys):
    bad = tmp_path / "bad.ndjson"
    bad.write_text('{"events": [0.5, 0.2]}\nnot json\n')
    cfg = write_config(tmp_path, {"model": GAMMA})
    code, _, err = run(["mme", "-c", cfg, "-i", str(bad)], capsys)
    assert code == 3


def test_missing_event_file(tmp_path, capsys):
    cfg = write_config(tmp_path, {"model": GAMMA})
    code, _, _ = run(["mme", "-c", cfg, "-i", str(tmp_path / "nope.ndjson")], capsys)
    assert code == 3


def test_missing_config_file(tmp_path, capsys):
    code, _, _ = run(["fisher", "-c", str(tmp_path / "nope.json")], capsys)
    assert code == 3


@pytest.mark.parametrize("cfg", [
    {"model": GAMMA, "optimizer": {}},
    {"model": GAMMA, "simulate": {"n": 5, "colour": "red"}},
    {"model": {"family": "weibull"}},
])
def test_bad_config_sections(tmp_path, capsys, cfg):
    path = write_config(tmp_path, cfg)
    code, _, err = run(["simulate", "-c", path, "--n", "5"], capsys)
    assert code == 2 and "ConfigError" in err


def test_invalid_json_config(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{")
    assert run(["fisher", "-c", str(path)], capsys)[0] == 2


# ---------------------------------------------------------------- trace


def read_trace(text):
    return list(csv.reader(text.splitlines()))


def test_trace_rows_and_final_value(tmp_path, capsys):
    events = simulate(tmp_path, GAMMA, 500, 3, capsys)
    cfg = write_config(tmp_path, {"model": GAMMA})
    code, out, _ = run(["trace", "-c", cfg, "-i", events], capsys)
    rows = read_trace(out)
    assert code == 0 and rows[0] == ["k", "theta_1", "theta_2", "clipped_flag"]
    assert len(rows) - 1 == 500 - 41
    assert rows[1][0] == "42" and rows[-1][0] == "500"
    _, est, _ = run(["onestep", "-c", cfg, "-i", events], capsys)
    assert [float(v) for v in rows[-1][1:3]] == json.loads(est)["theta"]

    _, strided, _ = run(["trace", "-c", cfg, "-i", events, "--stride", "50"], capsys)
    full = {r[0]: r for r in rows[1:]}
    srows = read_trace(strided)[1:]
    assert srows[-1][0] == "500"
    assert all(full[r[0]] == r for r in srows)


def test_twostep_trace(tmp_path, capsys):
    events = simulate(tmp_path, SINE, 2000, 13, capsys)
    cfg = write_config(tmp_path, {"model": SINE})
    code, out, _ = run(["trace", "-c", cfg, "-i", events, "--mode", "twostep", "--stride", "100"], capsys)
    rows = read_trace(out)
    assert code == 0 and rows[0] == ["k", "theta_1", "clipped_flag"]
    assert rows[1][0] == "30" and rows[-1][0] == "2000"
    assert abs(float(rows[-1][1]) - 1.0) < 0.2


# ---------------------------------------------------------------- fisher


def test_fisher_gamma(tmp_path, capsys):
    cfg = write_config(tmp_path, {"model": GAMMA, "moments": {"g": ["poly:1", "poly:2"]}})
    code, out, _ = run(["fisher", "-c", cfg], capsys)
    rows = {(r[0], r[1]): r[2:] for r in read_trace(out)[1:]}
    assert code == 0
    assert [float(v) for v in rows[("fisher", "1")]] == pytest.approx([0.75, -0.5], abs=1e-9)
    assert float(rows[("fisher", "2")][1]) == pytest.approx(math.pi**2 / 6 - 1.25, abs=1e-9)
    assert [float(v) for v in rows[("mme_covariance", "2")]] == pytest.approx([88.0, 168.0], abs=1e-6)
    assert float(rows[("trace", "mme_covariance")][0]) == pytest.approx(216.0, abs=1e-6)


def test_fisher_sine(tmp_path, capsys):
    cfg = write_config(tmp_path, {"model": SINE})
    code, out, _ = run(["fisher", "-c", cfg], capsys)
    rows = read_trace(out)
    assert code == 0 and float(rows[1][2]) == pytest.approx(2 - math.sqrt(3), abs=1e-9)


def test_fisher_needs_theta(tmp_path, capsys):
    cfg = write_config(tmp_path, {"model": {"family": "gamma"}})
    assert run(["fisher", "-c", cfg], capsys)[0] == 2


# ---------------------------------------------------------------- determinism


def test_simulate_and_estimate_are_byte_identical(tmp_path):
    cfg = str(ROOT / "configs" / "gamma.json")
    first = cli("simulate", "-c", cfg, "--n", "200")
    second = cli("simulate", "-c", cfg, "--n", "200")
    assert first.returncode == 0 and first.stdout == second.stdout
    events = tmp_path / "e.ndjson"
    events.write_bytes(first.stdout)
    a = cli("onestep", "-c", cfg, "-i", str(events))
    b = cli("onestep", "-c", cfg, "-i", str(events))
    assert a.returncode == 0 and a.stdout == b.stdout


def test_study_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path, {"model": SINE, "seed": {"base_seed": 5},
                                  "study": {"n": 200, "M": 40, "estimators": ["mme", "onestep"]}})
    outs = []
    for i in range(2):
        out, summary = tmp_path / f"study{i}.json", tmp_path / f"summary{i}.csv"
        res = cli("study", "-c", cfg, "--threads", "1", "-o", str(out), "--summary", str(summary))
        assert res.returncode == 0, res.stderr
        outs.append((out.read_bytes(), summary.read_bytes()))
    assert outs[0] == outs[1]
    report = json.loads(outs[0][0])
    assert report["M"] == 40 and set(report["estimators"]) == {"mme", "onestep"}
