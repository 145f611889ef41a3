import csv
import json

import pytest

from rwrs.cli import main
from rwrs.config import SCHEMA_VERSION


def _write(tmp_path, name="c.json", **over):
    cfg = {
        "schema": SCHEMA_VERSION,
        "seed": 3,
        "law": {"family": "unit"},
        "scenery": {"family": "frechet"},
        "n": 2000,
        "reps": 150,
        **over,
    }
    p = tmp_path / name
    p.write_text(json.dumps(cfg, indent=2))
    return p


def test_version(capsys):
    assert main(["version"]) == 0
    assert "rwrs 0.1.0" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        ["estimate-q", "--alpha", "1.5"],
        ["estimate-q", "--alpha", "0"],
        ["estimate-q", "--law", "zipf"],
        ["poisson"],
        ["nonsense"],
    ],
)
def test_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_estimate_q_unit(tmp_path, capsys):
    assert main(["estimate-q", "--law", "unit", "--horizon", "100", "--reps", "10", "--out-dir", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "q_estimate.csv").open()))
    assert float(rows[0]["estimate"]) == 1.0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["master_seed"] == 0 and len(manifest["config_digest"]) == 64


def test_estimate_q_zipf(tmp_path, capsys):
    argv = ["estimate-q", "--alpha", "0.6", "--horizon", "1000", "--reps", "2000", "--n-range", "20000", "--reps-range", "20", "--threads", "1", "--out-dir", str(tmp_path)]
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert "return-based" in out and "range-slope" in out and "truncation bias" in out


def test_poisson_passes_and_reproduces(tmp_path):
    cfg = _write(tmp_path)
    assert main(["poisson", "--config", str(cfg), "--threads", "1", "--out-dir", str(tmp_path / "a")]) == 0
    assert main(["poisson", "--config", str(cfg), "--threads", "2", "--out-dir", str(tmp_path / "b")]) == 0
    for name in ("records.jsonl", "verdicts.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    # replay from the manifest
    assert main(["poisson", "--config", str(tmp_path / "a" / "manifest.json"), "--threads", "1", "--out-dir", str(tmp_path / "c")]) == 0
    assert (tmp_path / "a" / "records.jsonl").read_bytes() == (tmp_path / "c" / "records.jsonl").read_bytes()


def test_poisson_insufficient_replications(tmp_path, capsys):
    cfg = _write(tmp_path)
    assert main(["poisson", "--config", str(cfg), "--reps", "1", "--out-dir", str(tmp_path)]) == 2
    assert "insufficient replications" in capsys.readouterr().err


def test_poisson_bad_config(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "schema": "rwrs-config/1",\n  "n": "x"\n}\n')
    assert main(["poisson", "--config", str(p), "--out-dir", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "bad.json:3" in err and "field 'n'" in err


def test_poisson_negative_control_exits_zero(tmp_path, capsys):
    cfg = _write(tmp_path, scenery={"family": "moving_max", "m": 2}, n=10**4, reps=200, negative_control=True)
    assert main(["poisson", "--config", str(cfg), "--threads", "1", "--out-dir", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert "FAIL" in out and "expected failure" in out


def test_poisson_failure_exits_one(tmp_path):
    # a deliberately wrong q makes the marks mis-scaled, so the count verdicts must fail
    cfg = _write(tmp_path, law={"family": "zipf", "alpha": 0.6}, q={"value": 0.3}, n=5000, reps=200)
    assert main(["poisson", "--config", str(cfg), "--threads", "1", "--out-dir", str(tmp_path / "o")]) == 1


def test_diagnostics_unit_walk(tmp_path, capsys):
    cfg = _write(tmp_path, diagnostics={"n_grid": [1000, 10000], "reps": 20, "return_reps": 20, "k_ladder": [1, 2, 4]})
    assert main(["diagnostics", "--config", str(cfg), "--threads", "1", "--out-dir", str(tmp_path / "d")]) == 0
    out = capsys.readouterr().out
    assert "D-prime violated: NO" in out
    rows = list(csv.DictReader((tmp_path / "d" / "diagnostics.csv").open()))
    dprime = [float(r["estimate"]) for r in rows if r["functional"] == "dprime_rwrs"]
    assert dprime[1] < dprime[0]
    assert all(r["stderr"] != "" for r in rows)


def test_diagnostics_zipf_flags_violation(tmp_path, capsys):
    cfg = _write(
        tmp_path,
        law={"family": "zipf", "alpha": 0.6},
        diagnostics={"n_grid": [1000, 10000], "reps": 200, "return_reps": 500, "k_ladder": [1, 2, 4, 8, 16]},
    )
    assert main(["diagnostics", "--config", str(cfg), "--threads", "1", "--out-dir", str(tmp_path / "d")]) == 0
    out = capsys.readouterr().out
    assert "D-prime violated: YES" in out
    assert "D^(k) ladder monotone: YES" in out


def test_simulate_walk(tmp_path):
    assert main(["simulate-walk", "--alpha", "0.6", "--n", "500", "--count", "2", "--positions", "--out-dir", str(tmp_path)]) == 0
    lines = (tmp_path / "walks.jsonl").read_text().splitlines()
    rec = json.loads(lines[1])
    assert rec["rep"] == 1 and len(rec["positions"]) == 500
    assert rec["range_size"] == len(set(rec["positions"]))
