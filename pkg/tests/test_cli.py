import csv
import json

import numpy as np
import pytest

from procequil.cli import ExperimentConfig, instance_rng, main, validate
from procequil.errors import ValidationError
from procequil.process import build_process
from procequil.spectral import Hamiltonian, diagonalize


def run_cli(tmp_path, command, config, *flags):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(config))
    out = tmp_path / "out"
    code = main([command, "--config", str(cfg_path), "--out", str(out), *flags])
    return code, out


def records(out):
    return [json.loads(line) for line in (out / "results.jsonl").read_text().splitlines()]


def test_verify_bounds_campaign(tmp_path):
    code, out = run_cli(tmp_path, "verify-bounds", {"instances": 6, "seed": 3, "k": 2})
    assert code == 0
    recs = records(out)
    assert {r["schema"] for r in recs} == {"bound_report/1"}
    assert all(r["holds"] for r in recs)
    assert {r["bound"] for r in recs} >= {"finite_time_k2", "envelope_k2"}
    meta = json.loads((out / "meta.json").read_text())
    assert meta["records"] == len(recs)
    assert meta["config_sources"]["instances"] == "file"
    assert meta["config_sources"]["out"] == "flag"


def test_zero_instances(tmp_path):
    code, out = run_cli(tmp_path, "verify-bounds", {"instances": 0})
    assert code == 0
    assert (out / "results.jsonl").read_text() == ""


@pytest.mark.parametrize("config", [
    {"instances": -1},
    {"ensemble": "nope"},
    {"bogus_field": 1},
    {"k": 2, "windows": [1.0]},
    {"epsilon": -0.5},
])
def test_malformed_config(tmp_path, capsys, config):
    code, out = run_cli(tmp_path, "verify-bounds", config)
    assert code == 2
    assert not out.exists()
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "config"


def test_unreadable_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["verify-bounds", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_budget_exit(tmp_path):
    code, out = run_cli(tmp_path, "verify-bounds", {"instances": 1, "ds": 4, "de": 4, "k": 3})
    assert code == 3
    assert not out.exists()


def test_flags_override_file(tmp_path):
    code, out = run_cli(tmp_path, "born-check", {"instances": 5, "seed": 1, "k": 1}, "--instances", "2")
    assert code == 0
    assert len(records(out)) == 2


def test_born_check_passes(tmp_path):
    code, out = run_cli(tmp_path, "born-check", {"instances": 3, "ds": 3, "de": 3, "k": 3, "seed": 2})
    assert code == 0
    assert all(r["pass"] and r["max_deviation"] <= 1e-9 for r in records(out))


def test_born_check_corrupted_process_file(tmp_path, capsys):
    s = diagonalize(np.diag([0.0, 0.5, 0.7, 1.0]))
    p = build_process(s, np.eye(4) / 4, [0.3, 0.4], 2).to_json()
    p["choi"]["legs"][0]["dim"] = 3
    path = tmp_path / "proc.json"
    path.write_text(json.dumps(p))
    code, out = run_cli(tmp_path, "born-check", {"process_file": str(path)})
    assert code == 2
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "config"


def test_born_check_valid_process_file(tmp_path):
    s = diagonalize(np.diag([0.0, 0.5, 0.7, 1.0]))
    path = tmp_path / "proc.json"
    path.write_text(json.dumps(build_process(s, np.eye(4) / 4, [0.3, 0.4], 2).to_json()))
    code, out = run_cli(tmp_path, "born-check", {"process_file": str(path)})
    assert code == 0
    assert records(out)[0]["causality_residual"] < 1e-9


def test_sweep_single_point(tmp_path):
    cfg = {"instances": 1, "k": 1, "sweep": {"start": 5.0, "stop": 5.0, "points": 1}}
    code, out = run_cli(tmp_path, "sweep-T", cfg)
    assert code == 0
    assert len(records(out)) == 1


def test_sweep_trend(tmp_path):
    cfg = {"instances": 1, "k": 1, "seed": 4, "state_rank": 1,
           "sweep": {"start": 1.0, "stop": 1e4, "points": 25, "log": True}}
    code, out = run_cli(tmp_path, "sweep-T", cfg)
    assert code == 0
    rows = records(out)
    t = np.array([r["T"] for r in rows])
    m = np.array([r["moment"] for r in rows])
    # the moment settles onto its long-time value; the worst deviation per decade shrinks
    dev = np.abs(m - m[-1])
    decades = [dev[(t >= 10.0**a) & (t < 10.0 ** (a + 1))].max() for a in range(3)]
    assert decades == sorted(decades, reverse=True)
    finite = [r["finite_rhs"] for r in rows]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(finite, finite[1:]))
    # g factors shrink monotonically with the window
    g = [r["g"] for r in records(out)]
    assert g == sorted(g, reverse=True)


def test_sweep_degenerate_hamiltonian(tmp_path):
    hfile = tmp_path / "h.json"
    hfile.write_text(json.dumps(Hamiltonian(np.eye(4)).to_json()))
    cfg = {"instances": 2, "k": 1, "ensemble": "from_file", "hamiltonian_file": str(hfile),
           "sweep": {"start": 1.0, "stop": 100.0, "points": 4}}
    code, out = run_cli(tmp_path, "sweep-T", cfg)
    assert code == 0
    assert all(r["moment"] == 0.0 for r in records(out))


def test_classicality_command(tmp_path):
    code, out = run_cli(tmp_path, "classicality", {"instances": 3, "classical": True, "k": 2})
    assert code == 0
    assert all(r["defect_process"] <= 1e-10 for r in records(out))


def test_distances_command(tmp_path):
    code, out = run_cli(tmp_path, "distances", {"instances": 2, "k": 1, "samples": 32})
    assert code == 0
    assert all(r["mean"] <= r["rhs"] + 3 * r["stderr"] for r in records(out))


def test_summary_csv_header(tmp_path):
    code, out = run_cli(tmp_path, "born-check", {"instances": 2, "k": 1})
    lines = (out / "summary.csv").read_text().splitlines()
    assert lines[0].startswith("# columns: ")
    rows = list(csv.DictReader(lines[1:]))
    assert len(rows) == 2
    assert lines[0][len("# columns: "):].split(", ") == list(rows[0].keys())


def test_worker_count_does_not_change_results(tmp_path):
    outs = []
    for w in ("1", "3"):
        d = tmp_path / w
        d.mkdir()
        code, out = run_cli(d, "verify-bounds", {"instances": 4, "seed": 9}, "--workers", w)
        assert code == 0
        outs.append((out / "results.jsonl").read_bytes())
    assert outs[0] == outs[1]


def test_instance_streams_independent():
    a = instance_rng(5, 0).random(4)
    b = instance_rng(5, 1).random(4)
    assert not np.allclose(a, b)
    assert np.array_equal(a, instance_rng(5, 0).random(4))


def test_validate_total_dimension():
    with pytest.raises(ValidationError):
        validate(ExperimentConfig(ds=4, de=8), "verify-bounds")
