import json
import subprocess
import sys

import pytest

from kactransport import cli, suites


def test_pi_is_rejected(tmp_path, capsys):
    assert cli.run(["couple", "--eps", "0.3", "--theta", "3.1415926", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "--theta" in err and "pi" in err


def test_usage_errors_exit_2(tmp_path, capsys):
    assert cli.run(["verify", "--bogus"]) == 2
    assert "--bogus" in capsys.readouterr().err
    assert cli.run(["couple", "--theta", "2"]) == 2
    assert "--eps" in capsys.readouterr().err
    assert cli.run(["simulate", "--theta", "2", "3.1415926", "--eps", "0.1"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"nosuch": {}}')
    assert cli.run(["verify", "--suite", "lemma32", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "--config" in capsys.readouterr().err
    assert cli.run(["couple", "--eps", "0.1", "--theta", "2", "--backend", "grid",
                    "--grid-step", "0.001", "--out", str(tmp_path)]) == 2


def test_verify_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.run(["verify", "--suite", "lemma31", "--seed", "3", "--out", str(a), "--jobs", "1"]) == 0
    assert cli.run(["verify", "--suite", "lemma31", "--seed", "3", "--out", str(b), "--jobs", "2"]) == 0
    ta = (a / "verify_lemma31.json").read_bytes()
    assert ta == (b / "verify_lemma31.json").read_bytes()
    data = json.loads(ta)
    assert data["config"]["seed"] == 3 and "jobs" not in data["config"] and "out" not in data["config"]
    assert "timestamp" not in ta.decode()


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 5, "lemma32": {"eps_list": [0.3]}}))
    assert cli.run(["verify", "--suite", "lemma32", "--config", str(cfg), "--out", str(tmp_path),
                    "--format", "csv"]) == 0
    data = json.loads((tmp_path / "verify_lemma32.json").read_text())
    assert data["config"]["seed"] == 5
    assert data["config"]["parameters"]["lemma32"]["eps_list"] == [0.3]
    assert len(data["entries"]) == 1
    assert (tmp_path / "verify_lemma32.csv").read_text().startswith("name,verdict,estimate")
    assert cli.run(["verify", "--suite", "lemma32", "--config", str(cfg), "--seed", "9",
                    "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "verify_lemma32.json").read_text())["config"]["seed"] == 9


def test_out_dir_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envout"))
    assert cli.run(["appendix", "--check", "thinning"]) == 0
    assert (tmp_path / "envout" / "appendix_thinning.json").exists()
    assert (tmp_path / "envout" / "appendix_thinning_details.json").exists()


def test_report_exit_code_follows_verdicts(tmp_path, capsys):
    good = {"entries": [{"name": "a", "estimate": 1.0, "target": 1.0, "tolerance": 0.1,
                         "comparison": "abs", "sample_size": 1, "seed": 1, "verdict": "pass"}]}
    bad = {"entries": [dict(good["entries"][0], estimate=2.0)]}
    (tmp_path / "g.json").write_text(json.dumps(good))
    (tmp_path / "b.json").write_text(json.dumps(bad))
    assert cli.run(["report", str(tmp_path / "g.json")]) == 0
    assert cli.run(["report", str(tmp_path / "b.json")]) == 1
    assert cli.run(["report", str(tmp_path / "missing.json")]) == 2


def test_simulate_outputs(tmp_path, capsys):
    out = tmp_path / "sim"
    assert cli.run(["simulate", "--theta", "2", "7", "--eps", "0.1", "--paths", "2", "--out", str(out)]) == 0
    files = sorted(p.name for p in out.glob("path_*.csv"))
    assert len(files) == 4
    first = (out / files[0]).read_text().splitlines()
    assert first[0] == "t,re,im" and first[1] == "0.0,0.0,0.0"
    assert cli.run(["simulate", "--theta", "2", "--eps", "0.1", "--paths", "3", "--grid", "0,0.5,1",
                    "--summary", "--out", str(out)]) == 0
    lines = (out / "simulate_summary.csv").read_text().splitlines()
    assert lines[0] == "path,theta,t,re,im" and len(lines) == 1 + 3 * 3


def test_couple_outputs(tmp_path, capsys):
    assert cli.run(["couple", "--eps", "0.2", "--theta", "2", "--reps", "3", "--backend", "grid",
                    "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "couple_ensemble.csv").read_text().splitlines()
    assert lines[0] == "eps,rep,sup_error,L1,L21,L22,L3,maxLambdaDev,maxGammaDev"
    assert len(lines) == 4
    recs = json.loads((tmp_path / "couple.json").read_text())["realizations"]
    assert all(max(r["identity_errors"].values()) < 1e-12 for r in recs)
    assert cli.run(["couple", "--eps", "0.2", "--theta", "2", "--out", str(tmp_path)]) == 0
    skel = (tmp_path / "couple_ensemble.csv").read_text().splitlines()[1].split(",")
    assert skel[2] == ""  # no sup_error without a Brownian path


def test_rate_command(tmp_path, capsys):
    assert cli.run(["rate", "--eps-list", "0.3,0.2", "--reps", "100", "--out", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "rate.json").read_text())
    assert [r["epsilon"] for r in data["rate"]["rows"]] == [0.3, 0.2]
    assert len((tmp_path / "rate_ensemble.csv").read_text().splitlines()) == 201
    assert cli.run(["rate", "--eps-list", "0.2,0.3", "--reps", "100", "--out", str(tmp_path)]) == 2


def test_atomic_write_leaves_no_temp_files(tmp_path):
    cli.write_atomic(tmp_path / "x.txt", "hello")
    cli.write_atomic(tmp_path / "x.txt", "again")
    assert (tmp_path / "x.txt").read_text() == "again"
    assert [p.name for p in tmp_path.iterdir()] == ["x.txt"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "kactransport", "couple", "--eps", "0.3", "--theta",
                           "3.1415926"], capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 2


def test_unknown_config_key():
    with pytest.raises(KeyError):
        suites.merged_config({"rate": {"nope": 1}})
