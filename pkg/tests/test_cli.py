import json
import subprocess
import sys

from fedsim.cli import main
from fedsim.harness import ExperimentSpec, read_rows


def write_spec(tmp_path, **kw):
    d = {"scenario": "2d-split", "seeds": [0], "config": {"rounds": 2, "local_epochs": 1}}
    d.update(kw)
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(d))
    return path


def test_run_then_report(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--spec", str(write_spec(tmp_path)), "--out", str(out)]) == 0
    assert "federated" in capsys.readouterr().out
    assert len(read_rows(out / "rows.csv")) == 4
    assert main(["report", "--in", str(out), "--json"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["methods"]["federated"]["n"] == 1
    assert main(["report", "--in", str(out)]) == 0
    assert "AUC" in capsys.readouterr().out


def test_sweep(tmp_path, capsys):
    code = main(["sweep", "--user", "C", "--max-centers", "3", "--seeds", "1", "--rounds", "1", "--out", str(tmp_path)])
    assert code == 0
    rows = read_rows(tmp_path / "rows.csv")
    assert [r.num_centers for r in rows] == [2, 3]
    assert "K=3" in capsys.readouterr().out


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["report", "--in", str(tmp_path / "missing")]) != 0
    assert "fedsim: error" in capsys.readouterr().err
    assert main(["run", "--spec", str(write_spec(tmp_path, seeds=[])), "--out", str(tmp_path)]) != 0
    assert "seed list" in capsys.readouterr().err
    assert main(["sweep", "--user", "Z", "--max-centers", "3", "--seeds", "1"]) != 0


def test_module_entry_point(tmp_path):
    spec = write_spec(tmp_path, scenario="bogus")
    proc = subprocess.run(
        [sys.executable, "-m", "fedsim", "run", "--spec", str(spec), "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode != 0 and "scenario" in proc.stderr


def test_spec_file_is_plain_json(tmp_path):
    spec = ExperimentSpec.load(write_spec(tmp_path, users=["M"]))
    assert spec.users == ["M"] and spec.config.rounds == 2
