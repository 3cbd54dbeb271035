import json
import os
import subprocess
import sys

import pytest

from parbals.cli import main


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("sc")
    assert main(["make-synthetic", "--out-dir", str(out), "--n-pool", "120", "--dim", "3",
                 "--n-val", "30", "--n-test", "60", "--seed", "2"]) == 0
    return out / "manifest.json"


def test_missing_config_exits_1(capsys):
    assert main(["run", "--config", "missing.json"]) == 1
    assert "missing.json" in capsys.readouterr().err


def test_unknown_flag_prints_usage(capsys):
    assert main(["run", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_no_subcommand():
    assert main([]) == 1


def test_run_parbals_writes_jsonl(manifest, tmp_path):
    out = tmp_path / "r.jsonl"
    code = main(["run", "--scenario", str(manifest), "--algorithm", "parbals-epig", "--m", "8",
                 "--B", "5", "--T", "2", "--seed", "1", "--initial-labeled", "10", "--k", "40",
                 "--val-subsample", "15", "--out", str(out)])
    assert code == 0
    lines = [json.loads(x) for x in out.read_text().splitlines()]
    assert lines[-1]["kind"] == "summary" and lines[-1]["final_labeled_count"] == 20
    assert lines[-1]["config"]["m"] == 8


def test_run_from_config_with_override(manifest, tmp_path):
    cfg = {"scenario": {"type": "manifest", "path": str(manifest)}, "algorithm": "bald",
           "T": 1, "B": 2, "initial_labeled": 5, "k": 20}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "r.jsonl"
    assert main(["run", "--config", str(path), "--algorithm", "epig", "--out", str(out)]) == 0
    assert json.loads(out.read_text().splitlines()[-1])["algorithm"] == "epig"


def test_invalid_config_value_exits_1(manifest):
    assert main(["run", "--scenario", str(manifest), "--algorithm", "bald", "--B", "0",
                 "--T", "1", "--initial-labeled", "5"]) == 1
    assert main(["run", "--scenario", str(manifest), "--algorithm", "bald", "--m", "3",
                 "--B", "1", "--T", "1", "--initial-labeled", "5"]) == 1


def test_exhausted_pool_exits_2(manifest):
    assert main(["run", "--scenario", str(manifest), "--algorithm", "random", "--B", "50",
                 "--T", "5", "--initial-labeled", "5"]) == 2


def test_suite_and_plot(manifest, tmp_path, capsys):
    runs = tmp_path / "runs"
    code = main(["suite", "--scenario", str(manifest), "--algorithms", "random,epig",
                 "--B", "4", "--T", "2", "--initial-labeled", "8", "--k", "20", "--repeats", "2",
                 "--out-dir", str(runs)])
    assert code == 0
    table = capsys.readouterr().out
    assert "random" in table and "2SE" in table
    files = sorted(runs.glob("*.jsonl"))
    assert len(files) == 4
    svg = tmp_path / "c.svg"
    assert main(["plot", *map(str, files), "--out", str(svg)]) == 0
    assert svg.read_text().lstrip().startswith("<?xml")
    assert main(["plot", str(tmp_path / "nope.jsonl"), "--out", str(svg)]) == 1


@pytest.mark.parametrize("suite", ["bait", "batchbald"])
def test_oracle_check(suite, capsys):
    assert main(["oracle-check", "--suite", suite]) == 0
    assert f"[PASS] {suite}" in capsys.readouterr().out


def test_oracle_check_parbals_mc_table(capsys):
    code = main(["oracle-check", "--suite", "parbals-mc", "--trials", "5"])
    out = capsys.readouterr().out
    assert "mean regret" in out and "[" in out
    assert code in (0, 2)


def test_module_entry_point(manifest):
    env = dict(os.environ, PYTHONWARNINGS="ignore")
    proc = subprocess.run([sys.executable, "-m", "parbals", "run", "--config", "nope.json"],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 1
