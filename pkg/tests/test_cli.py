import json
import subprocess
import sys

import numpy as np
import pytest

from decn.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from decn.evolution import DecnModel, load_model
from decn.records import RunRecord, substream

FAST = ["--epochs", "2", "--K", "2", "--L", "5"]


@pytest.fixture(scope="module")
def model_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("m") / "m.json"
    assert main(["train", "--preset", "ws3", "--suite", "high:F4", "--dim", "3", "--seed", "1",
                 "-o", str(path), *FAST]) == EXIT_OK
    return path


def test_train_writes_model_and_log(tmp_path, capsys):
    out = tmp_path / "m.json"
    rc = main(["train", "--preset", "ws3", "--suite", "low", "--dim", "2", "--seed", "7",
               "-o", str(out), *FAST])
    assert rc == EXIT_OK
    assert "final mean loss" in capsys.readouterr().out
    model = load_model(out)
    assert model.depth == 3 and model.share_weights
    info = model.trained_on
    assert info["seed"] == 7 and info["suite"] == "low" and info["D"] == 2
    assert info["train_config"]["lr"] == 5e-4 and info["train_config"]["K"] == 2
    log = (tmp_path / "m.log.csv").read_text().splitlines()
    assert "epoch,mean_loss,grad_norm_pre,grad_norm_post,lr" in log


def test_zero_epochs_writes_initialization(tmp_path):
    out = tmp_path / "m.json"
    assert main(["train", "--suite", "low", "--epochs", "0", "--seed", "4", "-o", str(out)]) == 0
    init = DecnModel.initialize(3, True, substream(4, "init"))
    for a, b in zip(load_model(out).ems[0].kernels, init.ems[0].kernels):
        assert a.tobytes() == b.tobytes()


def test_identical_train_commands_are_byte_identical(tmp_path):
    args = ["train", "--suite", "high:F7", "--dim", "2", "--seed", "3", *FAST]
    main([*args, "-o", str(tmp_path / "a.json")])
    main([*args, "-o", str(tmp_path / "b.json")])
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert (tmp_path / "a.log.csv").read_bytes() == (tmp_path / "b.log.csv").read_bytes()


@pytest.mark.parametrize("args", [
    ["train", "--preset", "bogus", "--suite", "low", "-o", "x.json"],
    ["train", "--suite", "high:F1", "-o", "x.json"],
    ["train", "--suite", "middle", "-o", "x.json"],
    ["run", "-m", "missing.json", "--function", "F4", "--dim", "2"],
    ["frobnicate"],
])
def test_usage_errors_exit_one(args, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(SystemExit) as info:
        rc = main(args)
        raise SystemExit(rc)
    assert info.value.code == EXIT_USAGE


def test_numeric_failure_exits_two(tmp_path):
    rc = main(["train", "--suite", "high:F4", "--dim", "2", "--lr", "1e305", "--epochs", "3",
               "--K", "2", "--L", "5", "-o", str(tmp_path / "x.json")])
    assert rc == EXIT_NUMERIC


def test_run_writes_per_seed_csvs_and_summary(model_path, tmp_path):
    out = tmp_path / "runs"
    rc = main(["run", "-m", str(model_path), "--function", "F4", "--dim", "10", "--L", "10",
               "--repeats", "10", "-o", str(out)])
    assert rc == EXIT_OK
    assert len(list(out.glob("decn_F4_seed*.csv"))) == 10
    summary = json.loads((out / "summary_decn_F4.json").read_text())
    for key in ("algorithm", "function", "D", "L", "repeats", "budget", "final_best_mean",
                "final_best_std", "seed"):
        assert key in summary
    finals = [RunRecord.load(p).final_best for p in sorted(out.glob("decn_F4_seed*.csv"))]
    assert summary["final_best_mean"] == pytest.approx(np.mean(finals))
    assert summary["final_best_std"] == pytest.approx(np.std(finals))
    assert summary["budget"] == 400


def test_run_is_stable_and_guards_lattice(model_path, tmp_path):
    args = ["run", "-m", str(model_path), "--function", "F9", "--dim", "3", "--repeats", "1"]
    main([*args, "-o", str(tmp_path / "a")])
    main([*args, "-o", str(tmp_path / "b")])
    assert (tmp_path / "a" / "decn_F9_seed000.csv").read_bytes() == \
        (tmp_path / "b" / "decn_F9_seed000.csv").read_bytes()
    assert main([*args, "--L", "3", "-o", str(tmp_path / "c")]) == EXIT_USAGE


def _check_compare_schema(doc):
    assert isinstance(doc["function"], str) and isinstance(doc["budget"], int)
    assert isinstance(doc["algorithms"], list)
    for row in doc["algorithms"]:
        assert isinstance(row["algorithm"], str)
        assert isinstance(row["final_best_mean"], float)
        assert isinstance(row["final_best_std"], float)
        assert len(row["final_best"]) == row["repeats"] == doc["repeats"]
    assert set(doc["decn_paired_wins"]) <= {"de", "random"}


def test_compare_equal_budgets(model_path, tmp_path):
    out = tmp_path / "cmp"
    rc = main(["compare", "-m", str(model_path), "--function", "F4", "--dim", "10",
               "--budget", "400", "--repeats", "3", "-o", str(out)])
    assert rc == EXIT_OK
    doc = json.loads((out / "compare_F4.json").read_text())
    _check_compare_schema(doc)
    assert [row["algorithm"] for row in doc["algorithms"]] == ["decn", "de", "random"]
    for name in ("decn", "de", "random"):
        for path in out.glob(f"{name}_F4_seed*.csv"):
            assert RunRecord.load(path).final_evals == 400


def test_compare_rejects_inconsistent_budget(model_path, tmp_path):
    rc = main(["compare", "-m", str(model_path), "--function", "F4", "--dim", "2",
               "--budget", "500", "-o", str(tmp_path)])
    assert rc == EXIT_USAGE


def test_arm_command(tmp_path):
    rc = main(["arm", "--case", "sc", "--n", "3", "--r", "20", "--targets", "4",
               "--test-targets", "2", *FAST, "-o", str(tmp_path)])
    assert rc == EXIT_OK
    doc = json.loads((tmp_path / "arm_sc_summary.json").read_text())
    assert [row["algorithm"] for row in doc["algorithms"]] == ["decn", "random"]
    assert main(["arm", "--case", "zz", "-o", str(tmp_path)]) == EXIT_USAGE


def test_dump_kernels_counts(tmp_path):
    ws3, nws15 = tmp_path / "ws3.json", tmp_path / "nws15.json"
    main(["train", "--preset", "ws3", "--suite", "low", "--epochs", "0", "-o", str(ws3)])
    main(["train", "--preset", "nws15", "--suite", "low", "--epochs", "0", "-o", str(nws15)])
    assert main(["dump-kernels", "-m", str(ws3), "-o", str(tmp_path / "k3")]) == EXIT_OK
    assert len(list((tmp_path / "k3").glob("*.csv"))) == 3
    assert "depth=3" in (tmp_path / "k3" / "em00_k7.csv").read_text()
    main(["dump-kernels", "-m", str(nws15), "-o", str(tmp_path / "k15")])
    assert len(list((tmp_path / "k15").glob("*.csv"))) == 45
    model = load_model(nws15)
    dumped = np.loadtxt(tmp_path / "k15" / "em14_k5.csv", delimiter=",", comments="#")
    assert dumped.tobytes() == model.ems[14].kernels[1].tobytes()


def test_tune_de(tmp_path):
    out = tmp_path / "tune.json"
    rc = main(["tune-de", "--function", "F4", "--dim", "2", "--budget", "60", "--pop", "20",
               "--step", "0.5", "--repeats", "2", "-o", str(out)])
    assert rc == EXIT_OK
    doc = json.loads(out.read_text())
    assert len(doc["grid"]) == 3 * 2  # F in {0, .5, 1}, CR in {.5, 1}
    assert doc["best"] in doc["grid"]


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "decn.cli", "train", "--suite", "nope",
                           "-o", str(tmp_path / "x.json")], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE
    assert "invalid suite" in proc.stderr
