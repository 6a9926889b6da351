import csv

import pytest

from onebit_ofdm.cli import main


def test_selftest(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") == 6


def test_gradcheck(capsys):
    assert main(["--seed", "3", "gradcheck", "--nets", "2"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_experiment_subcommand(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("N=16\nL=3\ntrials=2\nbussgang_samples=500\n")
    code = main(["--config", str(cfg), "--out", str(tmp_path), "--seed", "5", "--threads", "2",
                 "bussgang", "snr_db=10"])
    assert code == 0
    out = capsys.readouterr().out
    assert "theorem1-S500" in out
    with open(tmp_path / "bussgang" / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["seed"] == "5" and rows[0]["snr_db"] == "10"


def test_quiet(tmp_path, capsys):
    assert main(["--quiet", "--out", str(tmp_path), "bussgang", "N=16", "L=3", "trials=1",
                 "snr_db=10", "bussgang_samples=200"]) == 0
    assert capsys.readouterr().out == ""


@pytest.mark.parametrize("args", [["chanest", "L=64", "N=64"], ["detect", "G=3"], ["chanest", "nope=1"]])
def test_config_errors_exit_2(args, capsys, tmp_path):
    assert main(["--out", str(tmp_path)] + args) == 2
    assert "error" in capsys.readouterr().err


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        main(["plot"])
