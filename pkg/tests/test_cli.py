import csv
import io

import numpy as np
import pytest

from photonfilter.cli import main


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_master_preset_b_peak(tmp_path, capsys):
    out = tmp_path / "b.csv"
    code, _, err = run(["master", "--preset", "atom-2photon-b", "--out", str(out)], capsys)
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    top = [float(r["re_exp_X"]) for r in rows if r["pair_id_l"] == "1" and r["pair_id_r"] == "1"]
    assert abs(max(top) - 0.8796) < 0.01
    assert "local maxima" in err
    assert {r["pair_id_l"] + r["pair_id_r"] for r in rows} >= {"11", "14", "44"}


def test_homodyne_is_deterministic_and_replayable(tmp_path, capsys):
    args = ["filter-homodyne", "--preset", "atom-1photon", "--t-final", "8", "--dt", "0.002",
            "--seed", "9"]
    rec = tmp_path / "dY.txt"
    code, first, _ = run(args + ["--record", str(rec)], capsys)
    assert code == 0
    _, second, _ = run(args, capsys)
    assert first == second
    _, replayed, _ = run(args[:-2] + ["--replay", str(rec)], capsys)
    a = np.loadtxt(io.StringIO(first), delimiter=",", skiprows=1)
    b = np.loadtxt(io.StringIO(replayed), delimiter=",", skiprows=1)
    assert np.allclose(a, b, atol=1e-12)
    assert first.splitlines()[0] == "t,dY,re_P_e,trace_drift"


def test_photocount_record_and_replay(tmp_path, capsys):
    args = ["filter-photocount", "--preset", "atom-1photon", "--t-final", "8", "--dt", "0.002"]
    rec = tmp_path / "jumps.txt"
    code, first, err = run(args + ["--seed", "4", "--record", str(rec)], capsys)
    assert code == 0 and "detections" in err
    _, replayed, _ = run(args + ["--replay", str(rec)], capsys)
    assert first == replayed
    assert first.splitlines()[0] == "t,n_cum,re_P_e"


def test_ensemble_writes_csv_and_metadata(tmp_path, capsys):
    out = tmp_path / "ens.csv"
    code, _, err = run(["ensemble", "--preset", "atom-1photon", "--t-final", "8", "--dt", "0.002",
                        "--N", "8", "--mode", "photocount", "--workers", "1", "--out", str(out)],
                       capsys)
    assert code == 0
    assert out.read_text().splitlines()[0] == "t,mean_P_e,stderr_P_e,master_P_e"
    meta = (tmp_path / "ens.csv.meta").read_text()
    assert "detection.mode = photocount" in meta and "mean detections" in meta


def test_validate_passes(capsys):
    code, out, _ = run(["validate"], capsys)
    assert code == 0
    assert "7/7 checks passed" in out


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("preset = atom-2photon-a\nsystem.H = 0 1 0 0\n")
    code, _, err = run(["master", "--config", str(bad)], capsys)
    assert code == 2
    assert "system.H" in err and "bad.cfg:2" in err


def test_bad_overrides_and_usage(tmp_path, capsys):
    code, _, err = run(["master", "--preset", "atom-2photon-a", "--t-final", "4"], capsys)
    assert code == 2 and "norm" in err
    code, _, _ = run(["filter-homodyne", "--preset", "atom-1photon", "--replay",
                      str(tmp_path / "missing.txt")], capsys)
    assert code == 2
    with pytest.raises(SystemExit) as info:
        main(["master"])
    assert info.value.code == 2


def test_numerical_failure_exit_code(tmp_path, capsys):
    jumps = tmp_path / "j.txt"
    jumps.write_text("0.5\n")
    code, _, err = run(["filter-photocount", "--preset", "atom-vacuum-decay", "--t-final", "2",
                        "--dt", "0.01", "--replay", str(jumps)], capsys)
    assert code == 0
    ground = tmp_path / "g.cfg"
    ground.write_text("preset = atom-vacuum-decay\nsystem.initial_state = 0 1\n")
    code, _, err = run(["filter-photocount", "--config", str(ground), "--t-final", "2",
                        "--dt", "0.01", "--replay", str(jumps)], capsys)
    assert code == 1 and "numerical failure" in err
