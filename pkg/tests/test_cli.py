import csv
import json

import numpy as np
import pytest

from hyperfoil.cli import identity_table, main

SMALL = """\
grid.nx = 49
grid.h = 0.25
grid.order = 2
time.dt = 0.1
time.t_final = 5.0
verify.n_hyperboloids = 4
"""


def write(tmp_path, text, name="cfg.txt"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def series(run_dir):
    with open(run_dir / "series.csv") as fh:
        return list(csv.DictReader(fh))


def test_identities_ladder_is_second_order(capsys):
    assert main(["identities", "--resolution-ladder", "0.1,0.05,0.025"]) == 0
    assert "order" in capsys.readouterr().out
    rows = identity_table(0.5, [0.1, 0.05, 0.025])
    assert len(rows) == 3
    for r in rows[1:]:
        assert r["order:L1(t-r)^-g"] == pytest.approx(2.0, abs=0.2)
        assert r["order:L2L1(t-r)^-g"] == pytest.approx(2.0, abs=0.2)


def test_config_error_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "grid.h = 0.25\ngrid.bogus = 1\n")
    assert main(["run", "kgz", "--config", cfg, "--out", str(tmp_path / "o")]) == 4
    assert "cfg.txt:2:" in capsys.readouterr().err
    cfg = write(tmp_path, "time.dt = 1.0\n", "cfl.txt")
    assert main(["run", "kgz", "--config", cfg, "--out", str(tmp_path / "o")]) == 4


def test_zero_amplitude_run_and_verify(tmp_path):
    cfg = write(tmp_path, SMALL + "ic.eps = 0.0\n")
    out = tmp_path / "zero"
    assert main(["run", "kgz", "--config", cfg, "--out", str(out)]) == 0
    rows = series(out)
    assert all(float(r["sup_E"]) == 0.0 and float(r["sup_n"]) == 0.0 for r in rows)
    assert main(["verify", str(out)]) == 0
    ledger = json.loads((out / "ledger.json").read_text())
    assert ledger and all(e["pass"] for e in ledger)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok" and "series.csv" in manifest["outputs"]
    assert (out / "series.png").exists()


def test_blowup_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, SMALL + "ic.eps = 40.0\nverify.n_hyperboloids = 0\n")
    assert main(["run", "kgz", "--config", cfg, "--out", str(tmp_path / "b")]) == 3
    assert "blowup" in capsys.readouterr().err
    cfg = write(tmp_path, SMALL + "ic.eps = 5.0\ncoeffs.set = a\nverify.n_hyperboloids = 0\n", "q.txt")
    assert main(["run", "qwkg", "--config", cfg, "--out", str(tmp_path / "q")]) == 3


def test_rerun_is_bit_identical(tmp_path):
    cfg = write(tmp_path, SMALL + "ic.eps = 0.05\noutput.figures = false\noutput.checkpoint_every = 10\n")
    for name in ("a", "b"):
        assert main(["run", "kgz", "--config", cfg, "--out", str(tmp_path / name), "--threads", "2"]) == 0
    for f in ("series.csv", "energies.csv", "hyperboloid.csv", "sources.csv", "residual.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    snaps = sorted((tmp_path / "a" / "checkpoints").iterdir())
    assert snaps and snaps[0].read_bytes()[:4] == b"HYPF"


def test_qwkg_run_and_verify(tmp_path):
    cfg = write(tmp_path, SMALL + "grid.nx = 153\ntime.t_final = 18.0\nverify.n_hyperboloids = 10\nic.eps = 0.01\ncoeffs.set = c\n"
                "output.figures = false\n")
    out = tmp_path / "q"
    assert main(["run", "qwkg", "--config", cfg, "--out", str(out)]) == 0
    code = main(["verify", str(out), "--checks", "qwkg"])
    assert code in (0, 2)
    names = [e["name"] for e in json.loads((out / "ledger.json").read_text())]
    assert {"no_blowup", "decay_v", "ddw_times_s", "quasilinear_equivalence"} <= set(names)


def test_short_run_fails_checks_honestly(tmp_path):
    cfg = write(tmp_path, SMALL + "output.figures = false\n")
    out = tmp_path / "short"
    assert main(["run", "kgz", "--config", cfg, "--out", str(out)]) == 0
    assert main(["verify", str(out), "--checks", "decay"]) == 2
    (entry,) = json.loads((out / "ledger.json").read_text())
    assert entry["name"] == "decay" and not entry["pass"]
    assert "at least 3" in entry["detail"]["error"]


def test_unknown_check_is_config_error(tmp_path):
    cfg = write(tmp_path, SMALL + "output.figures = false\n")
    out = tmp_path / "r"
    assert main(["run", "kgz", "--config", cfg, "--out", str(out)]) == 0
    assert main(["verify", str(out), "--checks", "nonsense"]) == 4


def test_sweep_eps_is_linear(tmp_path):
    cfg = write(tmp_path, SMALL + "verify.n_hyperboloids = 0\noutput.figures = false\n")
    assert main(["sweep", "--parameter", "eps", "--values", "0.005,0.01,0.02", "--config", cfg,
                 "--out", str(tmp_path / "sw")]) == 0
    with open(tmp_path / "sw" / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    per_eps = np.array([float(r["sup_E_max_over_value"]) for r in rows])
    assert np.abs(per_eps / per_eps[0] - 1).max() < 0.05
