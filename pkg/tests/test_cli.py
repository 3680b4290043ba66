import csv
import json
import os
import subprocess
import sys

import numpy as np

from fsisplit.cli import EXIT_CONFIG, EXIT_DEGENERATE, EXIT_OK, EXIT_VERIFY, main
from fsisplit.energy import CSV_COLUMNS
from fsisplit.scheme import read_checkpoint

SMALL = "resolution: {nz: 8, nr: 4, nz_thick: 8, nr_thick: 2, n_thin: 8}\n"

SEEDED = SMALL + """thin: {nonlinearity: cubic, gamma: 10.0}
boundary:
  P_in: {kind: pulse, value: 2.0, start: 0.0, width: 0.1}
scheme: {dt: 0.01, n_steps: 12}
initial: {amplitude: 0.02, perturbation: 0.01}
output: {stride: 4}
seed: 7
"""

DEGENERATE = SMALL + """boundary:
  P_in: {kind: constant, value: 200.0}
  P_out: {kind: constant, value: 200.0}
scheme: {dt: 0.01, n_steps: 200, fluid_solver: auto}
"""


def _config(tmp_path, text, name="c.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_zero_config_run(tmp_path):
    out = tmp_path / "zero"
    code = main(["run", "--config", _config(tmp_path, SMALL), "--steps", "3", "--out", str(out)])
    assert code == EXIT_OK
    rows = _rows(out / "energy.csv")
    assert rows[0] == list(CSV_COLUMNS) and len(rows) == 4
    energy_cols = [CSV_COLUMNS.index(c) for c in ("e_kin", "e_el", "e_total", "dissipation")]
    assert all(float(r[i]) == 0.0 for r in rows[1:] for i in energy_cols)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["termination"] == "HORIZON" and manifest["steps"] == 3
    assert manifest["inequality_failures"] == 0 and len(manifest["config_hash"]) == 64


def test_seeded_runs_are_byte_identical_and_replayable(tmp_path):
    cfg = _config(tmp_path, SEEDED)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(a)]) == EXIT_OK
    assert main(["run", "--config", cfg, "--out", str(b)]) == EXIT_OK
    assert (a / "energy.csv").read_bytes() == (b / "energy.csv").read_bytes()
    snaps = sorted(os.listdir(a / "snapshots"))
    assert snaps == ["state_000004.npz", "state_000008.npz", "state_000012.npz"]

    r = tmp_path / "r"
    code = main(["replay", "--config", cfg, "--checkpoint", str(a / "snapshots" / "state_000004.npz"),
                 "--out", str(r)])
    assert code == EXIT_OK
    final_a, _ = read_checkpoint(str(a / "checkpoint.npz"))
    final_r, _ = read_checkpoint(str(r / "checkpoint.npz"))
    for k, arr in final_a.fields().items():
        assert np.array_equal(final_r.fields()[k], arr)
    assert _rows(r / "energy.csv")[1:] == _rows(a / "energy.csv")[5:]


def test_degeneration_exit_code(tmp_path):
    out = tmp_path / "degen"
    assert main(["run", "--config", _config(tmp_path, DEGENERATE), "--out", str(out)]) == EXIT_DEGENERATE
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["termination"] == "DEGENERATE"
    assert manifest["min_jacobian"] <= 1e-6 and manifest["inequality_failures"] == 0
    assert manifest["final_level"] < 200 and manifest["degeneracy_reason"]


def test_config_errors_exit_2(tmp_path, capsys):
    bad = _config(tmp_path, "fluid: {p: 1.5}\nscheme: {dt: -1}\n")
    assert main(["run", "--config", bad, "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "fluid.p" in err and "scheme.dt" in err
    broken = _config(tmp_path, "fluid: [\n", "broken.yaml")
    assert main(["run", "--config", broken]) == EXIT_CONFIG
    assert "line" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    assert main(["replay", "--config", _config(tmp_path, SMALL, "s.yaml")]) == EXIT_CONFIG


def test_verify_quick_passes(tmp_path, capsys):
    cfg = _config(tmp_path, SMALL + "scheme: {n_steps: 5}\ninitial: {amplitude: 0.02}\n")
    assert main(["verify", "--config", cfg, "--quick"]) == EXIT_OK
    out = capsys.readouterr().out
    for suite in ("certification", "operator", "dissipativity", "energy", "reduction", "oracles"):
        assert suite in out


def test_verify_reports_corrupted_kappa(tmp_path, capsys):
    cfg = _config(tmp_path, SMALL + "fluid: {kappa1: 10.0}\nscheme: {n_steps: 3}\n")
    assert main(["verify", "--config", cfg, "--quick"]) == EXIT_VERIFY
    assert "violated: coercivity" in capsys.readouterr().out


def test_refine_writes_table(tmp_path, capsys):
    cfg = _config(tmp_path, SMALL + "fluid: {p: 2.0, reduction: true}\n"
                  "scheme: {dt: 0.02, n_steps: 4}\ninitial: {amplitude: 0.02}\n")
    out = tmp_path / "ref"
    assert main(["refine", "--config", cfg, "--level-count", "3", "--out", str(out)]) == EXIT_OK
    rows = _rows(out / "refinement.csv")
    assert len(rows) == 4
    assert main(["refine", "--config", cfg, "--level-count", "2", "--out", str(out)]) == EXIT_CONFIG


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "fsisplit", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("fsisplit ")
