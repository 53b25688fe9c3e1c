import subprocess
import sys

import pytest

from wigturb import cli
from wigturb.io import read_csv, read_medium, read_state

TINY = """
[grid]
n_side = 2
k_extent = 2.0
k0 = 20.0
[spectrum]
variant = von_karman
cn2 = {cn2}
outer_scale = 1.0
inner_scale = 0.2
[state]
kind = {kind}
amplitude = 1.0
width = 2.0
[propagation]
z_samples = 0, 0.25, 0.5
resummed = {resummed}
[kernels]
residual_tol = {tol}
[montecarlo]
n_realizations = 16
seed = 5
dims = 4, 4, 10
dz = 0.05
[output]
directory = {out}
formats = csv, binary
"""


def _config(tmp_path, name="run.ini", cn2=1e-3, kind="coherent", resummed="true", tol=1e-8, out=None):
    out = out or str(tmp_path / "out")
    p = tmp_path / name
    p.write_text(TINY.format(cn2=cn2, kind=kind, resummed=resummed, tol=tol, out=out))
    return p


def _files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


@pytest.mark.parametrize("command", ["kernels", "evolve", "validate", "losscheck"])
def test_commands_succeed_and_stamp_header(tmp_path, command, capsys):
    cfg = _config(tmp_path)
    assert cli.main([command, "--config", str(cfg)]) == 0
    files = _files(tmp_path / "out")
    csvs = [n for n in files if n.endswith(".csv")]
    assert csvs
    for name in csvs:
        header, cols, rows = read_csv(tmp_path / "out" / name)
        assert header["wigturb"] == "0.1.0"
        assert len(header["config_sha256"]) == 64
        assert rows
    if command == "losscheck":
        assert "nonmarkovian: k_variation" in capsys.readouterr().out


def test_evolve_writes_both_modes_and_states(tmp_path):
    cfg = _config(tmp_path)
    assert cli.main(["evolve", "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    assert (out / "evolve_literal.csv").exists() and (out / "evolve_resummed.csv").exists()
    st = read_state(out / "state_literal_002.bin")
    assert st.z == 0.5 and st.grid.size == 4
    # coherent input has no Theta kernel, so no quartic norm
    _, cols, rows = read_csv(out / "evolve_literal.csv")
    assert all(r[cols.index("quartic_norm")] == "nan" for r in rows)


def test_zero_turbulence_outputs(tmp_path):
    cfg = _config(tmp_path, cn2=0.0, kind="thermal", resummed="false")
    assert cli.main(["evolve", "--config", str(cfg)]) == 0
    _, cols, rows = read_csv(tmp_path / "out" / "evolve_literal.csv")
    trace = [float(r[cols.index("trace_drift")]) for r in rows]
    assert trace == [0.0, 0.0, 0.0]
    assert not (tmp_path / "out" / "evolve_resummed.csv").exists()
    assert cli.main(["validate", "--config", str(cfg)]) == 0
    _, cols, rows = read_csv(tmp_path / "out" / "zscores.csv")
    assert all(float(r[cols.index("z_score")]) == 0.0 for r in rows)
    med = read_medium(tmp_path / "out" / "medium_sample.bin")
    assert not med.values.any()


def test_fixed_seed_reruns_are_byte_identical(tmp_path):
    cfg = _config(tmp_path)
    for command in ("kernels", "evolve", "validate", "losscheck"):
        assert cli.main([command, "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
        assert cli.main([command, "--config", str(cfg), "--out", str(tmp_path / "b"), "--workers", "3"]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_seed_override_changes_mcf(tmp_path):
    cfg = _config(tmp_path)
    assert cli.main(["validate", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["validate", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "6"]) == 0
    assert (tmp_path / "a" / "mcf.csv").read_bytes() != (tmp_path / "b" / "mcf.csv").read_bytes()


def test_output_directory_precedence(tmp_path, monkeypatch):
    cfg = _config(tmp_path)
    monkeypatch.setenv("OUTPUT_DIR", str(tmp_path / "env"))
    assert cli.main(["losscheck", "--config", str(cfg)]) == 0
    assert (tmp_path / "env" / "loss_summary.csv").exists()
    assert cli.main(["losscheck", "--config", str(cfg), "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "loss_summary.csv").exists()
    assert not (tmp_path / "out").exists()
    # the hash ignores where the files go
    a = (tmp_path / "env" / "loss_summary.csv").read_bytes()
    assert a == (tmp_path / "flag" / "loss_summary.csv").read_bytes()


def test_usage_errors_exit_2(tmp_path):
    assert cli.main([]) == 2
    assert cli.main(["evolve"]) == 2
    assert cli.main(["evolve", "--config", str(tmp_path / "missing.ini")]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[grid]\nn_side = 2\nsize = 3\n")
    assert cli.main(["evolve", "--config", str(bad)]) == 2
    cfg = _config(tmp_path)
    assert cli.main(["evolve", "--config", str(cfg), "--workers", "0"]) == 2
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["evolve", "--config", str(cfg), "--out", str(blocker / "sub")]) == 2


def test_invariant_violations_exit_3(tmp_path, monkeypatch):
    cfg = _config(tmp_path, tol=1e-300)
    assert cli.main(["kernels", "--config", str(cfg)]) == 3
    monkeypatch.setattr(cli, "TRACE_TOL", -1.0)
    assert cli.main(["evolve", "--config", str(_config(tmp_path, name="ok.ini"))]) == 3


def test_console_script_runs(tmp_path):
    cfg = _config(tmp_path)
    proc = subprocess.run(
        [sys.executable, "-m", "wigturb.cli", "losscheck", "--config", str(cfg)],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert "markovian: k_variation = 0" in proc.stdout
