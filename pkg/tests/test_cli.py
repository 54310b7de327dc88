import numpy as np
import pytest

from fplab.cli import main, parse_config, report
from fplab.errors import ConfigError

FP_CONFIG = """
seed = 7

[system]
catalog = "ou1d"
alpha = 10.0

[numerics]
bounds = [-3.0, 3.0]
cells = 300
t_end = 0.1

[init]
kind = "gaussian"
mean = [1.0]
cov = [[0.05]]
"""

OU_CONFIG = """
[system]
catalog = "ou1d"
alpha = 10.0

[numerics]
t_end = 0.3

[init]
mean = [1.0]
cov = [[0.05]]
"""

SWEEP_CONFIG = """
[system]
catalog = "ou1d"
alpha = 10.0

[sweep]
alphas = [20.0, 40.0, 80.0, 160.0, 320.0]
t_probe = 0.5
x0 = [1.0]
"""

MARKOV_CONFIG = """
[markov]
p = [0.5, 0.5]
P = [[0.9, 0.1], [0.2, 0.8]]
"""

ENSEMBLE_CONFIG = """
seed = 11

[system]
catalog = "ou1d"
alpha = 10.0

[ensemble]
x0 = [1.0]
n_paths = 2000
t_end = 0.2
"""

LANDSCAPE_CONFIG = """
seed = 3

[system]
catalog = "rot_ou"
omega = 1.0
alpha = 8.0

[landscape]
n_points = 50
"""


def test_parse_minimal_ou_config_fills_defaults():
    cfg = parse_config(OU_CONFIG, "ou-run")
    assert cfg.numerics["dt"] == 1e-3
    assert cfg.numerics["output_spacing"] == 0.01
    assert cfg.numerics["abs_tol"] == 1e-3
    assert cfg.numerics["rel_tol"] == 1e-2
    assert cfg.seed == 0


def test_parse_rejects_unknown_section_and_key():
    with pytest.raises(ConfigError, match="unknown section 'extra'"):
        parse_config(OU_CONFIG + "\n[extra]\nx = 1\n", "ou-run")
    bad = OU_CONFIG.replace("t_end = 0.3", "t_end = 0.3\ndtt = 0.1")
    with pytest.raises(ConfigError, match="numerics.dtt"):
        parse_config(bad, "ou-run")


def test_parse_reports_syntax_errors_with_location():
    with pytest.raises(ConfigError, match="line"):
        parse_config("[system\ncatalog = 'ou1d'", "ou-run")


def test_parse_rejects_short_sweep():
    short = SWEEP_CONFIG.replace(
        "alphas = [20.0, 40.0, 80.0, 160.0, 320.0]", "alphas = [20.0, 40.0, 80.0]"
    )
    with pytest.raises(ConfigError, match="at least 4"):
        parse_config(short, "alpha-sweep")


def test_parse_requires_sections():
    with pytest.raises(ConfigError, match="requires"):
        parse_config("[system]\ncatalog = 'ou1d'\nalpha = 1.0\n", "fp-run")


def test_unknown_system_key_reported(tmp_path, capsys):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(FP_CONFIG.replace('catalog = "ou1d"', 'catalog = "ou1d"\ndifusion = 1.0'))
    code = main(["fp-run", "--config", str(cfg), "--out", str(tmp_path / "out")])
    assert code == 2
    assert "difusion" in capsys.readouterr().err


def test_fp_run_produces_artifacts(tmp_path, capsys):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(FP_CONFIG)
    out = tmp_path / "run1"
    assert main(["fp-run", "--config", str(cfg), "--out", str(out)]) == 0
    assert "fp-run complete" in capsys.readouterr().out
    thermo_text = (out / "thermo.csv").read_text()
    header = thermo_text.splitlines()[0]
    assert header == "t,S,ep,qex,F,qhk,dSdt_fd,dFdt_fd,res_entropy,res_freeenergy"
    assert len(thermo_text.splitlines()) == 12  # header + 11 output times
    manifest = (out / "manifest.txt").read_text()
    assert "command = fp-run" in manifest
    assert "seed = 7" in manifest
    assert "[config]" in manifest


def test_fp_run_deterministic_artifacts(tmp_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(FP_CONFIG)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["fp-run", "--config", str(cfg), "--out", str(out1)]) == 0
    assert main(["fp-run", "--config", str(cfg), "--out", str(out2)]) == 0
    assert (out1 / "thermo.csv").read_bytes() == (out2 / "thermo.csv").read_bytes()


def test_run_refuses_to_overwrite(tmp_path, capsys):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(FP_CONFIG)
    out = tmp_path / "run"
    assert main(["fp-run", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["fp-run", "--config", str(cfg), "--out", str(out)]) == 4
    assert "overwrite" in capsys.readouterr().err
    assert main(["fp-run", "--config", str(cfg), "--out", str(out), "--overwrite"]) == 0


def test_fp_run_density_dump(tmp_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(FP_CONFIG + "\n[output]\ndump_density = true\n")
    out = tmp_path / "dump"
    assert main(["fp-run", "--config", str(cfg), "--out", str(out)]) == 0
    dumps = sorted(out.glob("density_*.txt"))
    assert len(dumps) == 11
    first = dumps[0].read_text().splitlines()[0]
    assert first.startswith("t=0 grid=300 bounds=[-3,3]")


def test_numerical_failure_exit_code(tmp_path, capsys):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(
        """
[system]
dim = 1
alpha = 5.0
drift = [0.0, 1.0]
diffusion = 1.0
potential = [0.0, 0.0, -0.5]

[numerics]
bounds = [-1.5, 1.5]
cells = 128
t_end = 5.0

[init]
kind = "gaussian"
mean = [0.5]
cov = [[0.02]]
"""
    )
    code = main(["fp-run", "--config", str(cfg), "--out", str(tmp_path / "out")])
    assert code == 3
    assert "boundary" in capsys.readouterr().err


def test_missing_config_is_io_error(tmp_path):
    assert main(["fp-run", "--config", str(tmp_path / "nope.toml")]) == 4


def test_ou_run_and_report_pass(tmp_path, capsys):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(OU_CONFIG)
    out = tmp_path / "ou"
    assert main(["ou-run", "--config", str(cfg), "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "PASS: max res_entropy" in text
    assert "nonnegativity violations: 0" in text


def test_report_fail_on_injected_tolerance(tmp_path, capsys):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(FP_CONFIG + "\n".join(["", "[numerics.extra]"]))  # placeholder
    cfg.write_text(FP_CONFIG.replace("t_end = 0.1", "t_end = 0.1\nabs_tol = 1e-9\nrel_tol = 1e-9"))
    out = tmp_path / "tight"
    assert main(["fp-run", "--config", str(cfg), "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["report", str(out)]) == 1
    text = capsys.readouterr().out
    assert "FAIL" in text and "t=" in text


def test_report_missing_manifest(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["report", str(empty)]) == 4


def test_markov_command_one_line_report(tmp_path, capsys):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(MARKOV_CONFIG)
    out = tmp_path / "mk"
    assert main(["markov", "--config", str(cfg), "--out", str(out)]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("generated=") and "folding=" in line and "residual=" in line
    assert (out / "markov.txt").read_text().strip() == line


def test_alpha_sweep_artifacts(tmp_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(SWEEP_CONFIG)
    out = tmp_path / "sw"
    assert main(["alpha-sweep", "--config", str(cfg), "--out", str(out)]) == 0
    sweep_lines = (out / "sweep.csv").read_text().splitlines()
    assert sweep_lines[0] == "alpha,ep,qex,sum,predicted_slope"
    assert len(sweep_lines) == 6
    fit = (out / "fit.txt").read_text()
    assert "ep_slope" in fit and "sum_slope_se" in fit
    slope = float(next(l for l in fit.splitlines() if l.startswith("ep_slope = ")).split("=")[1])
    assert slope == pytest.approx(np.exp(-1.0), rel=1e-10)


def test_ensemble_deterministic(tmp_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(ENSEMBLE_CONFIG)
    out1, out2 = tmp_path / "e1", tmp_path / "e2"
    assert main(["ensemble", "--config", str(cfg), "--out", str(out1)]) == 0
    assert main(["ensemble", "--config", str(cfg), "--out", str(out2)]) == 0
    assert (out1 / "ensemble.csv").read_bytes() == (out2 / "ensemble.csv").read_bytes()
    header = (out1 / "ensemble.csv").read_text().splitlines()[0]
    assert header == "t,mean0,cov00"
    # a different seed changes the samples
    out3 = tmp_path / "e3"
    assert main(["ensemble", "--config", str(cfg), "--out", str(out3), "--seed", "12"]) == 0
    assert (out1 / "ensemble.csv").read_bytes() != (out3 / "ensemble.csv").read_bytes()


def test_landscape_command(tmp_path, capsys):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(LANDSCAPE_CONFIG)
    out = tmp_path / "ls"
    assert main(["landscape-check", "--config", str(cfg), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "linear-lyapunov" in text
    lines = (out / "landscape.csv").read_text().splitlines()
    assert lines[0].startswith("x0,x1,ortho,")
    assert len(lines) == 51
    worst = max(abs(float(l.split(",")[2])) for l in lines[1:])
    assert worst < 1e-10
