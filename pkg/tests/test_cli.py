import subprocess
import sys
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from sobodelay import cli
from sobodelay.errors import ConfigError
from sobodelay.mesh import read_mesh


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env-out"))
    return tmp_path


def run(argv, capsys):
    code = cli.main(argv)
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def test_solve_example(out, capsys):
    code, stdout, _ = run(["solve", "--problem", "example1", "--degree", "4", "--h", "1/32", "--sigma", "1/128"], capsys)
    assert code == 0
    assert "max H1 error=" in stdout
    h1 = float(stdout.split("max H1 error=")[1].split()[0])
    assert 0 < h1 < 1e-4
    d = out / "env-out"
    traj = (d / "example1_solve_trajectory.csv").read_text().splitlines()
    assert traj[0] == "n,t,H1_error,L2_error,beta_norm,newton_iters"
    assert len(traj) == 1 + 384
    sol = (d / "example1_solve_solution.dat").read_text().splitlines()
    assert sol[0].startswith("# x v_h") and len(sol) == 1 + 129
    assert (d / "example1_solve_error.dat").exists()


def test_solve_missing_sigma(out, capsys):
    code, _, err = run(["solve", "--problem", "example1", "--degree", "2", "--h", "1/4"], capsys)
    assert code == 1
    assert "'sigma'" in err


def test_solve_sigma_not_dividing_tau(out, capsys):
    code, _, err = run(["solve", "--problem", "example1", "--degree", "2", "--h", "1/4", "--sigma", "3/10"], capsys)
    assert code == 1
    assert "sigma = tau/m" in err


def test_solve_bad_h(out, capsys):
    code, _, err = run(["solve", "--problem", "example1", "--degree", "2", "--h", "0.3", "--sigma", "1/4"], capsys)
    assert code == 1 and "h=" in err


def test_usage_errors_exit_one(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["solve", "--degree", "two"])
    assert info.value.code == 1


def test_study_space_five_rows(out, capsys):
    argv = ["study-space", "--problem", "example1", "--degree", "2", "--sigma", "1/4",
            "--h-list", "1/2,1/4,1/8,1/16,1/32", "-o", str(out / "s")]
    code, stdout, _ = run(argv, capsys)
    assert code == 0
    lines = stdout.splitlines()
    assert lines[1].split()[:3] == ["h", "|||e|||_1,inf", "R"]
    assert len(lines) == 2 + 5
    assert lines[2].split()[0] == "2^-1"
    csv_lines = (out / "s" / "example1_space_study.csv").read_text().splitlines()
    assert csv_lines[0] == "axis,resolution,err_h1_sup,err_l2_sup,rate_h1,rate_l2,wall_s"
    assert len(csv_lines) == 6
    assert (out / "s" / "example1_space_study.json").exists()
    dat = (out / "s" / "example1_space_study_h1.dat").read_text().splitlines()
    assert len(dat) == 6


def test_study_time_example2(out, capsys):
    argv = ["study-time", "--problem", "example2", "--degree", "1", "--n-cells", "4",
            "--sigma-list", "1/4 1/8", "-o", str(out / "t"), "--jobs", "2"]
    code, stdout, _ = run(argv, capsys)
    assert code == 0
    lines = stdout.splitlines()
    assert lines[1].split()[0] == "sigma"
    assert [ln.split()[0] for ln in lines[2:]] == ["2^-2", "2^-3"]


def test_study_empty_list(out, capsys):
    code, _, err = run(["study-space", "--problem", "example1", "--degree", "2", "--sigma", "1/4", "--h-list", ""], capsys)
    assert code == 1 and "h_list" in err
    code, _, err = run(["study-time", "--problem", "example1", "--degree", "2", "--h", "1/4", "--sigma-list", " "], capsys)
    assert code == 1 and "sigma_list" in err


def test_study_csv_is_deterministic(out, capsys):
    texts = []
    for k in range(2):
        d = out / f"d{k}"
        argv = ["study-time", "--problem", "example1", "--degree", "2", "--h", "1/4",
                "--sigma-list", "1/2,1/4", "--no-timing", "-o", str(d)]
        assert run(argv, capsys)[0] == 0
        texts.append((d / "example1_time_study.csv").read_bytes())
    assert texts[0] == texts[1]


def test_solve_outputs_are_deterministic(out, capsys):
    blobs = []
    for k in range(2):
        d = out / f"r{k}"
        argv = ["solve", "--problem", "example2", "--degree", "2", "--n-cells", "4", "--sigma", "1/4", "-o", str(d)]
        assert run(argv, capsys)[0] == 0
        blobs.append((d / "example2_solve_trajectory.csv").read_bytes())
    assert blobs[0] == blobs[1]


def test_stability_probe_bounded(out, capsys):
    argv = ["stability-probe", "--problem", "example1", "--degree", "4", "--h", "2^-6", "--sigma-list", "1/2,1/4"]
    code, stdout, _ = run(argv, capsys)
    assert code == 0
    rows = [ln for ln in stdout.splitlines() if ln.strip().startswith(("1/2", "1/4"))]
    assert len(rows) == 2 and all(r.endswith("BOUNDED") for r in rows)


def test_stability_probe_detects_blow_up(out, capsys):
    argv = ["stability-probe", "--problem", "example1", "--degree", "2", "--h", "1/32",
            "--sigma-list", "1/2", "--scheme", "explicit-euler", "--beta", "1e-6"]
    code, stdout, _ = run(argv, capsys)
    assert code == 2
    assert "UNSTABLE" in stdout


def test_verify_all_pass(capsys):
    code, stdout, _ = run(["verify"], capsys)
    assert code == 0
    assert stdout.count("PASS") == 7


def test_verify_single_suite(capsys):
    code, stdout, _ = run(["verify", "--suite", "green"], capsys)
    assert code == 0
    assert stdout.splitlines()[0].split()[:2] == ["PASS", "green"]
    assert "1/1 suites passed" in stdout


def test_verify_detects_injected_fault(capsys):
    code, stdout, _ = run(["verify", "--inject-fault", "trapezoid"], capsys)
    assert code == 2
    assert "FAIL  delay-weights" in stdout


def test_config_file_and_flag_override(out, capsys):
    cfg = out / "run.ini"
    cfg.write_text(
        "[run]\nproblem = example1\ndegree = 2\nh = 1/4\nsigma = 1/4\n\n[output]\ndir = %s\n" % (out / "cfgout")
    )
    code, stdout, _ = run(["solve", "-c", str(cfg), "--sigma", "1/2"], capsys)
    assert code == 0
    assert "sigma=1/2" in stdout and "N=6" in stdout
    assert (out / "cfgout" / "example1_solve_trajectory.csv").exists()


def test_config_unknown_key_reports_line(out, capsys):
    cfg = out / "bad.ini"
    cfg.write_text("[run]\nproblem = example1\nsigmaa = 1/4\n")
    code, _, err = run(["solve", "-c", str(cfg)], capsys)
    assert code == 1
    assert "bad.ini:3" in err and "sigmaa" in err


def test_env_var_sets_output_dir(out, capsys):
    argv = ["solve", "--problem", "example1", "--degree", "1", "--h", "1/4", "--sigma", "1/2", "--dump-mesh"]
    assert run(argv, capsys)[0] == 0
    mesh = read_mesh(out / "env-out" / "example1_solve.mesh")
    assert mesh.n_cells == 4


def test_parse_number_forms():
    assert cli.parse_number("1/128") == Fraction(1, 128)
    assert cli.parse_number("2^-7") == Fraction(1, 128)
    assert cli.parse_number("0.25") == Fraction(1, 4)
    with pytest.raises(ConfigError):
        cli.parse_number("abc")


fractions = st.fractions(min_value=Fraction(1, 1024), max_value=8, max_denominator=1024)
configs = st.builds(
    cli.RunConfig,
    problem=st.sampled_from([None, "example1", "example2"]),
    degree=st.none() | st.integers(1, 5),
    h=st.none() | fractions,
    n_cells=st.none() | st.integers(1, 64),
    sigma=st.none() | fractions,
    T_f=st.none() | fractions,
    startup_mode=st.sampled_from([None, "exact-seed", "crank-nicolson-substepped"]),
    linearization=st.sampled_from([None, "full-newton", "picard-lagged-z"]),
    newton_tol=st.none() | st.floats(1e-14, 1e-2),
    h_list=st.none() | st.lists(fractions, min_size=1, max_size=5),
    sigma_list=st.none() | st.lists(fractions, min_size=1, max_size=5),
    jobs=st.none() | st.integers(1, 8),
    output_dir=st.none() | st.sampled_from(["out", "/tmp/a b", "rel/dir"]),
    timing=st.none() | st.booleans(),
)


@given(configs)
def test_config_round_trip(cfg):
    text = cli.to_text(cfg)
    back = cli.parse_config(text)
    assert back == cfg
    assert cli.to_text(back) == text


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "sobodelay", "verify", "--suite", "delay-weights"],
        capture_output=True, text=True, cwd=tmp_path,
    )
    assert proc.returncode == 0, proc.stderr
    assert "PASS" in proc.stdout
