from pathlib import Path

import pytest

from delaymp import run
from output import read_csv_body

ROOT = Path(__file__).resolve().parent.parent

SMALL = """\
core:
  steps_per_delay: 4
  n_paths: 200
  seed: 3
"""


def test_usage_errors(capsys):
    assert run([]) == 2
    assert run(["frobnicate"]) == 2
    assert run(["simulate", "--threads", "many"]) == 2


def test_lq_demo(write_config, tmp_path, capsys):
    out = tmp_path / "demo"
    assert run(["lq-demo", "--config", write_config(SMALL), "--out", str(out)]) == 0
    report = (out / "report.txt").read_text()
    assert "u = -1" in report
    assert "Verdict: u = -1 is optimal" in report
    for name in ("adjoints.csv", "margins.csv", "optimality.csv"):
        assert (out / name).exists()
    assert "Wrote lq-demo outputs" in capsys.readouterr().out


def test_simulate_ignores_thread_count(write_config, tmp_path):
    config = write_config(SMALL)
    bodies = []
    for threads in ("1", "3"):
        out = tmp_path / f"simulate{threads}.csv"
        argv = ["simulate", "--config", config, "--out", str(out), "--threads", threads]
        assert run(argv) == 0
        text = out.read_text()
        assert text.startswith("# delaymp: ")
        assert "# seed: 3" in text
        bodies.append(read_csv_body(out))
    assert bodies[0] == bodies[1]
    assert bodies[0][0] == "path,t,x"
    assert len(bodies[0]) == 1 + 20 * 13


def test_seed_flag_wins(write_config, tmp_path):
    out = tmp_path / "simulate.csv"
    argv = ["simulate", "--config", write_config(SMALL), "--out", str(out)]
    assert run(argv + ["--seed", "17"]) == 0
    assert "# seed: 17" in out.read_text()


def test_solve_absde_oracle(write_config, tmp_path, capsys):
    config = write_config("core:\n  n_paths: 200\n")
    out = tmp_path / "absde.csv"
    assert run(["solve-absde", "--config", config, "--out", str(out)]) == 0
    assert read_csv_body(out)[0] == "t,mean_y,sd_y,mean_z,sd_z,residual"
    assert "✓ relative error" in capsys.readouterr().out


def test_lq_adjoints_and_max_condition(write_config, tmp_path):
    config = write_config(SMALL)
    assert run(["adjoints", "--config", config, "--out", str(tmp_path / "a.csv")]) == 0
    assert run(["check-mp", "--config", config, "--out", str(tmp_path / "m.csv")]) == 0


def test_check_mp_is_advisory_when_k_survives(write_config, tmp_path, capsys):
    config = write_config(
        SMALL
        + """\
mp:
  problem: smooth
  adjoints: solved
  v_grid: [-1.0, 1.0]
"""
    )
    argv = ["check-mp", "--config", config, "--out", str(tmp_path / "m.csv")]
    assert run(argv) == 0
    out = capsys.readouterr().out
    assert "WARNING: maximum condition reported as advisory only" in out


def test_order_study_needs_three_epsilons(write_config, tmp_path, capsys):
    config = write_config(SMALL + "variation:\n  eps_steps: [4]\n")
    argv = ["order-study", "--config", config, "--out", str(tmp_path / "o.csv")]
    assert run(argv) == 2
    assert "Error:" in capsys.readouterr().out


def test_config_errors_print_the_stanza(write_config, capsys):
    assert run(["simulate", "--config", write_config("core:\n  n_paths: 5\n")]) == 2
    out = capsys.readouterr().out
    assert "Example stanza for 'core.n_paths'" in out
    assert "steps_per_delay" in out


def test_unknown_problem_is_a_config_error(write_config, tmp_path, capsys):
    config = write_config(SMALL + "sdde:\n  problem: nope\n")
    argv = ["simulate", "--config", config, "--out", str(tmp_path / "s.csv")]
    assert run(argv) == 2
    assert "sdde.problem" in capsys.readouterr().out


def test_empty_v_grid(write_config, tmp_path):
    config = write_config(SMALL + "mp:\n  v_grid: []\n  include_boundary: false\n")
    assert run(["check-mp", "--config", config, "--out", str(tmp_path / "m.csv")]) == 2


def test_v_grid_outside_the_control_set(write_config, tmp_path, capsys):
    config = write_config(SMALL + "mp:\n  v_grid: [0.5, 2.0]\n")
    assert run(["check-mp", "--config", config, "--out", str(tmp_path / "m.csv")]) == 2
    out = capsys.readouterr().out
    assert "mp.v_grid" in out
    assert "Example stanza for 'mp.v_grid'" in out
    demo = ["lq-demo", "--config", config, "--out", str(tmp_path / "demo")]
    assert run(demo) == 2


@pytest.mark.slow
def test_full_scale_lq_demo(tmp_path):
    config = str(ROOT / "config.example.yaml")
    assert run(["lq-demo", "--config", config, "--out", str(tmp_path)]) == 0


@pytest.mark.slow
def test_full_scale_order_study(tmp_path, capsys):
    config = str(ROOT / "workflows" / "configs" / "order_study.yaml")
    out = tmp_path / "o.csv"
    argv = ["order-study", "--config", config, "--out", str(out), "--threads", "4"]
    assert run(argv) == 0
    printed = capsys.readouterr().out
    assert "✓ slope(m1) within the first-order band" in printed
    assert "✓ slope(m4) above the second-order floor" in printed
