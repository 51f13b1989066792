import csv

import numpy as np
import pytest

from sensorguide.cli import EXIT_IO, EXIT_NOT_CONVERGED, EXIT_OK, export_csv, main
from sensorguide.evaluation import TrialStats
from sensorguide.riccati import TimeGrid
from sensorguide.scenario import load_scenario, reference_scenario, save_scenario


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "scenario.ini"
    save_scenario(reference_scenario(order=3, grid=TimeGrid(0.5, 0.05)), path)
    return path


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_discretize(config, tmp_path):
    out = tmp_path / "d"
    assert main(["discretize", "--config", str(config), "--out", str(out)]) == EXIT_OK
    gen = np.loadtxt(out / "generator.csv", delimiter=",")
    assert gen.shape == (9, 9)
    assert gen[0, 0] == -0.01 * np.pi ** 2 * 2
    modes = rows(out / "modes.csv")
    assert modes[1][:3] == ["1", "1", "1"] and len(modes) == 10
    assert (out / "discretize_run.ini").exists()


def test_solve_writes_trajectory_and_costs(config, tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["solve", "--config", str(config), "--out", str(out)]) == EXIT_OK
    traj = rows(out / "trajectory.csv")
    assert traj[0] == ["t", "p_1", "p_2", "zeta_1", "zeta_2", "trace_Pi"]
    assert len(traj) == 12
    costs = dict(rows(out / "costs.csv")[1:])
    assert float(costs["cost_total"]) == pytest.approx(
        float(costs["cost_uncertainty"]) + float(costs["cost_mobility"]), rel=1e-15)
    assert "cost" in capsys.readouterr().out
    # the sidecar reloads as the same scenario
    assert load_scenario(out / "solve_run.ini") == load_scenario(config)


def test_non_convergence_exit_code(tmp_path):
    path = tmp_path / "c.ini"
    sc = reference_scenario(order=3, grid=TimeGrid(0.5, 0.05))
    sc = sc.evolve(solver=type(sc.solver)(max_iter=1))
    save_scenario(sc, path)
    out = tmp_path / "o"
    assert main(["solve", "--config", str(path), "--out", str(out)]) == EXIT_NOT_CONVERGED
    assert (out / "trajectory.csv").exists()


def test_simulate_stats_rows(config, tmp_path):
    out = tmp_path / "m"
    code = main(["simulate", "--config", str(config), "--out", str(out), "--policy", "null",
                 "--trials", "100", "--seed", "7"])
    assert code == EXIT_OK
    stats = rows(out / "stats_null.csv")
    assert stats[0] == ["trial", "terminal_error"]
    body = [r for r in stats[1:] if r[0].isdigit()]
    assert len(body) == 100
    assert [r[0] for r in stats[-2:]] == ["mean", "std"]


def test_simulate_snapshots(config, tmp_path):
    out = tmp_path / "v"
    code = main(["simulate", "--config", str(config), "--out", str(out), "--policy", "naive1",
                 "--trials", "4", "--snapshots", "0,0.5"])
    assert code == EXIT_OK
    grid = rows(out / "variance_naive1_t0.5.csv")
    assert grid[0] == ["x", "y", "variance"] and len(grid) == 144 * 144 + 1


def test_convergence_table(config, tmp_path):
    out = tmp_path / "c"
    code = main(["convergence", "--config", str(config), "--out", str(out), "--orders", "2,3",
                 "--single-start"])
    assert code == EXIT_OK
    table = rows(out / "convergence.csv")
    assert table[0][0] == "order" and len(table) == 3
    col = table[0].index("normalized_cost")
    assert float(table[-1][col]) == 1.0


def test_sweep_and_heterogeneous(config, tmp_path):
    out = tmp_path / "w"
    assert main(["sweep", "--config", str(config), "--out", str(out), "--param", "gamma",
                 "--values", "0.5,1.0"]) == EXIT_OK
    assert len(rows(out / "sweep_gamma.csv")) == 3
    assert main(["heterogeneous", "--config", str(config), "--out", str(out),
                 "--mp-range", "0..2", "--sensors", "2"]) == EXIT_OK
    table = rows(out / "heterogeneous.csv")
    assert [r[0] for r in table[1:]] == ["0", "1", "2"]


def test_missing_config_exits_io(tmp_path, capsys):
    assert main(["solve", "--config", str(tmp_path / "nope.ini")]) == EXIT_IO
    assert "error" in capsys.readouterr().err


def test_bad_config_exits_io(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[sensor.1]\ninit_state = 0.3, 0.1\n[grid]\nstep = 0.3\n")
    assert main(["solve", "--config", str(path)]) == EXIT_IO


def test_unwritable_output_exits_io(config, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["discretize", "--config", str(config), "--out", str(blocker)]) == EXIT_IO


def test_outputs_identical_across_threads(config, tmp_path):
    files = {}
    for threads in ("1", "3"):
        out = tmp_path / f"t{threads}"
        assert main(["simulate", "--config", str(config), "--out", str(out), "--trials", "6",
                     "--seed", "3", "--threads", threads, "--snapshots", "0.5"]) == EXIT_OK
        files[threads] = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    assert files["1"] == files["3"]


def test_seventeen_digit_round_trip(tmp_path):
    vals = np.array([0.1, 1 / 3, np.pi * 1e-300, 2.0 ** 0.5, 1e150 / 7])
    stats = TrialStats(policy="null", n_trials=vals.size, terminal_error_mean=float(vals.mean()),
                       terminal_error_std=float(vals.std(ddof=1)), per_trial_errors=vals)
    path = tmp_path / "s.csv"
    export_csv(stats, path)
    back = np.array([float(r[1]) for r in rows(path)[1:] if r[0].isdigit()])
    assert back.tobytes() == vals.tobytes()
