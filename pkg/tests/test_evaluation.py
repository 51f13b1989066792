import numpy as np
import pytest

from sensorguide.baselines import PolicyId
from sensorguide.evaluation import (compare_policies, convergence_study, corner_starts,
                                    heterogeneous_study, homogeneous_team, parameter_sweep,
                                    rotated_starts, run_trials, snapshot_study,
                                    with_sensor_params)
from sensorguide.guidance import solve_fbs
from sensorguide.riccati import TimeGrid
from sensorguide.scenario import reference_scenario


@pytest.fixture(scope="module")
def small():
    return reference_scenario(order=4, grid=TimeGrid(1.0, 0.02))


def null_guidance(sc):
    return np.tile([-0.1, 0.1], (sc.grid.count + 1, 1))


def test_noiseless_trials_have_zero_error(small):
    stats = run_trials(small, null_guidance(small), n_trials=5, noiseless=True)
    assert np.all(stats.per_trial_errors == 0.0)
    assert stats.terminal_error_mean == 0.0 and stats.terminal_error_std == 0.0


def test_trials_independent_of_thread_count(small):
    g = null_guidance(small)
    a = run_trials(small, g, n_trials=12, master_seed=5, threads=1)
    b = run_trials(small, g, n_trials=12, master_seed=5, threads=4)
    assert a.per_trial_errors.tobytes() == b.per_trial_errors.tobytes()
    c = run_trials(small, g, n_trials=12, master_seed=6)
    assert not np.array_equal(a.per_trial_errors, c.per_trial_errors)


def test_trial_statistics(small):
    s = run_trials(small, null_guidance(small), n_trials=10, policy="null")
    assert s.policy == "null" and s.n_trials == 10
    assert s.terminal_error_mean == pytest.approx(s.per_trial_errors.mean())
    assert s.terminal_error_std == pytest.approx(np.std(s.per_trial_errors, ddof=1))
    assert np.isfinite(s.predicted_trace)


def test_trial_validation(small):
    with pytest.raises(ValueError):
        run_trials(small, null_guidance(small), n_trials=0)
    with pytest.raises(ValueError):
        run_trials(small, null_guidance(small), n_trials=2, snapshot_times=[5.0])


def test_callable_guidance_accepted(small):
    s = run_trials(small, lambda t: np.array([-0.1, 0.1]), n_trials=3)
    t = run_trials(small, null_guidance(small), n_trials=3)
    np.testing.assert_allclose(s.per_trial_errors, t.per_trial_errors, rtol=1e-12)


def test_compare_policies_shares_seeds(small):
    sol = solve_fbs(small)
    res = compare_policies(small, n_trials=4, solution=sol)
    assert set(res) == {p.value for p in PolicyId}
    assert all(r.n_trials == 4 for r in res.values())


def test_convergence_duplicate_orders(small):
    res = convergence_study(small, [3, 3], multistart=False)
    c = res.column("cost_total")
    assert c[0] == c[1]
    np.testing.assert_array_equal(res.column("normalized_cost"), [1.0, 1.0])


def test_convergence_rejects_decreasing_orders(small):
    with pytest.raises(ValueError):
        convergence_study(small, [4, 3])


def test_multistart_never_worse_than_single_start(small):
    single = convergence_study(small, [3, 4], multistart=False)
    multi = convergence_study(small, [3, 4])
    assert np.all(multi.column("cost_total") <= single.column("cost_total") + 1e-12)
    assert multi.reference == multi.entries[-1]["cost_total"]


def test_single_value_sweep_equals_direct_solve(small):
    res = parameter_sweep(small, "gamma", [0.5])
    direct = solve_fbs(small)
    assert len(res.entries) == 1
    assert res.entries[0]["cost_total"] == direct.cost_total
    np.testing.assert_array_equal(res.solutions[0].guidance, direct.guidance)


def test_sweep_validation(small):
    with pytest.raises(ValueError):
        parameter_sweep(small, "order", [1.0])
    with pytest.raises(ValueError):
        parameter_sweep(small, "R", [0.5, 0.2])
    with pytest.raises(ValueError):
        parameter_sweep(small, "R", [0.0])


def test_with_sensor_params(small):
    sc = with_sensor_params(small, noise_var=0.7, guidance_penalty=1.5)
    assert sc.sensors[0].noise_var == 0.7 and sc.sensors[0].guidance_penalty == 1.5
    assert sc.sensors[0].init_state == small.sensors[0].init_state
    assert small.sensors[0].noise_var == 0.2


def test_start_layouts():
    starts = corner_starts(8)
    assert len(set(starts)) == 8
    rot = np.array(rotated_starts((0.3, 0.1), 4))
    np.testing.assert_allclose(np.linalg.norm(rot - 0.5, axis=1), np.sqrt(0.2), atol=1e-15)
    np.testing.assert_allclose(rot[2], [0.7, 0.9], atol=1e-15)


def test_homogeneous_team_layout(small):
    team = homogeneous_team(small, 4)
    assert len(team.sensors) == 4
    assert team.field.kernel_scale == 4.0 and team.field.uncertainty_peak == (0.5, 0.5)


def test_heterogeneous_reference_normalizes_to_one():
    base = reference_scenario(order=3, grid=TimeGrid(0.5, 0.05))
    res = heterogeneous_study(base, n_sensors=2, mp_values=[0, 2])
    assert res.entries[0]["normalized_total"] == 1.0
    assert res.entries[0]["normalized_uncertainty"] == 1.0
    assert res.axis == [0, 2]
    with pytest.raises(ValueError):
        heterogeneous_study(base, n_sensors=2, mp_values=[3])


def test_snapshot_variance_drops_in_footprint():
    sc = reference_scenario(order=6, grid=TimeGrid(2.0, 0.02))
    sol, stats = snapshot_study(sc, [0.0, 2.0], n_trials=60, grid_size=24)
    (t0, v0), (t1, v1) = stats.variance_grid_snapshots
    assert (t0, t1) == (0.0, 2.0) and v0.shape == (24, 24)
    loc = sc.fleet.locations(sol.states)[-1, 0]
    i, j = np.minimum((np.clip(loc, 0, 1) * 24).astype(int), 23)
    assert v1[i, j] < v0[i, j]
