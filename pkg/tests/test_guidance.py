import numpy as np
import pytest

from sensorguide.baselines import BASELINES, baseline_policy
from sensorguide.fleet import MobilitySpec, assemble_fleet, single_integrator
from sensorguide.guidance import (GuidanceProblem, SolverSettings, backward_pass,
                                  control_from_costate, cost_gradient_fd, evaluate_policy,
                                  forward, solve_fbs, total_cost)
from sensorguide.riccati import TimeGrid
from sensorguide.scenario import reference_scenario
from sensorguide.spectral import FieldSpec, build_model


def make_problem(order=4, grid=TimeGrid(2.0, 0.04), field=FieldSpec(), sensors=None,
                 include_uncertainty=True, **mobility):
    sensors = sensors or [single_integrator(0.3, 0.1)]
    fleet = assemble_fleet(sensors, field.flow)
    mob = MobilitySpec(guidance_penalty=fleet.penalty_matrix(), **mobility)
    return GuidanceProblem(build_model(order, field), fleet, mob, grid,
                           include_uncertainty=include_uncertainty)


def rel_sup(a, b):
    return np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(b)))


# --------------------------------------------------------------------------
# control_from_costate
# --------------------------------------------------------------------------

def test_control_from_costate_examples():
    eye = MobilitySpec(guidance_penalty=np.eye(2))
    half = MobilitySpec(guidance_penalty=0.5 * np.eye(2))
    np.testing.assert_array_equal(control_from_costate(np.zeros(2), eye), [0.0, 0.0])
    np.testing.assert_allclose(control_from_costate(np.array([2.0, -4.0]), eye), [-2.0, 4.0])
    np.testing.assert_allclose(control_from_costate(np.array([1.0, 0.0]), half), [-2.0, 0.0])


def test_control_from_costate_uses_beta():
    fleet = assemble_fleet([single_integrator(0.3, 0.1)])
    mob = MobilitySpec(guidance_penalty=np.diag([1.0, 4.0]))
    np.testing.assert_allclose(control_from_costate(np.array([[2.0, 4.0]]), mob, fleet),
                               [[-2.0, -1.0]])


# --------------------------------------------------------------------------
# backward pass
# --------------------------------------------------------------------------

def test_no_uncertainty_gives_zero_costate():
    prob = make_problem(include_uncertainty=False)
    p = np.random.default_rng(0).standard_normal((prob.grid.count + 1, 2))
    lam, grad = backward_pass(prob, guidance=p)
    assert np.all(lam == 0.0)
    np.testing.assert_allclose(grad, 0.5 * p, atol=1e-15)


def test_symmetric_scenario_is_stationary():
    field = FieldSpec(flow=(0.0, 0.0), uncertainty_peak=(0.5, 0.5))
    prob = make_problem(order=6, field=field, sensors=[single_integrator(0.5, 0.5)])
    _, grad = backward_pass(prob, guidance=np.zeros((prob.grid.count + 1, 2)))
    assert np.max(np.abs(grad)) <= 1e-8


def test_adjoint_matches_finite_differences_reference_case():
    prob = reference_scenario(order=4, grid=TimeGrid(2.0, 0.04)).problem()
    p = np.zeros((prob.grid.count + 1, 2))
    _, grad = backward_pass(prob, guidance=p)
    fd = cost_gradient_fd(prob, p, eps=1e-5)
    assert rel_sup(grad, fd) <= 1e-4


def test_adjoint_matches_finite_differences_curved_path():
    prob = make_problem(order=5, grid=TimeGrid(1.0, 0.05),
                        hazard=(), terminal_target=(0.6, 0.6), terminal_weight=0.5)
    t = prob.grid.times[:, None]
    p = np.hstack([0.3 * np.sin(3 * t), 0.2 + 0.4 * np.cos(2 * t)])
    _, grad = backward_pass(prob, guidance=p)
    assert rel_sup(grad, cost_gradient_fd(prob, p, eps=1e-5)) <= 1e-6


def test_adjoint_matches_finite_differences_with_substeps():
    field = FieldSpec(kernel_scale=8.0, uncertainty_peak=(0.5, 0.5))
    sensors = [single_integrator(0.4, 0.5, noise_var=0.05),
               single_integrator(0.6, 0.45, noise_var=0.05)]
    prob = make_problem(order=4, grid=TimeGrid(0.4, 0.04), field=field, sensors=sensors)
    p = np.full((prob.grid.count + 1, 4), 0.2)
    assert forward(prob, p).cov_traj.substeps.max() > 1
    _, grad = backward_pass(prob, guidance=p)
    assert rel_sup(grad, cost_gradient_fd(prob, p, eps=1e-5)) <= 1e-6


def test_finite_difference_error_is_second_order():
    # substep counts change discretely with the path; keep this case free of them
    prob = make_problem(order=4, grid=TimeGrid(2.0, 0.05),
                        sensors=[single_integrator(0.3, 0.1, noise_var=5.0)])
    t = prob.grid.times[:, None]
    p = np.hstack([-0.1 + 0.2 * np.sin(2 * t), 0.1 + 0.2 * np.cos(t)])
    d = np.random.default_rng(3).standard_normal(p.shape)
    fwd = forward(prob, p)
    assert fwd.cov_traj.substeps.max() == 1
    # footprint stays clear of the boundary, where clipping is not smooth
    assert fwd.locations.min() > 0.06 and fwd.locations.max() < 0.94
    _, grad = backward_pass(prob, guidance=p)
    exact = np.sum(prob.weights[:, None] * grad * d)

    def err(eps):
        fd = (total_cost(prob, p + eps * d) - total_cost(prob, p - eps * d)) / (2 * eps)
        return abs(fd - exact)

    for eps in (0.02, 0.01):
        assert 3.0 <= err(eps) / err(eps / 2) <= 5.0


def test_fd_of_effort_only_cost_is_effort_gradient():
    prob = make_problem(include_uncertainty=False, grid=TimeGrid(1.0, 0.1))
    p = np.random.default_rng(1).standard_normal((11, 2))
    np.testing.assert_allclose(cost_gradient_fd(prob, p, eps=1e-4), 0.5 * p, atol=1e-8)


# --------------------------------------------------------------------------
# sweep
# --------------------------------------------------------------------------

def test_saturated_footprint_converges_immediately():
    sensor = single_integrator(0.3, 0.1, footprint_radius=1.0, drift_in_flow=False)
    prob = make_problem(order=4, sensors=[sensor])
    sol = solve_fbs(prob)
    assert sol.converged and sol.iterations <= 2
    assert np.all(sol.guidance == 0.0)


@pytest.mark.parametrize("weight", [1.0, 5.0])
def test_lq_closed_form(weight):
    sensor = single_integrator(0.3, 0.1, drift_in_flow=False)
    prob = make_problem(order=2, sensors=[sensor], include_uncertainty=False,
                        terminal_target=(0.7, 0.9), terminal_weight=weight)
    sol = solve_fbs(prob, SolverSettings(tol=1e-12, max_iter=100))
    # minimizer of (gamma/2)|p|^2 T + w|z0 + pT - xf|^2 over constant p
    gamma, horizon = 0.5, prob.grid.horizon
    exact = 2 * weight * (np.array([0.7, 0.9]) - [0.3, 0.1]) / (gamma + 2 * weight * horizon)
    assert sol.converged
    assert np.max(np.abs(sol.guidance - exact)) <= 1e-6


def test_plain_relaxed_sweep_also_solves_lq():
    sensor = single_integrator(0.3, 0.1, drift_in_flow=False)
    prob = make_problem(order=2, sensors=[sensor], include_uncertainty=False,
                        terminal_target=(0.7, 0.9), terminal_weight=1.0)
    sol = solve_fbs(prob, SolverSettings(memory=0, tol=1e-10, max_iter=500))
    exact = 2 * (np.array([0.7, 0.9]) - [0.3, 0.1]) / (0.5 + 4.0)
    assert np.max(np.abs(sol.guidance - exact)) <= 1e-6


def test_sweep_history_nonincreasing(ref12_solution):
    h = np.array(ref12_solution.cost_history)
    assert len(h) >= 2 and np.all(np.diff(h) <= 0.0)


def test_stationarity_at_optimum(ref12, ref12_solution):
    sol = ref12_solution
    assert sol.converged
    effort = ref12.mobility.effort_grad(sol.guidance)
    costate_term = sol.gradient - effort
    scale = np.max(np.abs(effort)) + np.max(np.abs(costate_term))
    assert np.max(np.abs(sol.gradient)) <= 1e-4 * scale


def test_cost_parts_add_up(ref12_solution):
    s = ref12_solution
    assert s.cost_total == pytest.approx(s.cost_uncertainty + s.cost_mobility, rel=1e-14)


def test_optimal_beats_every_baseline(ref12, ref12_solution):
    prob = ref12.problem()
    for policy in BASELINES:
        g = baseline_policy(policy, ref12.fleet, ref12.field, ref12.grid)
        base = evaluate_policy(prob, g)
        assert ref12_solution.cost_total < base.cost_total, policy


def test_evaluate_policy_agrees_with_forward():
    prob = make_problem(order=4)
    p = np.tile([0.1, 0.2], (prob.grid.count + 1, 1))
    assert evaluate_policy(prob, p).cost_total == pytest.approx(total_cost(prob, p), rel=1e-13)
    # constant callable integrates identically to constant nodes
    const = evaluate_policy(prob, lambda t: np.array([0.1, 0.2]))
    assert const.cost_total == pytest.approx(total_cost(prob, p), rel=1e-13)


def test_admissibility_report():
    prob = make_problem(order=3, grid=TimeGrid(1.0, 0.05))
    sol = solve_fbs(prob, initial_guidance=np.zeros((21, 2)), clamps={"p_max": 1e-9})
    assert sol.guidance_sup_norm > 1e-9 and not sol.admissible
    loose = solve_fbs(prob, clamps={"p_max": 100.0, "a_max": 1e6})
    assert loose.admissible
    assert loose.guidance_lipschitz == pytest.approx(
        np.max(np.linalg.norm(np.diff(loose.guidance, axis=0), axis=1)) / 0.05)


def test_max_iter_flags_nonconvergence():
    prob = make_problem(order=4)
    sol = solve_fbs(prob, SolverSettings(max_iter=1))
    assert not sol.converged and sol.iterations == 1
    assert sol.cost_total <= sol.cost_history[0]


def test_solver_settings_validation():
    for bad in ({"omega": 0.0}, {"omega": 1.5}, {"tol": 0.0}, {"max_iter": 0}, {"memory": -1}):
        with pytest.raises(ValueError):
            SolverSettings(**bad)
