import numpy as np
import pytest

from sensorguide.baselines import (BASELINES, CIRCLE_CENTER, CIRCLE_RADIUS, PolicyId,
                                   baseline_guidance, baseline_policy, policy_velocity,
                                   sample_policy)
from sensorguide.fleet import SensorSpec, assemble_fleet, propagate_sensors, single_integrator
from sensorguide.riccati import TimeGrid
from sensorguide.spectral import FieldSpec

FIELD = FieldSpec()
GRID = TimeGrid()


@pytest.fixture
def fleet():
    return assemble_fleet([single_integrator(0.3, 0.1)], flow=FIELD.flow)


def run(policy, fleet):
    return propagate_sensors(fleet, baseline_policy(policy, fleet, FIELD, GRID), GRID)


def test_policy_ids():
    assert {p.value for p in PolicyId} == {"optimal", "naive1", "naive2", "naive3", "null"}
    assert PolicyId.OPTIMAL not in BASELINES and len(BASELINES) == 4


def test_null_cancels_drift(fleet):
    for t in (0.0, 0.7, 2.0):
        np.testing.assert_allclose(baseline_guidance("null", t, fleet, FIELD, GRID), [-0.1, 0.1])
    z = run("null", fleet)
    assert np.abs(z - z[0]).max() <= 1e-12


def test_naive1_velocity_and_endpoint(fleet):
    np.testing.assert_allclose(baseline_guidance("naive1", 0.3, fleet, FIELD, GRID), [0.1, 0.5],
                               atol=1e-15)
    np.testing.assert_allclose(run("naive1", fleet)[-1], [0.7, 0.9], atol=1e-10)


def test_naive2_reaches_uncertainty_peak(fleet):
    np.testing.assert_allclose(run("naive2", fleet)[-1], FIELD.uncertainty_peak, atol=1e-10)
    # holds position after the horizon
    np.testing.assert_allclose(baseline_guidance("naive2", 2.5, fleet, FIELD, GRID), [-0.1, 0.1])


def test_naive3_geometry(fleet):
    start = np.array([0.3, 0.1])
    assert np.linalg.norm(start - CIRCLE_CENTER) == pytest.approx(1 / np.sqrt(5), abs=1e-12)
    v = policy_velocity("naive3", fleet, FIELD, GRID)(0.0)
    assert np.linalg.norm(v) == pytest.approx(np.pi / np.sqrt(5))
    assert np.linalg.norm(v) == pytest.approx(1.40496, abs=1e-5)


def test_naive3_stays_on_circle_clockwise(fleet):
    z = run("naive3", fleet)
    rel = z - CIRCLE_CENTER
    assert np.abs(np.linalg.norm(rel, axis=1) - CIRCLE_RADIUS).max() <= 1e-8
    vel = np.array([policy_velocity("naive3", fleet, FIELD, GRID)(t) for t in GRID.times])
    cross = rel[:, 0] * vel[:, 1] - rel[:, 1] * vel[:, 0]
    assert np.all(cross < 0)


def test_multiple_sensors_stack():
    fleet = assemble_fleet([single_integrator(0.3, 0.1), single_integrator(0.2, 0.6)],
                           flow=FIELD.flow)
    z = run("naive1", fleet)
    np.testing.assert_allclose(z[-1], [0.7, 0.9, 0.7, 0.9], atol=1e-10)
    assert sample_policy("null", fleet, FIELD, GRID).shape == (GRID.count + 1, 4)


def test_rejections(fleet):
    with pytest.raises(ValueError):
        baseline_policy("optimal", fleet, FIELD, GRID)
    with pytest.raises(ValueError):
        baseline_policy("naive4", fleet, FIELD, GRID)
    alpha = np.zeros((4, 4))
    alpha[0, 2] = alpha[1, 3] = 1.0
    beta = np.zeros((4, 2))
    beta[2, 0] = beta[3, 1] = 1.0
    di = assemble_fleet([SensorSpec(init_state=(0.3, 0.1, 0, 0), dyn_matrix=alpha,
                                    input_matrix=beta)])
    with pytest.raises(ValueError):
        baseline_policy("null", di, FIELD, GRID)
