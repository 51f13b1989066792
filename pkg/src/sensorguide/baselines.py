"""Fixed comparison policies for single-integrator sensors in a uniform flow."""

from __future__ import annotations

import enum

import numpy as np

NAIVE1_TARGET = (0.7, 0.9)
CIRCLE_CENTER = (0.5, 0.5)
CIRCLE_RADIUS = 1.0 / np.sqrt(5.0)
CIRCLE_RATE = np.pi  # rad/s, clockwise


class PolicyId(str, enum.Enum):
    OPTIMAL = "optimal"
    NAIVE1 = "naive1"
    NAIVE2 = "naive2"
    NAIVE3 = "naive3"
    NULL = "null"


BASELINES = (PolicyId.NAIVE1, PolicyId.NAIVE2, PolicyId.NAIVE3, PolicyId.NULL)


def _check_fleet(fleet):
    if not all(s.is_single_integrator() for s in fleet.sensors):
        raise ValueError("baseline policies are defined for single-integrator sensors only")


def _straight_line(start, target, horizon):
    """Constant velocity reaching ``target`` exactly at ``horizon``; hold afterwards."""
    vel = (np.asarray(target, float) - np.asarray(start, float)) / horizon

    def velocity(t):
        return vel if t <= horizon else np.zeros(2)

    return velocity


def _circle(start):
    c = np.asarray(CIRCLE_CENTER)
    rel = np.asarray(start, float) - c
    phase = np.arctan2(rel[1], rel[0])

    def velocity(t):
        ang = phase - CIRCLE_RATE * t
        return CIRCLE_RADIUS * CIRCLE_RATE * np.array([np.sin(ang), -np.cos(ang)])

    return velocity


def policy_velocity(policy, fleet, field, grid):
    """Kinematic velocity ``t -> (m,)`` of the desired path for every sensor."""
    policy = PolicyId(policy)
    if policy is PolicyId.OPTIMAL:
        raise ValueError("the optimal policy comes from the guidance solver")
    _check_fleet(fleet)
    per_sensor = []
    for s in fleet.sensors:
        start = np.asarray(s.init_state)
        if policy is PolicyId.NAIVE1:
            per_sensor.append(_straight_line(start, NAIVE1_TARGET, grid.horizon))
        elif policy is PolicyId.NAIVE2:
            per_sensor.append(_straight_line(start, field.uncertainty_peak, grid.horizon))
        elif policy is PolicyId.NAIVE3:
            per_sensor.append(_circle(start))
        else:
            per_sensor.append(lambda t: np.zeros(2))

    def velocity(t):
        return np.concatenate([v(t) for v in per_sensor])

    return velocity


def baseline_policy(policy, fleet, field, grid):
    """Guidance ``t -> p(t)`` realizing the policy's path: desired velocity minus drift."""
    velocity = policy_velocity(policy, fleet, field, grid)
    drift = fleet.drift.copy()

    def guidance(t):
        return velocity(t) - drift

    return guidance


def baseline_guidance(policy, t, fleet, field, grid):
    return baseline_policy(policy, fleet, field, grid)(t)


def sample_policy(policy, fleet, field, grid):
    """Node values ``(K+1, m)`` of a baseline guidance."""
    g = baseline_policy(policy, fleet, field, grid)
    return np.array([g(t) for t in grid.times])
