"""Monte Carlo evaluation of guidance policies and the parameter studies."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import BASELINES, PolicyId, baseline_policy
from .fleet import SensorSpec, propagate_sensors
from .guidance import solve_fbs
from .plant import (covariance_factor, measurement_matrices, pointwise_variance, run_filter,
                    simulate_truth, trial_rng, uniform_grid)
from .riccati import propagate_covariance

log = logging.getLogger(__name__)


@dataclass(eq=False)
class TrialStats:
    policy: str
    n_trials: int
    terminal_error_mean: float
    terminal_error_std: float
    per_trial_errors: np.ndarray
    variance_grid_snapshots: list = field(default_factory=list)
    predicted_trace: float = float("nan")

    @property
    def terminal_sq_error_mean(self):
        return float(np.mean(self.per_trial_errors ** 2))

    @property
    def terminal_sq_error_sem(self):
        sq = self.per_trial_errors ** 2
        return float(np.std(sq, ddof=1) / np.sqrt(sq.size)) if sq.size > 1 else float("nan")


@dataclass(eq=False)
class StudyResult:
    kind: str
    axis_name: str
    axis: list
    entries: list            # one summary dict per axis value
    solutions: list = field(default_factory=list)
    trials: list = field(default_factory=list)
    reference: float | None = None

    def column(self, key):
        return np.array([e[key] for e in self.entries], dtype=float)


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _node_guidance(guidance, grid):
    if callable(guidance):
        return np.array([guidance(t) for t in grid.times])
    return np.asarray(guidance, dtype=float)


def run_trials(scenario, guidance, n_trials=100, master_seed=0, snapshot_times=(),
               threads=1, policy="optimal", grid_size=144, noiseless=False):
    """Simulate truth, measurements and filter for ``n_trials`` seeded trials.

    ``guidance`` is a node array or a callable ``p(t)``.  Each trial draws
    from its own stream keyed by ``(master_seed, trial)``, so results do not
    depend on ``threads``.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    model, fleet, grid = scenario.model, scenario.fleet, scenario.grid
    states = propagate_sensors(fleet, guidance, grid)
    locs = fleet.locations(states)
    cov_traj = propagate_covariance(model, locs, grid, fleet.radii, fleet.noise_vars)
    cmats = measurement_matrices(model, locs, fleet.radii)
    noise_sd = np.sqrt(np.asarray(fleet.noise_vars) / grid.step)
    init_f = covariance_factor(model.init_cov)
    proc_f = covariance_factor(model.process_cov)
    snap_idx = [int(round(t / grid.step)) for t in snapshot_times]
    if any(not 0 <= k <= grid.count for k in snap_idx):
        raise ValueError("snapshot times must lie on the grid")

    def one(trial):
        rng = trial_rng(master_seed, trial)
        truth = simulate_truth(model, grid, rng, init_sample=not noiseless,
                               process_noise=not noiseless,
                               init_factor=init_f, process_factor=proc_f)
        y = np.einsum("kds,kd->ks", cmats, truth)
        if not noiseless:
            y = y + noise_sd * rng.standard_normal(y.shape)
        est = run_filter(model, grid, cmats, y, fleet.noise_vars, cov_traj)
        err = truth - est
        return np.linalg.norm(err[-1]), err[snap_idx]

    results = _map(one, range(n_trials), threads)
    errors = np.array([r[0] for r in results])
    snaps = []
    if snap_idx and n_trials >= 2:
        pts = uniform_grid(grid_size)
        for j, k in enumerate(snap_idx):
            samples = np.array([r[1][j] for r in results])
            snaps.append((k * grid.step, pointwise_variance(samples, pts)))
    return TrialStats(
        policy=str(PolicyId(policy).value) if policy in PolicyId._value2member_map_ else str(policy),
        n_trials=n_trials,
        terminal_error_mean=float(errors.mean()),
        terminal_error_std=float(errors.std(ddof=1)) if n_trials > 1 else 0.0,
        per_trial_errors=errors,
        variance_grid_snapshots=snaps,
        predicted_trace=float(np.trace(cov_traj.matrices[-1])))


def policy_guidance(scenario, policy, solution=None):
    policy = PolicyId(policy)
    if policy is PolicyId.OPTIMAL:
        if solution is None:
            solution = solve_fbs(scenario)
        return solution.guidance
    return baseline_policy(policy, scenario.fleet, scenario.field, scenario.grid)


def compare_policies(scenario, n_trials=100, master_seed=0, threads=1, solution=None,
                     policies=(PolicyId.OPTIMAL,) + BASELINES):
    """Trial statistics for the optimal guidance and each baseline on common seeds."""
    if solution is None and PolicyId.OPTIMAL in policies:
        solution = solve_fbs(scenario)
    out = {}
    for pol in policies:
        g = policy_guidance(scenario, pol, solution)
        out[PolicyId(pol).value] = run_trials(scenario, g, n_trials, master_seed,
                                              threads=threads, policy=pol)
    return out


def _summary(sol, scenario):
    return {
        "cost_total": sol.cost_total,
        "cost_uncertainty": sol.cost_uncertainty,
        "cost_mobility": sol.cost_mobility,
        "converged": bool(sol.converged),
        "iterations": sol.iterations,
        "guidance_energy": sol.guidance_energy(scenario.grid),
        "path_length": sol.path_length(scenario.fleet),
    }


def _multistart(scen, starts):
    best = None
    for g in starts:
        sol = solve_fbs(scen, initial_guidance=g)
        if best is None or sol.cost_total < best.cost_total:
            best = sol
    return best


def convergence_study(scenario, orders, threads=1, multistart=True):
    """Optimal cost for each Galerkin order, normalized by the largest order.

    The cost is multimodal in the guidance, so by default each order is
    solved from the zero guess and from the moving baselines, then once more
    from the best guidance found at every other order; the lowest cost is
    kept.  Node guidance transfers between orders because the time grid is
    shared.
    """
    orders = [int(n) for n in orders]
    if any(b < a for a, b in zip(orders, orders[1:])):
        raise ValueError("orders must be increasing")
    unique = sorted(set(orders))
    scens = {n: scenario.evolve(order=n) for n in unique}
    base = [None]
    if multistart:
        grid = scenario.grid
        try:
            base += [_node_guidance(baseline_policy(p, scenario.fleet, scenario.field, grid),
                                    grid)
                     for p in BASELINES if p is not PolicyId.NULL]
        except ValueError:
            log.info("baselines unavailable for this fleet; multistart uses orders only")
    solved = dict(zip(unique, _map(lambda n: _multistart(scens[n], base), unique, threads)))
    if multistart and len(unique) > 1:
        def cross(n):
            others = [solved[m].guidance for m in unique if m != n]
            cand = _multistart(scens[n], others)
            return cand if cand.cost_total < solved[n].cost_total else solved[n]
        solved = dict(zip(unique, _map(cross, unique, threads)))
    sols = [solved[n] for n in orders]
    entries = [dict(_summary(s, scenario), order=n) for n, s in zip(orders, sols)]
    ref = sols[-1].cost_total
    for e in entries:
        e["normalized_cost"] = e["cost_total"] / ref
        if not e["converged"]:
            log.warning("order %d did not converge", e["order"])
    return StudyResult(kind="convergence", axis_name="order", axis=orders, entries=entries,
                       solutions=sols, reference=ref)


def with_sensor_params(scenario, noise_var=None, guidance_penalty=None):
    sensors = []
    for s in scenario.sensors:
        kw = {k: getattr(s, k) for k in ("init_state", "footprint_radius", "noise_var",
                                         "guidance_penalty", "dyn_matrix", "input_matrix",
                                         "position_rows", "drift_in_flow")}
        if noise_var is not None:
            kw["noise_var"] = noise_var
        if guidance_penalty is not None:
            kw["guidance_penalty"] = guidance_penalty
        sensors.append(SensorSpec(**kw))
    return scenario.evolve(sensors=tuple(sensors))


def parameter_sweep(scenario, parameter, values, n_trials=0, master_seed=0, threads=1,
                    baselines=False):
    """Solve (and optionally Monte Carlo evaluate) for each value of R or gamma."""
    if parameter not in ("R", "gamma"):
        raise ValueError("parameter must be 'R' or 'gamma'")
    values = [float(v) for v in values]
    if any(v <= 0 for v in values) or any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError("sweep values must be positive and increasing")
    key = "noise_var" if parameter == "R" else "guidance_penalty"
    scens = [with_sensor_params(scenario, **{key: v}) for v in values]
    sols = _map(solve_fbs, scens, threads)
    entries, trials = [], []
    for v, scen, sol in zip(values, scens, sols):
        entries.append(dict(_summary(sol, scen), **{parameter: v}))
        if n_trials:
            pols = (PolicyId.OPTIMAL,) + (BASELINES if baselines else ())
            trials.append(compare_policies(scen, n_trials, master_seed, threads, sol, pols))
    return StudyResult(kind=f"sweep_{parameter}", axis_name=parameter, axis=values,
                       entries=entries, solutions=sols, trials=trials)


def corner_starts(count, origin=(0.1, 0.1), spacing=0.08, columns=4):
    """Distinct start points packed row by row from the lower-left corner."""
    return [(origin[0] + spacing * (i % columns), origin[1] + spacing * (i // columns))
            for i in range(count)]


def rotated_starts(start=(0.3, 0.1), count=4, center=(0.5, 0.5)):
    """``count`` copies of ``start`` rotated evenly about ``center``."""
    rel = np.asarray(start) - np.asarray(center)
    out = []
    for i in range(count):
        a = 2 * np.pi * i / count
        rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        out.append(tuple((np.asarray(center) + rot @ rel).tolist()))
    return out


def team_scenario(base, starts, params, kernel_scale, peak=(0.5, 0.5)):
    """Fleet of single integrators with per-sensor ``(R, gamma)`` on a rescaled field."""
    ref = base.sensors[0]
    sensors = tuple(SensorSpec(init_state=tuple(z), footprint_radius=ref.footprint_radius,
                               noise_var=r, guidance_penalty=g)
                    for z, (r, g) in zip(starts, params))
    field_spec = replace(base.field, kernel_scale=float(kernel_scale), uncertainty_peak=tuple(peak))
    return base.evolve(sensors=sensors, field=field_spec)


def homogeneous_team(base, n_sensors=4, noise_var=0.2, guidance_penalty=0.5):
    starts = rotated_starts(base.sensors[0].init_state[:2], n_sensors)
    return team_scenario(base, starts, [(noise_var, guidance_penalty)] * n_sensors,
                         kernel_scale=n_sensors)


def heterogeneous_study(base, n_sensors=8, mp_values=None, poor=(1.0, 2.5),
                        superior=(0.2, 0.5), kernel_scale=None, threads=1, starts=None):
    """Teams with ``m_p`` poor and ``n_sensors - m_p`` superior sensors.

    Costs are normalized by the all-superior team (``m_p = 0``).  The first
    ``m_p`` sensors in start order are the poor ones.
    """
    mp_values = list(range(n_sensors + 1)) if mp_values is None else [int(m) for m in mp_values]
    if any(not 0 <= m <= n_sensors for m in mp_values):
        raise ValueError("m_p must lie in [0, n_sensors]")
    if kernel_scale is None:
        kernel_scale = n_sensors
    starts = corner_starts(n_sensors) if starts is None else starts
    axis = sorted(set([0] + mp_values))
    scens = [team_scenario(base, starts, [poor] * m + [superior] * (n_sensors - m), kernel_scale)
             for m in axis]
    sols = _map(solve_fbs, scens, threads)
    ref_total = sols[0].cost_total
    ref_unc = sols[0].cost_uncertainty
    entries = []
    for m, scen, sol in zip(axis, scens, sols):
        e = dict(_summary(sol, scen), m_p=m)
        e["normalized_total"] = sol.cost_total / ref_total
        e["normalized_uncertainty"] = sol.cost_uncertainty / ref_unc
        entries.append(e)
    keep = [i for i, m in enumerate(axis) if m in mp_values]
    return StudyResult(kind="heterogeneous", axis_name="m_p", axis=[axis[i] for i in keep],
                       entries=[entries[i] for i in keep], solutions=[sols[i] for i in keep],
                       reference=ref_total)


def snapshot_study(scenario, snapshot_times, n_trials=100, master_seed=0, threads=1,
                   grid_size=144, solution=None):
    """Optimal solve plus Monte Carlo pointwise-variance snapshots along the trajectory."""
    if solution is None:
        solution = solve_fbs(scenario)
    stats = run_trials(scenario, solution.guidance, n_trials, master_seed, snapshot_times,
                       threads=threads, grid_size=grid_size)
    return solution, stats
