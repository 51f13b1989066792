"""Optimal guidance by forward-backward sweep with an exact discrete adjoint.

The discrete problem is: RK4 sensor dynamics with guidance linearly
interpolated between nodes, RK4 Riccati propagation (substepped where the
measurement term is stiff) with sensor locations linearly interpolated
between nodes, and trapezoidal quadrature of
``tr(Pi) + h + g`` plus the terminal penalty.  :func:`backward_pass`
differentiates exactly this chain in reverse, so its output agrees with
finite differences of :func:`total_cost` to rounding error.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .fleet import mobility_cost, propagate_sensors, step_matrices
from .riccati import (CovarianceTrajectory, _rhs, _sym, location_outputs,
                      propagate_covariance, rk4_step, stage_outputs, substep_fractions, uncertainty_cost)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GuidanceProblem:
    """Discretized (AP) instance: field model, fleet, mobility cost and time grid."""

    model: object
    fleet: object
    mobility: object
    grid: object
    include_uncertainty: bool = True

    @property
    def weights(self):
        return self.grid.trapezoid_weights()


@dataclass(eq=False)
class ForwardState:
    guidance: np.ndarray
    states: np.ndarray
    locations: np.ndarray
    cov_traj: CovarianceTrajectory | None
    outputs: tuple | None
    cost_uncertainty: float
    cost_mobility: float

    @property
    def cost_total(self):
        return self.cost_uncertainty + self.cost_mobility


@dataclass(eq=False)
class GuidanceSolution:
    guidance: np.ndarray
    states: np.ndarray
    costates: np.ndarray
    cov_traj: CovarianceTrajectory | None
    cost_total: float
    cost_uncertainty: float
    cost_mobility: float
    iterations: int
    converged: bool
    guidance_sup_norm: float
    guidance_lipschitz: float
    gradient: np.ndarray | None = None
    cost_history: tuple = ()
    p_max: float | None = None
    a_max: float | None = None

    @property
    def admissible(self):
        ok = True
        if self.p_max is not None:
            ok &= self.guidance_sup_norm <= self.p_max
        if self.a_max is not None:
            ok &= self.guidance_lipschitz <= self.a_max
        return bool(ok)

    def guidance_energy(self, grid):
        return float(grid.trapezoid_weights() @ np.sum(self.guidance ** 2, axis=1))

    def path_length(self, fleet):
        locs = fleet.locations(self.states)
        return float(np.sum(np.linalg.norm(np.diff(locs, axis=0), axis=-1)))


# --------------------------------------------------------------------------
# forward evaluation
# --------------------------------------------------------------------------

def forward(problem, guidance, keep_outputs=False):
    """Propagate sensors and covariance for node guidance and evaluate the cost."""
    fleet, grid = problem.fleet, problem.grid
    guidance = np.asarray(guidance, dtype=float)
    states = propagate_sensors(fleet, guidance, grid)
    locs = fleet.locations(states)
    cov_traj = outputs = None
    j_unc = 0.0
    if problem.include_uncertainty:
        outputs = stage_outputs(problem.model, locs, fleet.radii, jacobian=keep_outputs)
        plain = (outputs[0][0], outputs[1][0]) if keep_outputs else outputs
        cov_traj = propagate_covariance(problem.model, locs, grid, fleet.radii,
                                        fleet.noise_vars, outputs=plain)
        j_unc = uncertainty_cost(cov_traj)
    j_mob = mobility_cost(fleet, states, guidance, problem.mobility, grid)
    return ForwardState(guidance=guidance, states=states, locations=locs, cov_traj=cov_traj,
                        outputs=outputs if keep_outputs else None,
                        cost_uncertainty=j_unc, cost_mobility=j_mob)


def total_cost(problem, guidance):
    return forward(problem, guidance).cost_total


# --------------------------------------------------------------------------
# adjoint
# --------------------------------------------------------------------------

def _rhs_adjoint(cov, wbar, generator, c, rinv):
    """Transpose of the Riccati right-hand side linearization.

    Returns the covariance cotangent and the cotangent of the output matrix
    columns for a symmetric output cotangent ``wbar``.
    """
    wa = wbar @ generator
    pbar = wa + wa.T
    if c is None:
        return pbar, None
    u = cov @ c
    wu = wbar @ u
    t = (wu * rinv) @ c.T
    pbar -= t + t.T
    cbar = -2.0 * (cov @ wu) * rinv
    return pbar, cbar


def _riccati_step_adjoint(cov, lbar, dt, generator, process_cov, cs, rinv):
    """Reverse-mode sweep through one symmetrized RK4 Riccati step."""
    c0, cm, c1 = cs
    lbar = _sym(lbar)
    k1 = _rhs(cov, generator, process_cov, c0, rinv)
    p2 = cov + 0.5 * dt * k1
    k2 = _rhs(p2, generator, process_cov, cm, rinv)
    p3 = cov + 0.5 * dt * k2
    k3 = _rhs(p3, generator, process_cov, cm, rinv)
    p4 = cov + dt * k3

    pbar = lbar.copy()
    p4bar, c1bar = _rhs_adjoint(p4, dt / 6.0 * lbar, generator, c1, rinv)
    pbar += p4bar
    p3bar, cm_a = _rhs_adjoint(p3, dt / 3.0 * lbar + dt * p4bar, generator, cm, rinv)
    pbar += p3bar
    p2bar, cm_b = _rhs_adjoint(p2, dt / 3.0 * lbar + 0.5 * dt * p3bar, generator, cm, rinv)
    pbar += p2bar
    p1bar, c0bar = _rhs_adjoint(cov, dt / 6.0 * lbar + 0.5 * dt * p2bar, generator, c0, rinv)
    pbar += p1bar
    cmbar = None if cm is None else cm_a + cm_b
    return pbar, (c0bar, cmbar, c1bar)


def _location_cotangent(cbar, jac):
    """Chain output-matrix cotangents ``(d, m_s)`` through ``(d, m_s, 2)`` derivatives."""
    return np.einsum("ds,dsx->sx", cbar, jac)


def _substep_adjoint(k, n, cov, lbar, dt, model, outfn, rinv):
    """Reverse sweep through grid step ``k`` taken as ``n`` RK4 substeps.

    Returns the location cotangents ``(m_s, 2)`` at nodes ``k`` and ``k+1``
    and the covariance cotangent at node ``k``.
    """
    th_nodes, th_mids = substep_fractions(n)
    cn, jn = outfn(k, th_nodes, jacobian=True)
    cm, jm = outfn(k, th_mids, jacobian=True)
    h = dt / n
    subs = [cov]
    for j in range(n - 1):
        subs.append(rk4_step(subs[-1], h, model.generator, model.process_cov,
                             (cn[j], cm[j], cn[j + 1]), rinv))
    x_start = x_end = 0.0
    for j in range(n - 1, -1, -1):
        lbar, (b0, bm, b1) = _riccati_step_adjoint(subs[j], lbar, h, model.generator,
                                                   model.process_cov, (cn[j], cm[j], cn[j + 1]),
                                                   rinv)
        for cbar, jac, th in ((b0, jn[j], th_nodes[j]), (bm, jm[j], th_mids[j]),
                              (b1, jn[j + 1], th_nodes[j + 1])):
            x = _location_cotangent(cbar, jac)
            x_start = x_start + (1.0 - th) * x
            x_end = x_end + th * x
    return x_start, x_end, lbar


def backward_pass(problem, fwd=None, guidance=None):
    """Discrete costates and the cost gradient density at every node.

    Returns ``(costates, gradient)`` where ``costates[k] = dJ/dz_k`` and
    ``gradient[k] = (dJ/dp_k) / w_k`` with trapezoid weights ``w_k``; the
    latter reads ``grad g(p_k) + (beta^T lambda)_k`` in continuous notation.
    """
    if fwd is None or fwd.outputs is None and problem.include_uncertainty:
        fwd = forward(problem, fwd.guidance if fwd is not None else guidance, keep_outputs=True)
    fleet, grid, mob, model = problem.fleet, problem.grid, problem.mobility, problem.model
    kmax = grid.count
    dt = grid.step
    w = grid.trapezoid_weights()
    n = fleet.state_dim
    f, g0, g1, _ = step_matrices(fleet, dt)
    locator = fleet.locator

    zbar = np.zeros((kmax + 1, n))
    zbar[kmax] += mob.terminal_grad(fleet, fwd.states[kmax])
    if mob.hazard:
        hz = mob.hazard_loc_grad(fwd.locations)                 # (K+1, m_s, 2)
        zbar += w[:, None] * (hz.reshape(kmax + 1, -1) @ locator)

    use_cov = problem.include_uncertainty and fleet.n_sensors > 0
    if use_cov:
        (c_nodes, j_nodes), (c_mids, j_mids) = fwd.outputs
        rinv = 1.0 / np.asarray(fleet.noise_vars, dtype=float)
        covs = fwd.cov_traj.matrices
        substeps = fwd.cov_traj.substeps
        outfn = location_outputs(model, fwd.locations, fleet.radii)
        eye = np.eye(model.dim)
        lbar = w[kmax] * eye

    for k in range(kmax - 1, -1, -1):
        if use_cov and substeps[k] == 1:
            cs = (c_nodes[k], c_mids[k], c_nodes[k + 1])
            pbar, (c0bar, cmbar, c1bar) = _riccati_step_adjoint(
                covs[k], lbar, dt, model.generator, model.process_cov, cs, rinv)
            x0 = _location_cotangent(c0bar, j_nodes[k])
            xm = _location_cotangent(cmbar, j_mids[k])
            x1 = _location_cotangent(c1bar, j_nodes[k + 1])
            zbar[k + 1] += (x1 + 0.5 * xm).ravel() @ locator
            zbar[k] += (x0 + 0.5 * xm).ravel() @ locator
            lbar = pbar + w[k] * eye
        elif use_cov:
            xk, xk1, pbar = _substep_adjoint(k, substeps[k], covs[k], lbar, dt, model, outfn,
                                             rinv)
            zbar[k] += xk.ravel() @ locator
            zbar[k + 1] += xk1.ravel() @ locator
            lbar = pbar + w[k] * eye
        zbar[k] += f.T @ zbar[k + 1]
        if not np.all(np.isfinite(zbar[k])):
            raise FloatingPointError(f"non-finite costate at node {k}")

    pbar = w[:, None] * mob.effort_grad(fwd.guidance)
    pbar[:-1] += zbar[1:] @ g0
    pbar[1:] += zbar[1:] @ g1
    return zbar, pbar / w[:, None]


def control_from_costate(costate_term, mobility, fleet=None):
    """Minimizer of ``g(p) + lambda^T beta p`` for quadratic ``g``: ``-gamma^{-1} beta^T lambda``.

    With ``fleet`` given, ``costate_term`` is the state costate ``lambda``;
    without it, ``costate_term`` is already the input-space term
    ``beta^T lambda``.
    """
    lam = np.asarray(costate_term, dtype=float)
    term = lam @ fleet.beta if fleet is not None else lam
    try:
        return -np.linalg.solve(mobility.guidance_penalty, term.T).T
    except np.linalg.LinAlgError as exc:
        raise ValueError("guidance penalty is singular") from exc


def cost_gradient_fd(problem, guidance, eps=1e-5):
    """Central-difference gradient density of :func:`total_cost`, same layout as the adjoint."""
    p = np.array(guidance, dtype=float)
    w = problem.grid.trapezoid_weights()
    out = np.zeros_like(p)
    for k in range(p.shape[0]):
        for i in range(p.shape[1]):
            old = p[k, i]
            p[k, i] = old + eps
            jp = total_cost(problem, p)
            p[k, i] = old - eps
            jm = total_cost(problem, p)
            p[k, i] = old
            out[k, i] = (jp - jm) / (2.0 * eps * w[k])
    return out


# --------------------------------------------------------------------------
# forward-backward sweep
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SolverSettings:
    """Sweep controls.

    ``memory`` is the number of curvature pairs kept to precondition the
    costate update; ``memory=0`` gives the plain relaxed sweep.
    """

    omega: float = 0.5
    tol: float = 1e-6
    max_iter: int = 200
    memory: int = 8
    min_omega: float = 1e-10
    armijo: float = 1e-4

    def __post_init__(self):
        if not 0 < self.omega <= 1:
            raise ValueError("solver.omega must lie in (0, 1]")
        if not self.tol > 0:
            raise ValueError("solver.tol must be positive")
        if self.max_iter < 1:
            raise ValueError("solver.max_iter must be >= 1")
        if self.memory < 0:
            raise ValueError("solver.memory must be >= 0")


def _lipschitz(guidance, dt):
    if len(guidance) < 2:
        return 0.0
    return float(np.max(np.linalg.norm(np.diff(guidance, axis=0), axis=1)) / dt)


def _relative_change(delta, ref):
    num = float(np.max(np.abs(delta))) if delta.size else 0.0
    if num == 0.0:
        return 0.0
    den = float(np.max(np.abs(ref))) if ref.size else 0.0
    return num / den if den > 0 else np.inf


class _CurvatureMemory:
    """Limited-memory inverse-Hessian model in the quadrature-weighted L2 product.

    The initial model is the sweep's own update ``-gamma^{-1} grad`` scaled by
    the latest curvature estimate.
    """

    def __init__(self, size, weights, gamma_inv):
        self.size = size
        self.w = weights[:, None]
        self.gamma_inv = gamma_inv
        self.pairs = []

    def dot(self, a, b):
        return float(np.sum(self.w * a * b))

    def precondition(self, v):
        return v @ self.gamma_inv.T

    def push(self, s, y):
        sy = self.dot(s, y)
        if sy <= 1e-12 * np.sqrt(self.dot(s, s) * self.dot(y, y)):
            return
        self.pairs.append((s, y, 1.0 / sy))
        if len(self.pairs) > self.size:
            self.pairs.pop(0)

    def reset(self):
        self.pairs.clear()

    def direction(self, grad):
        q = grad.copy()
        alphas = []
        for s, y, rho in reversed(self.pairs):
            a = rho * self.dot(s, q)
            q -= a * y
            alphas.append(a)
        r = self.precondition(q)
        if self.pairs:
            s, y, _ = self.pairs[-1]
            r *= self.dot(s, y) / self.dot(y, self.precondition(y))
        for (s, y, rho), a in zip(self.pairs, reversed(alphas)):
            b = rho * self.dot(y, r)
            r += (a - b) * s
        return -r


def solve_fbs(problem, settings=None, initial_guidance=None, clamps=None):
    """Forward-backward sweep for the optimal guidance.

    Each iteration propagates sensors and covariance forward, runs the
    adjoint sweep backward, forms the candidate ``p_hat`` from the
    stationarity condition ``gamma p_hat + beta^T lambda = 0`` and relaxes
    ``p <- p + omega (p_hat - p)``.  A relaxed step that fails to lower the
    cost is retried with half of ``omega``.  With ``settings.memory > 0`` the
    update ``p_hat - p`` is first corrected by the stored curvature pairs
    and the relaxation starts from 1.

    Accepts a :class:`GuidanceProblem` or a scenario exposing ``problem()``.
    """
    if hasattr(problem, "problem"):
        scen = problem
        problem = scen.problem()
        settings = settings or scen.solver
        clamps = clamps or scen.clamps
    settings = settings or SolverSettings()
    grid = problem.grid
    w = grid.trapezoid_weights()
    m = problem.fleet.input_dim
    p = (np.zeros((grid.count + 1, m)) if initial_guidance is None
         else np.array(initial_guidance, dtype=float))
    gamma_inv = np.linalg.inv(problem.mobility.guidance_penalty)
    memory = _CurvatureMemory(settings.memory, w, gamma_inv)

    fwd = forward(problem, p, keep_outputs=True)
    costates, grad = backward_pass(problem, fwd)
    history = [fwd.cost_total]
    converged = False
    iterations = 0
    for it in range(1, settings.max_iter + 1):
        iterations = it
        p_hat = control_from_costate(grad - problem.mobility.effort_grad(p), problem.mobility)
        step = p_hat - p
        omega = settings.omega
        if settings.memory:
            step = memory.direction(grad)
            if memory.dot(step, grad) >= 0:
                memory.reset()
                step = p_hat - p
            else:
                omega = 1.0
        slope = memory.dot(step, grad)
        if not np.any(step) or slope == 0.0:
            converged = True
            break
        accepted = None
        while omega >= settings.min_omega:
            trial = forward(problem, p + omega * step, keep_outputs=True)
            if trial.cost_total <= fwd.cost_total + settings.armijo * omega * min(slope, 0.0):
                accepted = trial
                break
            omega *= 0.5
        if accepted is None:
            log.info("sweep stalled at iteration %d", it)
            break
        change = _relative_change(accepted.guidance - p, accepted.guidance)
        new_costates, new_grad = backward_pass(problem, accepted)
        memory.push(accepted.guidance - p, new_grad - grad)
        p, fwd, costates, grad = accepted.guidance, accepted, new_costates, new_grad
        history.append(fwd.cost_total)
        log.debug("iter %d cost %.12g omega %.3g change %.3g", it, fwd.cost_total, omega, change)
        if change <= settings.tol:
            converged = True
            break

    clamps = clamps or {}
    return GuidanceSolution(
        guidance=p, states=fwd.states, costates=costates, cov_traj=fwd.cov_traj,
        cost_total=fwd.cost_total, cost_uncertainty=fwd.cost_uncertainty,
        cost_mobility=fwd.cost_mobility, iterations=iterations, converged=converged,
        guidance_sup_norm=float(np.max(np.linalg.norm(p, axis=1))),
        guidance_lipschitz=_lipschitz(p, grid.step), gradient=grad,
        cost_history=tuple(history),
        p_max=clamps.get("p_max"), a_max=clamps.get("a_max"))


def evaluate_policy(problem, guidance):
    """Cost breakdown of a fixed guidance signal (array of nodes or callable)."""
    grid = problem.grid
    if callable(guidance):
        nodes = np.array([guidance(t) for t in grid.times])
        states = propagate_sensors(problem.fleet, guidance, grid)
    else:
        nodes = np.asarray(guidance, dtype=float)
        states = propagate_sensors(problem.fleet, nodes, grid)
    locs = problem.fleet.locations(states)
    cov_traj = propagate_covariance(problem.model, locs, grid, problem.fleet.radii,
                                    problem.fleet.noise_vars)
    j_unc = uncertainty_cost(cov_traj) if problem.include_uncertainty else 0.0
    j_mob = mobility_cost(problem.fleet, states, nodes, problem.mobility, grid)
    return GuidanceSolution(
        guidance=nodes, states=states, costates=np.zeros_like(states), cov_traj=cov_traj,
        cost_total=j_unc + j_mob, cost_uncertainty=j_unc, cost_mobility=j_mob,
        iterations=0, converged=True,
        guidance_sup_norm=float(np.max(np.linalg.norm(nodes, axis=1))),
        guidance_lipschitz=_lipschitz(nodes, grid.step))
