"""Error-covariance propagation for the Galerkin Kalman-Bucy filter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    horizon: float = 2.0
    step: float = 0.01

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("grid.horizon must be positive")
        if not self.step > 0:
            raise ValueError("grid.step must be positive")
        ratio = self.horizon / self.step
        if abs(ratio - round(ratio)) > 1e-12 * max(1.0, ratio) or round(ratio) < 1:
            raise ValueError("grid.step must divide grid.horizon")

    @property
    def count(self):
        return int(round(self.horizon / self.step))

    @property
    def times(self):
        return np.arange(self.count + 1) * self.step

    def trapezoid_weights(self):
        w = np.full(self.count + 1, self.step)
        w[0] = w[-1] = 0.5 * self.step
        return w


@dataclass(frozen=True, eq=False)
class CovarianceTrajectory:
    grid: TimeGrid
    matrices: np.ndarray  # (K+1, d, d)
    substeps: np.ndarray | None = None  # RK4 substeps used in each grid step

    def traces(self):
        return np.trace(self.matrices, axis1=1, axis2=2)

    def at(self, k):
        return self.matrices[k]


def _sym(m):
    return 0.5 * (m + m.T)


def measurement_matrix(output_vectors, noise_vars):
    """Stack output vectors as columns and return ``(C, 1/sigma^2)``."""
    if len(output_vectors) == 0:
        return None, None
    c = np.column_stack(output_vectors)
    rinv = 1.0 / np.asarray(noise_vars, dtype=float)
    if np.any(~np.isfinite(rinv)) or np.any(rinv <= 0):
        raise ValueError("noise variances must be positive")
    return c, rinv


def _rhs(cov, generator, process_cov, c, rinv):
    ap = generator @ cov
    out = ap + ap.T + process_cov
    if c is not None:
        u = cov @ c
        out = out - (u * rinv) @ u.T
    return _sym(out)


def riccati_rhs(cov, generator, process_cov, output_vectors, noise_vars):
    """``A P + P A^T + Q - P (sum_i c_i c_i^T / sigma_i^2) P``, symmetrized."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    generator = np.atleast_2d(np.asarray(generator, dtype=float))
    process_cov = np.atleast_2d(np.asarray(process_cov, dtype=float))
    d = cov.shape[0]
    if generator.shape != (d, d) or process_cov.shape != (d, d):
        raise ValueError("dimension mismatch between covariance, generator and process noise")
    vecs = [np.atleast_1d(np.asarray(v, dtype=float)) for v in output_vectors]
    if any(v.shape != (d,) for v in vecs):
        raise ValueError("output vector dimension mismatch")
    if len(vecs) != len(noise_vars):
        raise ValueError("one noise variance per output vector required")
    c, rinv = measurement_matrix(vecs, noise_vars)
    return _rhs(cov, generator, process_cov, c, rinv)


def rk4_step(cov, dt, generator, process_cov, cs, rinv):
    """One RK4 step with stage measurement matrices ``cs = (c0, c_mid, c1)``."""
    c0, cm, c1 = cs
    k1 = _rhs(cov, generator, process_cov, c0, rinv)
    k2 = _rhs(cov + 0.5 * dt * k1, generator, process_cov, cm, rinv)
    k3 = _rhs(cov + 0.5 * dt * k2, generator, process_cov, cm, rinv)
    k4 = _rhs(cov + dt * k3, generator, process_cov, c1, rinv)
    return _sym(cov + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def stage_outputs(model, locations, radii, jacobian=False):
    """Output matrices at grid nodes and at step midpoints.

    Node matrices have shape ``(K+1, d, m_s)`` and midpoint matrices
    ``(K, d, m_s)``; midpoint locations interpolate the node locations
    linearly.  With ``jacobian`` the location derivatives
    ``(..., d, m_s, 2)`` are returned as well.
    """
    from .spectral import output_vectors

    locations = np.asarray(locations, dtype=float)
    mids = 0.5 * (locations[:-1] + locations[1:])
    res = []
    for locs in (locations, mids):
        out = output_vectors(locs, radii, model.order, jacobian=jacobian)
        if jacobian:
            vals, jac = out
            res.append((np.swapaxes(vals, -1, -2), np.swapaxes(jac, -2, -3)))
        else:
            res.append(np.swapaxes(out, -1, -2))
    return tuple(res)


# substeps keep dt * rho below this, well inside the RK4 stability limit of about 2.79
# so that nearly singular covariances stay PSD to rounding level
STIFFNESS_BOUND = 0.5


def substep_count(cov, c, rinv, dt, bound=STIFFNESS_BOUND):
    """Number of equal RK4 substeps for one grid step.

    ``rho = 2 sum_i c_i^T P c_i / sigma_i^2`` bounds the spectral radius of
    the linearized measurement term, which is the stiff part of the
    equation when the footprint variance is large compared with the noise.
    """
    if c is None:
        return 1
    rho = 2.0 * float(np.einsum("ds,ds,s->", c, cov @ c, rinv))
    if not np.isfinite(rho):
        return 1
    return max(1, int(np.ceil(dt * rho / bound)))


def piecewise_outputs(c_nodes, c_mids):
    """Output matrices at step fractions ``theta``, linear through node, midpoint, node."""
    def fn(k, thetas, jacobian=False):
        if jacobian:
            raise ValueError("no location derivatives for tabulated outputs")
        c0, cm, c1 = c_nodes[k], c_mids[k], c_nodes[k + 1]
        return np.array([c0 + 2 * t * (cm - c0) if t <= 0.5 else cm + (2 * t - 1) * (c1 - cm)
                         for t in thetas])
    return fn


def location_outputs(model, locations, radii):
    """Output matrices at step fractions ``theta`` of linearly interpolated locations.

    ``fn(k, thetas)`` returns ``(T, d, m_s)``; with ``jacobian=True`` also the
    location derivatives ``(T, d, m_s, 2)``.
    """
    from .spectral import output_vectors

    locations = np.asarray(locations, dtype=float)

    def fn(k, thetas, jacobian=False):
        th = np.asarray(thetas, dtype=float)[:, None, None]
        locs = (1.0 - th) * locations[k] + th * locations[k + 1]
        out = output_vectors(locs, radii, model.order, jacobian=jacobian)
        if jacobian:
            return np.swapaxes(out[0], -1, -2), np.swapaxes(out[1], -2, -3)
        return np.swapaxes(out, -1, -2)
    return fn


def substep_fractions(n):
    """Step fractions of substep nodes ``(n+1,)`` and midpoints ``(n,)``."""
    return np.arange(n + 1) / n, (np.arange(n) + 0.5) / n


def integrate_riccati(init_cov, generator, process_cov, grid, c_nodes=None, c_mids=None,
                      noise_vars=(), output_fn=None):
    """RK4 on the Riccati equation with given stage output matrices.

    ``c_nodes`` ``(K+1, d, m_s)`` and ``c_mids`` ``(K, d, m_s)`` hold the
    output vectors as columns; leave them unset for an unobserved field.
    Grid steps where the measurement term is stiff (see
    :func:`substep_count`) are split into equal substeps whose output
    matrices come from ``output_fn(k, thetas)``; by default these are
    interpolated from the tabulated stages.  Each (sub)step is followed by
    symmetrization.
    """
    cov = np.array(np.atleast_2d(init_cov), dtype=float)
    generator = np.atleast_2d(np.asarray(generator, dtype=float))
    process_cov = np.atleast_2d(np.asarray(process_cov, dtype=float))
    observed = c_nodes is not None and np.shape(c_nodes)[-1] > 0
    rinv = 1.0 / np.asarray(noise_vars, dtype=float) if observed else None
    if observed and output_fn is None:
        output_fn = piecewise_outputs(c_nodes, c_mids)
    out = np.empty((grid.count + 1,) + cov.shape)
    out[0] = cov
    substeps = np.ones(grid.count, dtype=int)
    with np.errstate(over="ignore", invalid="ignore"):
        return _integrate(cov, generator, process_cov, grid, c_nodes, c_mids, rinv, output_fn,
                          observed, out, substeps)


def _integrate(cov, generator, process_cov, grid, c_nodes, c_mids, rinv, output_fn, observed,
               out, substeps):
    dt = grid.step
    for k in range(grid.count):
        n = substep_count(cov, c_nodes[k], rinv, dt) if observed else 1
        if n == 1:
            cs = (c_nodes[k], c_mids[k], c_nodes[k + 1]) if observed else (None, None, None)
            cov = rk4_step(cov, dt, generator, process_cov, cs, rinv)
        else:
            th_nodes, th_mids = substep_fractions(n)
            cn, cm = output_fn(k, th_nodes), output_fn(k, th_mids)
            for j in range(n):
                cov = rk4_step(cov, dt / n, generator, process_cov, (cn[j], cm[j], cn[j + 1]),
                               rinv)
        if not np.all(np.isfinite(cov)):
            raise FloatingPointError(f"non-finite covariance at step {k + 1}")
        out[k + 1] = cov
        substeps[k] = n
    return CovarianceTrajectory(grid=grid, matrices=out, substeps=substeps)


def propagate_covariance(model, locations, grid, radii=(), noise_vars=(), init_cov=None,
                         outputs=None):
    """Covariance trajectory of the Galerkin filter along sensor node locations.

    Parameters
    ----------
    model : SpectralModel
    locations : array (K+1, m_s, 2)
        Sensor positions at grid nodes; ``m_s = 0`` means no sensors.  Stage
        locations between nodes use linear interpolation.
    grid : TimeGrid
    radii, noise_vars : sequences of length m_s
    outputs : optional precomputed ``stage_outputs(model, locations, radii)``
    """
    locations = np.asarray(locations, dtype=float)
    if locations.ndim != 3 or locations.shape[0] != grid.count + 1:
        raise ValueError("locations must have shape (K+1, m_s, 2)")
    n_sensors = locations.shape[1]
    c_nodes = c_mids = fn = None
    if n_sensors:
        if len(noise_vars) != n_sensors or len(radii) != n_sensors:
            raise ValueError("one radius and noise variance per sensor required")
        c_nodes, c_mids = outputs if outputs is not None else stage_outputs(model, locations, radii)
        fn = location_outputs(model, locations, radii)
    return integrate_riccati(model.init_cov if init_cov is None else init_cov,
                             model.generator, model.process_cov, grid, c_nodes, c_mids,
                             noise_vars, output_fn=fn)


def uncertainty_cost(cov_traj):
    """Trapezoidal integral of the covariance trace over the grid."""
    return float(cov_traj.grid.trapezoid_weights() @ cov_traj.traces())


def scalar_riccati_closed_form(a_coef, q, s, pi0, t):
    """Solution of ``pi' = 2 a pi + q - s pi^2`` with constant coefficients.

    ``pi = x / y`` where ``(x, y)`` follows the linear flow of
    ``M = [[a, q], [s, -a]]`` from ``(pi0, 1)``.  Since ``M^2 = (a^2 + s q) I``,
    dividing by ``cosh(r t)`` leaves ``T = tanh(r t) / r`` (``tan`` when the
    discriminant is negative), which stays smooth as ``r -> 0``.
    """
    if s < 0:
        raise ValueError("s must be nonnegative")
    disc = a_coef * a_coef + s * q
    if disc > 0:
        r = np.sqrt(disc)
        T = np.tanh(r * t) / r
    elif disc < 0:
        w = np.sqrt(-disc)
        T = np.tan(w * t) / w
    else:
        T = t
    return (pi0 * (1.0 + a_coef * T) + q * T) / (1.0 - a_coef * T + s * pi0 * T)
