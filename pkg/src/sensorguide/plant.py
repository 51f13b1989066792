"""Truth simulation, noisy measurements and the discretized Kalman-Bucy filter."""

from __future__ import annotations

import numpy as np

from .spectral import output_vectors

CHOLESKY_JITTER = 1e-12


def trial_rng(master_seed, trial):
    """Independent stream for one trial, fixed by ``(master_seed, trial)`` alone."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(trial),))
    return np.random.Generator(np.random.Philox(ss))


def covariance_factor(cov):
    """Lower factor ``L`` with ``L L^T = cov``; zero matrices give a zero factor."""
    cov = np.asarray(cov, dtype=float)
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    jitter = CHOLESKY_JITTER * max(1.0, float(np.max(np.diag(cov))))
    try:
        return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is not positive semidefinite") from exc


def sample_gaussian_field(cov, rng, factor=None):
    """Draw coefficients ``L eta`` with ``L L^T = cov`` and standard normal ``eta``."""
    lower = covariance_factor(cov) if factor is None else factor
    return lower @ rng.standard_normal(lower.shape[0])


def simulate_truth(model, grid, rng, init_sample=True, process_noise=True,
                   init_factor=None, process_factor=None):
    """Euler-Maruyama trajectory of the Galerkin field, shape ``(K+1, d)``."""
    d = model.dim
    dt = grid.step
    z = model.mean_coeffs().copy()
    if init_sample:
        z = z + sample_gaussian_field(model.init_cov, rng, init_factor)
    lq = None
    if process_noise:
        lq = covariance_factor(model.process_cov) if process_factor is None else process_factor
    a = model.generator
    out = np.empty((grid.count + 1, d))
    out[0] = z
    sdt = np.sqrt(dt)
    for k in range(grid.count):
        z = z + dt * (a @ z)
        if lq is not None:
            z = z + sdt * (lq @ rng.standard_normal(d))
        out[k + 1] = z
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite truth state")
    return out


def measure(truth, output_vectors, noise_vars, rng, sample_interval=None):
    """Sensor readings ``y_i = c_i^T z + noise_i``.

    Without ``sample_interval`` the noise has variance ``sigma_i^2``.  Given a
    sampling interval ``dt`` the noise is the average of continuous white
    noise over that interval, with variance ``sigma_i^2 / dt``.
    """
    truth = np.asarray(truth, dtype=float)
    c = np.column_stack(output_vectors) if len(output_vectors) else np.zeros((truth.size, 0))
    var = np.asarray(noise_vars, dtype=float)
    if sample_interval is not None:
        var = var / sample_interval
    clean = c.T @ truth
    return clean + np.sqrt(var) * rng.standard_normal(clean.size)


def measurement_matrices(model, locations, radii):
    """Output matrices ``C_k`` (d x m_s) at every grid node."""
    locations = np.asarray(locations, dtype=float)
    return np.swapaxes(output_vectors(locations, radii, model.order), -1, -2)


def run_filter(model, grid, cmats, measurements, noise_vars, cov_traj):
    """Euler integration of the Galerkin Kalman-Bucy estimate.

    ``cmats`` are node output matrices ``(K+1, d, m_s)`` and
    ``measurements`` the matching readings ``(K+1, m_s)``.
    """
    if cov_traj.grid != grid or len(measurements) != grid.count + 1:
        raise ValueError("covariance trajectory and measurements must share the grid")
    rinv = 1.0 / np.asarray(noise_vars, dtype=float)
    a = model.generator
    dt = grid.step
    zhat = model.mean_coeffs().copy()
    out = np.empty((grid.count + 1, model.dim))
    out[0] = zhat
    covs = cov_traj.matrices
    for k in range(grid.count):
        c = cmats[k]
        innov = measurements[k] - c.T @ zhat
        zhat = zhat + dt * (a @ zhat + covs[k] @ (c @ (rinv * innov)))
        out[k + 1] = zhat
    return out


def pointwise_variance(error_samples, grid_points):
    """Unbiased sample variance of reconstructed error fields at each grid point.

    ``grid_points`` is a 1D array of G coordinates; the variance is returned
    on the G x G tensor grid with ``x`` varying along rows.
    """
    samples = np.atleast_2d(np.asarray(error_samples, dtype=float))
    if samples.shape[0] < 2:
        raise ValueError("need at least two samples")
    order = int(round(np.sqrt(samples.shape[1])))
    g = np.asarray(grid_points, dtype=float)
    modes = np.arange(1, order + 1)
    sx = np.sqrt(2.0) * np.sin(np.pi * np.outer(g, modes))       # (G, N)
    coeff = samples.reshape(-1, order, order)                    # (n, i, j)
    fields = np.einsum("xi,nij,yj->nxy", sx, coeff, sx)
    return fields.var(axis=0, ddof=1)


def uniform_grid(size=144):
    """Cell-centred sampling points on [0, 1]."""
    return (np.arange(size) + 0.5) / size
