"""Sensor platform dynamics, fleet assembly and the mobility cost."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class SensorSpec:
    """One mobile sensor: linear platform dynamics plus measurement quality.

    ``position_rows`` selects the two state entries that hold the planar
    location (the ``M_0`` extractor).  Defaults give a single integrator.
    """

    init_state: tuple[float, ...]
    footprint_radius: float = 0.05
    noise_var: float = 0.2
    guidance_penalty: float = 0.5
    dyn_matrix: np.ndarray | None = None
    input_matrix: np.ndarray | None = None
    position_rows: tuple[int, int] = (0, 1)
    drift_in_flow: bool = True

    def __post_init__(self):
        z0 = np.asarray(self.init_state, dtype=float).ravel()
        n = z0.size
        if n < 2:
            raise ValueError("sensor state must contain a 2D location")
        alpha = np.zeros((n, n)) if self.dyn_matrix is None else np.asarray(self.dyn_matrix, float)
        beta = np.eye(n) if self.input_matrix is None else np.asarray(self.input_matrix, float)
        if beta.ndim == 1:
            beta = beta[:, None]
        if alpha.shape != (n, n) or beta.shape[0] != n:
            raise ValueError("sensor dynamics do not match the state dimension")
        if not self.noise_var > 0:
            raise ValueError("noise_var must be positive")
        if not self.footprint_radius > 0:
            raise ValueError("footprint_radius must be positive")
        if not self.guidance_penalty > 0:
            raise ValueError("guidance_penalty must be positive")
        if not is_controllable(alpha, beta):
            raise ValueError("sensor dynamics are not controllable")
        object.__setattr__(self, "init_state", tuple(z0.tolist()))
        object.__setattr__(self, "dyn_matrix", alpha)
        object.__setattr__(self, "input_matrix", beta)

    @property
    def state_dim(self):
        return len(self.init_state)

    @property
    def input_dim(self):
        return self.input_matrix.shape[1]

    def is_single_integrator(self):
        return (self.state_dim == 2 and self.input_dim == 2
                and not self.dyn_matrix.any()
                and np.array_equal(self.input_matrix, np.eye(2))
                and tuple(self.position_rows) == (0, 1))


def single_integrator(x, y, **kw):
    return SensorSpec(init_state=(x, y), **kw)


def is_controllable(alpha, beta):
    n = alpha.shape[0]
    blocks = [beta]
    for _ in range(n - 1):
        blocks.append(alpha @ blocks[-1])
    return np.linalg.matrix_rank(np.hstack(blocks)) == n


@dataclass(frozen=True, eq=False)
class FleetModel:
    sensors: tuple[SensorSpec, ...]
    alpha: np.ndarray
    beta: np.ndarray
    locator: np.ndarray       # M: (2 m_s, n)
    drift: np.ndarray         # (n,)
    init_state: np.ndarray    # (n,)

    @property
    def n_sensors(self):
        return len(self.sensors)

    @property
    def state_dim(self):
        return self.alpha.shape[0]

    @property
    def input_dim(self):
        return self.beta.shape[1]

    def locations(self, states):
        """Planar sensor locations, shape ``(..., m_s, 2)``."""
        states = np.asarray(states, dtype=float)
        flat = states @ self.locator.T
        return flat.reshape(states.shape[:-1] + (self.n_sensors, 2))

    @property
    def radii(self):
        return [s.footprint_radius for s in self.sensors]

    @property
    def noise_vars(self):
        return [s.noise_var for s in self.sensors]

    def penalty_matrix(self):
        """Diagonal guidance penalty built from per-sensor values."""
        return np.diag(np.concatenate(
            [np.full(s.input_dim, s.guidance_penalty) for s in self.sensors]))


def _block_diag(blocks):
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


def assemble_fleet(specs, flow=(0.0, 0.0)):
    """Concatenate sensors into one linear system ``z' = alpha z + beta p + drift``."""
    specs = tuple(specs)
    if not specs:
        raise ValueError("fleet needs at least one sensor")
    alpha = _block_diag([s.dyn_matrix for s in specs])
    beta = _block_diag([s.input_matrix for s in specs])
    n = alpha.shape[0]
    locator = np.zeros((2 * len(specs), n))
    drift = np.zeros(n)
    offset = 0
    for idx, s in enumerate(specs):
        r0, r1 = s.position_rows
        if not (0 <= r0 < s.state_dim and 0 <= r1 < s.state_dim and r0 != r1):
            raise ValueError("position_rows out of range")
        locator[2 * idx, offset + r0] = 1.0
        locator[2 * idx + 1, offset + r1] = 1.0
        if s.drift_in_flow:
            drift[offset + r0] += flow[0]
            drift[offset + r1] += flow[1]
        offset += s.state_dim
    init = np.concatenate([np.asarray(s.init_state) for s in specs])
    return FleetModel(sensors=specs, alpha=alpha, beta=beta, locator=locator,
                      drift=drift, init_state=init)


# --------------------------------------------------------------------------
# propagation
# --------------------------------------------------------------------------

def _rk4_affine(alpha, beta, drift, z, p0, pm, p1, h):
    f = lambda zz, pp: alpha @ zz + beta @ pp + drift
    k1 = f(z, p0)
    k2 = f(z + 0.5 * h * k1, pm)
    k3 = f(z + 0.5 * h * k2, pm)
    k4 = f(z + h * k3, p1)
    return z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def propagate_sensors(fleet, guidance, grid, init_state=None):
    """RK4 integration of the fleet along a guidance signal.

    ``guidance`` is either an array ``(K+1, m)`` of node values, linearly
    interpolated at the stage midpoints, or a callable ``p(t)`` sampled
    exactly at the stage times.
    """
    z = np.array(fleet.init_state if init_state is None else init_state, dtype=float)
    out = np.empty((grid.count + 1, z.size))
    out[0] = z
    if not callable(guidance):
        guidance = np.asarray(guidance, dtype=float)
        if guidance.shape != (grid.count + 1, fleet.input_dim):
            raise ValueError("guidance must be given at every grid node")
    with np.errstate(over="ignore", invalid="ignore"):
        _integrate_sensors(fleet, guidance, grid, z, out)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite sensor state")
    return out


def _integrate_sensors(fleet, guidance, grid, z, out):
    h = grid.step
    if callable(guidance):
        t = grid.times
        p_next = np.asarray(guidance(t[0]), dtype=float)
        for k in range(grid.count):
            p0 = p_next
            pm = np.asarray(guidance(t[k] + 0.5 * h), dtype=float)
            p_next = np.asarray(guidance(t[k + 1]), dtype=float)
            z = _rk4_affine(fleet.alpha, fleet.beta, fleet.drift, z, p0, pm, p_next, h)
            out[k + 1] = z
    else:
        p = guidance
        for k in range(grid.count):
            z = _rk4_affine(fleet.alpha, fleet.beta, fleet.drift, z,
                            p[k], 0.5 * (p[k] + p[k + 1]), p[k + 1], h)
            out[k + 1] = z


def step_matrices(fleet, h):
    """Affine RK4 step ``z+ = F z + G0 p_k + G1 p_{k+1} + e`` for node-interpolated guidance."""
    n = fleet.state_dim
    a, b = fleet.alpha, fleet.beta
    eye = np.eye(n)
    a2 = a @ a
    a3 = a2 @ a
    a4 = a3 @ a
    f = eye + h * a + h ** 2 / 2 * a2 + h ** 3 / 6 * a3 + h ** 4 / 24 * a4
    # stage weights on p0, pm, p1 follow from expanding the four stages
    g_p0 = h / 6 * (eye + h * a + h ** 2 / 2 * a2 + h ** 3 / 4 * a3) @ b
    g_pm = h / 6 * (4 * eye + 2 * h * a + h ** 2 / 2 * a2) @ b
    g_p1 = h / 6 * b
    g0 = g_p0 + 0.5 * g_pm
    g1 = g_p1 + 0.5 * g_pm
    e = h / 6 * (6 * eye + 3 * h * a + h ** 2 * a2 + h ** 3 / 4 * a3) @ fleet.drift
    return f, g0, g1, e


# --------------------------------------------------------------------------
# mobility cost
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HazardBump:
    amplitude: float
    center: tuple[float, float]
    width: float

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("hazard amplitude must be nonnegative")
        if not self.width > 0:
            raise ValueError("hazard width must be positive")


@dataclass(frozen=True, eq=False)
class MobilitySpec:
    """Mobility cost: quadratic guidance effort plus optional hazard and terminal terms.

    ``g(p) = p^T gamma p / 2``; ``h`` is a sum of Gaussian bumps evaluated at
    each sensor location; ``h_f = weight * |M z(t_f) - x_f|^2``.
    """

    guidance_penalty: np.ndarray
    hazard: tuple[HazardBump, ...] = ()
    terminal_target: np.ndarray | None = None
    terminal_weight: float = 0.0

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.guidance_penalty, dtype=float))
        if g.shape[0] != g.shape[1] or not np.allclose(g, g.T):
            raise ValueError("guidance penalty must be a symmetric matrix")
        if np.linalg.eigvalsh(g).min() <= 0:
            raise ValueError("guidance penalty must be positive definite")
        if self.terminal_weight < 0:
            raise ValueError("terminal weight must be nonnegative")
        object.__setattr__(self, "guidance_penalty", g)
        object.__setattr__(self, "hazard", tuple(self.hazard))
        if self.terminal_target is not None:
            object.__setattr__(self, "terminal_target",
                               np.asarray(self.terminal_target, dtype=float).ravel())

    @classmethod
    def for_fleet(cls, fleet, **kw):
        return cls(guidance_penalty=fleet.penalty_matrix(), **kw)

    def effort(self, p):
        p = np.asarray(p, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", p, self.guidance_penalty, p)

    def effort_grad(self, p):
        return np.asarray(p, dtype=float) @ self.guidance_penalty

    def hazard_value(self, locs):
        """``h`` summed over sensors; ``locs`` has shape ``(..., m_s, 2)``."""
        locs = np.asarray(locs, dtype=float)
        total = np.zeros(locs.shape[:-2])
        for b in self.hazard:
            d2 = np.sum((locs - np.asarray(b.center)) ** 2, axis=-1)
            total = total + b.amplitude * np.exp(-d2 / (2 * b.width ** 2)).sum(axis=-1)
        return total

    def hazard_loc_grad(self, locs):
        locs = np.asarray(locs, dtype=float)
        out = np.zeros_like(locs)
        for b in self.hazard:
            diff = locs - np.asarray(b.center)
            val = b.amplitude * np.exp(-np.sum(diff ** 2, axis=-1) / (2 * b.width ** 2))
            out -= val[..., None] * diff / b.width ** 2
        return out

    def terminal_value(self, fleet, z_final):
        if self.terminal_target is None or self.terminal_weight == 0:
            return 0.0
        r = fleet.locator @ z_final - self.terminal_target
        return float(self.terminal_weight * r @ r)

    def terminal_grad(self, fleet, z_final):
        if self.terminal_target is None or self.terminal_weight == 0:
            return np.zeros_like(z_final)
        r = fleet.locator @ z_final - self.terminal_target
        return 2.0 * self.terminal_weight * fleet.locator.T @ r


def mobility_cost(fleet, states, guidance, spec, grid):
    """Trapezoidal integral of ``h + g`` plus the terminal penalty."""
    w = grid.trapezoid_weights()
    run = spec.effort(guidance)
    if spec.hazard:
        run = run + spec.hazard_value(fleet.locations(states))
    return float(w @ run) + spec.terminal_value(fleet, states[-1])
