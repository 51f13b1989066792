"""Galerkin discretization on the Dirichlet sine eigenbasis of the unit square.

Basis functions are ``phi_ij(x, y) = 2 sin(pi i x) sin(pi j y)`` with the
single index ``k = (i - 1) N + j``.  Every 2D quantity used here factorizes
into 1D pieces on the orthonormal sines ``s_i(u) = sqrt(2) sin(pi i u)``, so
matrices are assembled as Kronecker products with the x-mode as the slow
index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian-type covariance kernel on the unit square.

    ``K(x1, x2) = amplitude * exp(-|x1 - x2|^2 / pair_length_sq
    - |x1 - c|^2 / center_length_sq - |x2 - c|^2 / center_length_sq)``
    where ``c`` is the field's uncertainty peak.  Leaving
    ``center_length_sq`` unset gives a homogeneous kernel.
    """

    amplitude: float
    pair_length_sq: float
    center_length_sq: float | None = None

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("kernel amplitude must be nonnegative")
        if self.pair_length_sq <= 0:
            raise ValueError("pair_length_sq must be positive")
        if self.center_length_sq is not None and self.center_length_sq <= 0:
            raise ValueError("center_length_sq must be positive")

    def evaluate(self, x1, x2, center=(0.5, 0.5)):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        expo = -np.sum((x1 - x2) ** 2, axis=-1) / self.pair_length_sq
        if self.center_length_sq is not None:
            c = np.asarray(center, dtype=float)
            expo = expo - (np.sum((x1 - c) ** 2, axis=-1)
                           + np.sum((x2 - c) ** 2, axis=-1)) / self.center_length_sq
        return self.amplitude * np.exp(expo)

    def axis_factor(self, u1, u2, center_coord):
        """One-axis factor of the kernel (amplitude excluded)."""
        expo = -((u1 - u2) ** 2) / self.pair_length_sq
        if self.center_length_sq is not None:
            expo = expo - ((u1 - center_coord) ** 2
                           + (u2 - center_coord) ** 2) / self.center_length_sq
        return np.exp(expo)


def init_kernel_default():
    return KernelSpec(amplitude=9.0, pair_length_sq=200.0, center_length_sq=10.0)


def process_kernel_default():
    return KernelSpec(amplitude=1.0, pair_length_sq=2000.0)


@dataclass(frozen=True)
class FieldSpec:
    """Physics of the diffusion-advection field and its noise statistics."""

    diffusion_coeff: float = 0.01
    flow: tuple[float, float] = (0.1, -0.1)
    init_kernel: KernelSpec = field(default_factory=init_kernel_default)
    process_kernel: KernelSpec = field(default_factory=process_kernel_default)
    uncertainty_peak: tuple[float, float] = (0.75, 0.25)
    kernel_scale: float = 1.0
    initial_mean_coeffs: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.diffusion_coeff > 0:
            raise ValueError("diffusion_coeff must be positive")
        if not self.kernel_scale > 0:
            raise ValueError("kernel_scale must be positive")
        x0 = self.uncertainty_peak
        if not (0.0 < x0[0] < 1.0 and 0.0 < x0[1] < 1.0):
            raise ValueError("uncertainty_peak must lie inside the open unit square")
        object.__setattr__(self, "flow", tuple(float(v) for v in self.flow))
        object.__setattr__(self, "uncertainty_peak", tuple(float(v) for v in x0))

    def mean_coeffs(self, order):
        """Initial mean coefficients padded/truncated to ``order**2`` modes."""
        out = np.zeros(order * order)
        if self.initial_mean_coeffs is not None:
            vals = np.asarray(self.initial_mean_coeffs, dtype=float)
            n = min(vals.size, out.size)
            out[:n] = vals[:n]
        return out


# --------------------------------------------------------------------------
# indexing and basis evaluation
# --------------------------------------------------------------------------

def mode_index(order, i, j):
    """Single index ``k = (i - 1) N + j`` for 1-based mode numbers."""
    if not (1 <= i <= order and 1 <= j <= order):
        raise IndexError(f"mode ({i}, {j}) out of range for order {order}")
    return (i - 1) * order + j


def mode_pair(order, k):
    """Inverse of :func:`mode_index`."""
    if not 1 <= k <= order * order:
        raise IndexError(f"index {k} out of range for order {order}")
    i, j = divmod(k - 1, order)
    return i + 1, j + 1


def mode_table(order):
    """Arrays ``(i, j)`` of 1-based mode numbers in single-index order."""
    i, j = np.divmod(np.arange(order * order), order)
    return i + 1, j + 1


def basis_eval(i, j, point):
    x, y = point[0], point[1]
    return 2.0 * np.sin(np.pi * i * x) * np.sin(np.pi * j * y)


def basis_matrix(order, points):
    """Values of all ``order**2`` basis functions at ``points`` (P x 2)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    modes = np.arange(1, order + 1)
    sx = SQRT2 * np.sin(np.pi * np.outer(pts[:, 0], modes))
    sy = SQRT2 * np.sin(np.pi * np.outer(pts[:, 1], modes))
    return (sx[:, :, None] * sy[:, None, :]).reshape(len(pts), order * order)


def reconstruct_field(coeffs, points):
    """Evaluate ``sum_k coeffs_k phi_k`` at each of ``points``."""
    coeffs = np.asarray(coeffs, dtype=float)
    order = int(round(np.sqrt(coeffs.shape[-1])))
    return basis_matrix(order, points) @ coeffs.T


# --------------------------------------------------------------------------
# generator
# --------------------------------------------------------------------------

def derivative_coupling(order):
    """1D matrix ``D[i, l] = <s_i, s_l'>``; equals ``4 i l / (i^2 - l^2)`` for odd ``i + l``."""
    m = np.arange(1, order + 1, dtype=float)
    i = m[:, None]
    l = m[None, :]
    odd = ((i + l) % 2) == 1
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(odd, 4.0 * i * l / (i * i - l * l), 0.0)
    return d


def build_generator(order, field_spec):
    """Galerkin matrix of ``a Laplacian - v . grad`` on the first ``order**2`` modes."""
    a = field_spec.diffusion_coeff
    vx, vy = field_spec.flow
    m2 = np.arange(1, order + 1, dtype=float) ** 2
    eye = np.eye(order)
    lap = np.kron(np.diag(m2), eye) + np.kron(eye, np.diag(m2))
    d = derivative_coupling(order)
    return -a * np.pi ** 2 * lap - vx * np.kron(d, eye) - vy * np.kron(eye, d)


# --------------------------------------------------------------------------
# covariance projection
# --------------------------------------------------------------------------

@lru_cache(maxsize=16)
def _gauss_legendre_unit(npts):
    nodes, weights = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def _axis_projection(kernel, center_coord, order, npts):
    u, w = _gauss_legendre_unit(npts)
    s = SQRT2 * np.sin(np.pi * np.outer(np.arange(1, order + 1), u)) * w
    kmat = kernel.axis_factor(u[:, None], u[None, :], center_coord)
    return s @ kmat @ s.T


def _project(kernel, scale, order, center, npts):
    mx = _axis_projection(kernel, center[0], order, npts)
    my = _axis_projection(kernel, center[1], order, npts)
    q = scale * kernel.amplitude * np.kron(mx, my)
    return 0.5 * (q + q.T)


def project_covariance_kernel(kernel, scale, order, center=(0.5, 0.5), npts=None,
                              rtol=1e-6):
    """Project a covariance kernel onto the basis: ``scale * <phi_k, K phi_l>``.

    The 4D integral is a tensor Gauss-Legendre rule; since the kernel is a
    product of per-axis Gaussians the rule factorizes exactly into two 1D
    double integrals.  The result is recomputed at twice the resolution and
    a relative difference above ``rtol`` raises ``ArithmeticError``.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    if npts is None:
        npts = max(32, 4 * order)
    q = _project(kernel, scale, order, center, npts)
    q2 = _project(kernel, scale, order, center, 2 * npts)
    ref = np.max(np.abs(q2))
    if ref > 0 and np.max(np.abs(q - q2)) > rtol * ref:
        raise ArithmeticError(
            f"kernel quadrature not converged at {npts} points per axis")
    return q


# --------------------------------------------------------------------------
# output kernel (square footprint average)
# --------------------------------------------------------------------------

def _clipped_limits(center, radius):
    lo = np.clip(center - radius, 0.0, 1.0)
    hi = np.clip(center + radius, 0.0, 1.0)
    return lo, hi


def _axis_integrals(center, radius, order):
    """``int_{[c-r, c+r] cap [0,1]} sin(pi i u) du`` for i = 1..order."""
    lo, hi = _clipped_limits(center, radius)
    w = np.pi * np.arange(1, order + 1)
    return (np.cos(w * lo) - np.cos(w * hi)) / w


def _axis_integral_slopes(center, radius, order):
    lo, hi = _clipped_limits(center, radius)
    w = np.pi * np.arange(1, order + 1)
    # clipped edges do not move; the integrand vanishes on the boundary anyway
    dhi = 1.0 if 0.0 < center + radius < 1.0 else 0.0
    dlo = 1.0 if 0.0 < center - radius < 1.0 else 0.0
    return np.sin(w * hi) * dhi - np.sin(w * lo) * dlo


def output_vector(location, radius, order):
    """Basis coefficients of the square-average output kernel.

    The footprint ``[x - r, x + r] x [y - r, y + r]`` is clipped to the unit
    square; the ``1 / (4 r^2)`` normalization is kept, so a footprint that
    leaves the domain measures a smaller effective area.
    """
    if radius <= 0:
        raise ValueError("footprint radius must be positive")
    ix = _axis_integrals(location[0], radius, order)
    iy = _axis_integrals(location[1], radius, order)
    return 2.0 / (4.0 * radius * radius) * np.outer(ix, iy).ravel()


def output_jacobian(location, radius, order):
    """Derivatives of :func:`output_vector` w.r.t. the two location coordinates.

    Returns an ``(order**2, 2)`` array.  The clipped integral is C^1 in the
    location because every basis function vanishes on the boundary.
    """
    if radius <= 0:
        raise ValueError("footprint radius must be positive")
    ix = _axis_integrals(location[0], radius, order)
    iy = _axis_integrals(location[1], radius, order)
    dx = _axis_integral_slopes(location[0], radius, order)
    dy = _axis_integral_slopes(location[1], radius, order)
    norm = 2.0 / (4.0 * radius * radius)
    return norm * np.stack([np.outer(dx, iy).ravel(), np.outer(ix, dy).ravel()], axis=1)


def footprint_inside(location, radius):
    """True when the footprint lies strictly inside the domain."""
    x, y = location[0], location[1]
    return radius < x < 1.0 - radius and radius < y < 1.0 - radius


# --------------------------------------------------------------------------
# assembled model
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralModel:
    order: int
    field_spec: FieldSpec
    generator: np.ndarray
    process_cov: np.ndarray
    init_cov: np.ndarray

    @property
    def dim(self):
        return self.order * self.order

    def mean_coeffs(self):
        return self.field_spec.mean_coeffs(self.order)

    def index(self, i, j):
        return mode_index(self.order, i, j)

    def pair(self, k):
        return mode_pair(self.order, k)


def build_model(order, field_spec):
    """Assemble generator, process covariance and initial covariance."""
    if order < 1:
        raise ValueError("order must be >= 1")
    center = field_spec.uncertainty_peak
    scale = field_spec.kernel_scale
    gen = build_generator(order, field_spec)
    q = project_covariance_kernel(field_spec.process_kernel, scale, order, center)
    p0 = project_covariance_kernel(field_spec.init_kernel, scale, order, center)
    for arr in (gen, q, p0):
        arr.setflags(write=False)
    return SpectralModel(order=order, field_spec=field_spec, generator=gen,
                         process_cov=q, init_cov=p0)


def _batch_axis(u, r, order):
    lo = np.clip(u - r, 0.0, 1.0)[..., None]
    hi = np.clip(u + r, 0.0, 1.0)[..., None]
    w = np.pi * np.arange(1, order + 1)
    vals = (np.cos(w * lo) - np.cos(w * hi)) / w
    dhi = ((u + r > 0.0) & (u + r < 1.0))[..., None]
    dlo = ((u - r > 0.0) & (u - r < 1.0))[..., None]
    slopes = np.sin(w * hi) * dhi - np.sin(w * lo) * dlo
    return vals, slopes


def output_vectors(locations, radii, order, jacobian=False):
    """Vectorized :func:`output_vector` over ``locations`` of shape ``(..., m_s, 2)``.

    Returns ``(..., m_s, order**2)``, plus the ``(..., m_s, order**2, 2)``
    location derivatives when ``jacobian`` is set.
    """
    locs = np.asarray(locations, dtype=float)
    r = np.asarray(radii, dtype=float)
    if np.any(r <= 0):
        raise ValueError("footprint radius must be positive")
    ix, dx = _batch_axis(locs[..., 0], r, order)
    iy, dy = _batch_axis(locs[..., 1], r, order)
    norm = (2.0 / (4.0 * r * r))[..., None, None]
    shape = locs.shape[:-1] + (order * order,)
    vals = (norm * ix[..., :, None] * iy[..., None, :]).reshape(shape)
    if not jacobian:
        return vals
    jx = (norm * dx[..., :, None] * iy[..., None, :]).reshape(shape)
    jy = (norm * ix[..., :, None] * dy[..., None, :]).reshape(shape)
    return vals, np.stack([jx, jy], axis=-1)
