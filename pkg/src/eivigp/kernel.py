"""Rate-process covariance, its once-integrated cross-covariance, and
positive-definite linear algebra helpers.

Times are in internal units (kiloyears after the origin shift applied by
:class:`eivigp.model.TimeAxis`), so that integrating a rate in mm/yr over
kiloyears gives metres with no conversion constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

__all__ = [
    "ParameterDomainError",
    "ConditioningError",
    "KernelParams",
    "Grid",
    "QuadratureRule",
    "rate_cov",
    "rate_cov_matrix",
    "cross_cov",
    "cross_cov_matrix",
    "integrand_powers",
    "cross_cov_from_powers",
    "jitter_cholesky",
    "chol_solve",
]

JITTER_START = 1e-10
JITTER_MAX = 1e-4


class ParameterDomainError(ValueError):
    """A parameter or argument lies outside its mathematical domain."""


class ConditioningError(np.linalg.LinAlgError):
    """A matrix could not be factorised even after jitter escalation."""


@dataclass(frozen=True)
class KernelParams:
    """Powered-exponential correlation ``rho ** (|dt| ** kappa)`` scaled by ``upsilon2``."""

    rho: float
    kappa: float = 2.0
    upsilon2: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ParameterDomainError(f"rho must lie in (0, 1), got {self.rho}")
        if not 0.0 < self.kappa <= 2.0:
            raise ParameterDomainError(f"kappa must lie in (0, 2], got {self.kappa}")
        if not self.upsilon2 > 0.0:
            raise ParameterDomainError(f"upsilon2 must be positive, got {self.upsilon2}")


@dataclass(frozen=True)
class Grid:
    """Strictly increasing approximation grid for the integrated process."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float).ravel()
        if nodes.size < 2:
            raise ParameterDomainError("a grid needs at least two nodes")
        if not np.all(np.isfinite(nodes)):
            raise ParameterDomainError("grid nodes must be finite")
        if np.any(np.diff(nodes) <= 0):
            raise ParameterDomainError("grid nodes must be strictly increasing")
        nodes.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)

    @property
    def m(self) -> int:
        return self.nodes.size

    @property
    def lower(self) -> float:
        return float(self.nodes[0])

    @property
    def upper(self) -> float:
        return float(self.nodes[-1])

    @classmethod
    def uniform(cls, lower: float, upper: float, m: int) -> "Grid":
        return cls(np.linspace(lower, upper, m))

    def contains(self, t, rtol: float = 1e-9) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        tol = rtol * (self.upper - self.lower)
        return (t >= self.lower - tol) & (t <= self.upper + tol)


@dataclass(frozen=True)
class QuadratureRule:
    """Chebyshev-Gauss rule of the first kind with ``order`` nodes on (-1, 1).

    Used on plain integrals by multiplying the integrand by ``sqrt(1 - v**2)``
    to cancel the Chebyshev weight.
    """

    order: int = 30
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise ParameterDomainError(f"quadrature order must be a positive integer, got {self.order}")
        k = np.arange(1, self.order + 1)
        nodes = np.cos((2 * k - 1) * np.pi / (2 * self.order))
        weights = np.full(self.order, np.pi / self.order)
        nodes.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def effective_weights(self) -> np.ndarray:
        """Weights with the ``sqrt(1 - v**2)`` factor folded in."""
        return self.weights * np.sqrt(1.0 - self.nodes**2)


def _as_nodes(grid) -> np.ndarray:
    return np.atleast_1d(np.asarray(getattr(grid, "nodes", grid), dtype=float))


def rate_cov(params: KernelParams, dt):
    """Unit-variance correlation of the rate process at time separation ``dt``."""
    dt = np.abs(np.asarray(dt, dtype=float))
    return np.exp(np.log(params.rho) * dt**params.kappa)


def rate_cov_matrix(params: KernelParams, grid, jitter: float = 0.0) -> np.ndarray:
    """Correlation matrix of the rate process over the grid nodes, plus ``jitter`` on the diagonal.

    ``grid`` may be a :class:`Grid` or a plain array of nodes.
    """
    if jitter < 0:
        raise ParameterDomainError("jitter must be non-negative")
    x = _as_nodes(grid)
    cov = rate_cov(params, x[:, None] - x[None, :])
    cov[np.diag_indices_from(cov)] = 1.0 + jitter
    return cov


def integrand_powers(chis, grid, kappa: float, quad: QuadratureRule):
    """Precompute the parts of the cross-covariance that do not depend on ``rho``.

    Returns
    -------
    powers : ndarray, shape (n, L, m)
        ``|u_ik - x_j| ** kappa`` at the mapped quadrature abscissae
        ``u_ik = chi_i / 2 * (v_k + 1)``.
    scaled_weights : ndarray, shape (n, L)
        ``chi_i / 2`` times the effective quadrature weights.
    """
    chis = np.atleast_1d(np.asarray(chis, dtype=float))
    if np.any(chis < 0):
        raise ParameterDomainError("cross-covariance requires chi >= 0 after the origin shift")
    x = _as_nodes(grid)
    u = 0.5 * chis[:, None] * (quad.nodes[None, :] + 1.0)
    powers = np.abs(u[:, :, None] - x[None, None, :]) ** kappa
    scaled_weights = 0.5 * chis[:, None] * quad.effective_weights[None, :]
    return powers, scaled_weights


def cross_cov_from_powers(rho: float, powers: np.ndarray, scaled_weights: np.ndarray) -> np.ndarray:
    """Finish :func:`cross_cov_matrix` for one value of ``rho``."""
    return np.einsum("nl,nlm->nm", scaled_weights, np.exp(np.log(rho) * powers))


def cross_cov_matrix(params: KernelParams, chis, grid, quad: QuadratureRule) -> np.ndarray:
    """Cross-covariance between the integrated process at ``chis`` and the rate at the grid nodes.

    Entry ``(i, j)`` approximates ``int_0^{chi_i} C_w(u, x_j) du``.
    """
    powers, scaled_weights = integrand_powers(chis, grid, params.kappa, quad)
    return cross_cov_from_powers(params.rho, powers, scaled_weights)


def cross_cov(params: KernelParams, chi: float, node: float, quad: QuadratureRule) -> float:
    """Scalar version of :func:`cross_cov_matrix`."""
    if chi < 0:
        raise ParameterDomainError("cross-covariance requires chi >= 0 after the origin shift")
    u = 0.5 * chi * (quad.nodes + 1.0)
    integrand = rate_cov(params, u - node)
    return float(0.5 * chi * np.sum(quad.effective_weights * integrand))


def jitter_cholesky(matrix: np.ndarray, jitter: float = 0.0):
    """Lower Cholesky factor, escalating diagonal jitter on failure.

    The first attempt uses ``jitter`` as given. On failure the added jitter
    starts at 1e-10 (or ``jitter`` if larger) and grows tenfold up to 1e-4.

    Returns
    -------
    factor : ndarray
        Lower-triangular ``L`` with ``L @ L.T == matrix + used * I``.
    used : float
        The jitter that was added.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ParameterDomainError("Cholesky needs a square matrix")
    eye = np.eye(a.shape[0])
    attempts = [jitter]
    j = max(JITTER_START, jitter)
    while j <= JITTER_MAX * (1 + 1e-12):
        if j > jitter:
            attempts.append(j)
        j *= 10.0
    if not np.all(np.isfinite(a)):
        raise ParameterDomainError("matrix has non-finite entries")
    for j in attempts:
        factor, info = lapack.dpotrf(a + j * eye, lower=1, clean=1)
        if info == 0:
            return factor, j
    raise ConditioningError(f"matrix not positive definite after jitter {JITTER_MAX:g}")


def chol_solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``matrix @ sol = rhs`` for a symmetric positive-definite ``matrix``."""
    a = np.asarray(matrix, dtype=float)
    if not np.allclose(a, a.T, rtol=1e-12, atol=1e-14):
        raise ParameterDomainError("chol_solve needs a symmetric matrix")
    factor, _ = jitter_cholesky(a)
    return linalg.cho_solve((factor, True), np.asarray(rhs, dtype=float))
