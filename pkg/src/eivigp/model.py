"""Observation model, GIA correction, priors and log densities.

Two likelihoods are provided. The simple model (S-IGP) treats ages as known;
the errors-in-variables model (EIV-IGP) treats each age as a noisy reading of
a latent true age and scores the GIA-corrected (age, level) pair with a
bivariate normal density.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.special import betaln, gammaln

from .kernel import (
    JITTER_START,
    Grid,
    KernelParams,
    ParameterDomainError,
    QuadratureRule,
    cross_cov_matrix,
    jitter_cholesky,
    rate_cov_matrix,
)

__all__ = [
    "TimeAxis",
    "ObservationRecord",
    "GiaParams",
    "CorrectedObservation",
    "Priors",
    "LatentState",
    "apply_gia",
    "grid_for_data",
    "grid_factor",
    "level_projection",
    "h_values",
    "loglik_sigp",
    "loglik_eiv",
    "loglik_eiv_grad",
    "log_prior",
]

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class TimeAxis:
    """Map calendar years AD to internal time (``scale`` years per unit, zero at ``origin``)."""

    origin: float
    scale: float = 1000.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ParameterDomainError("time scale must be positive")

    def to_internal(self, years):
        return (np.asarray(years, dtype=float) - self.origin) / self.scale

    def to_years(self, t):
        return self.origin + self.scale * np.asarray(t, dtype=float)


@dataclass(frozen=True)
class ObservationRecord:
    """One dated datum: level (m) and its 1-sigma error, age (year AD) and its 1-sigma error."""

    level: float
    level_sd: float
    age: float
    age_sd: float = 0.0

    def __post_init__(self):
        for name in ("level", "level_sd", "age", "age_sd"):
            if not np.isfinite(getattr(self, name)):
                raise ParameterDomainError(f"{name} must be finite")
        if not self.level_sd > 0:
            raise ParameterDomainError(f"level_sd must be positive, got {self.level_sd}")
        if self.age_sd < 0:
            raise ParameterDomainError(f"age_sd must be non-negative, got {self.age_sd}")


@dataclass(frozen=True)
class GiaParams:
    """Site GIA rate ``gamma`` in mm/yr and year of core collection ``t0`` (AD)."""

    gamma: float = 0.0
    t0: float = 2010.0

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and np.isfinite(self.t0)):
            raise ParameterDomainError("GIA parameters must be finite")


@dataclass(frozen=True)
class CorrectedObservation:
    """GIA-corrected (age, level) pair and its 2x2 covariance.

    ``gamma_m`` keeps the GIA rate in m/yr and ``level_sd`` the original level
    error, which the sampler needs to re-apply the correction at a latent age.
    """

    mean_obs: np.ndarray
    cov_obs: np.ndarray
    gamma_m: float = 0.0
    t0: float = 0.0
    level_sd: float = field(default=np.nan)

    @property
    def age(self) -> float:
        return float(self.mean_obs[0])

    @property
    def level(self) -> float:
        return float(self.mean_obs[1])

    @property
    def age_sd(self) -> float:
        return float(np.sqrt(self.cov_obs[0, 0]))


def apply_gia(record: ObservationRecord, gia: GiaParams | None = None) -> CorrectedObservation:
    """Remove a constant GIA rate from one record.

    The level is raised by ``gamma * (t0 - age)`` and the covariance picks up
    the age-level correlation implied by the correction.
    """
    gia = gia or GiaParams()
    g = gia.gamma / 1000.0
    a = np.array([[1.0, 0.0], [-g, 1.0]])
    b = np.array([0.0, g * gia.t0])
    z = np.array([record.age, record.level])
    v = np.diag([record.age_sd**2, record.level_sd**2])
    cov = a @ v @ a.T
    cov = 0.5 * (cov + cov.T)
    return CorrectedObservation(
        mean_obs=a @ z + b, cov_obs=cov, gamma_m=g, t0=gia.t0, level_sd=record.level_sd
    )


@dataclass(frozen=True)
class Priors:
    """Prior hyperparameters.

    Gamma priors use the shape-rate parameterisation, so ``Gamma(80, 20)``
    has mean 4. The latent true ages get a uniform prior over the grid span.
    """

    rho: tuple[float, float] = (2.0, 8.0)
    tau2: tuple[float, float] = (0.1, 10.0)
    upsilon2: tuple[float, float] = (80.0, 20.0)
    alpha_sd: float = 100.0

    def __post_init__(self):
        values = (*self.rho, *self.tau2, *self.upsilon2, self.alpha_sd)
        if not all(np.isfinite(v) and v > 0 for v in values):
            raise ParameterDomainError("prior hyperparameters must be strictly positive")


@dataclass(frozen=True)
class LatentState:
    """All sampled unknowns. ``chis`` are internal times; ``w_m`` are grid rates in mm/yr."""

    alpha: float
    tau2: float
    kernel: KernelParams
    chis: np.ndarray
    w_m: np.ndarray


def log_beta_pdf(x, a, b):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (a - 1) * np.log(x) + (b - 1) * np.log1p(-x) - betaln(a, b)
    return np.where((x > 0) & (x < 1), out, -np.inf)


def log_gamma_pdf(x, shape, rate):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = shape * np.log(rate) - gammaln(shape) + (shape - 1) * np.log(x) - rate * x
    return np.where(x > 0, out, -np.inf)


def grid_for_data(internal_ages, internal_age_sds, m: int, pad_sd: float = 3.0) -> Grid:
    """Uniform grid over the data span padded by ``pad_sd`` times the largest age error."""
    ages = np.asarray(internal_ages, dtype=float)
    pad = pad_sd * float(np.max(internal_age_sds, initial=0.0))
    lo, hi = ages.min() - pad, ages.max() + pad
    if hi <= lo:
        raise ParameterDomainError("data span is empty; cannot build a grid")
    return Grid.uniform(lo, hi, m)


def grid_factor(params: KernelParams, grid: Grid, jitter: float = JITTER_START):
    """Cholesky factor of the grid correlation matrix (unit variance)."""
    factor, _ = jitter_cholesky(rate_cov_matrix(params, grid), jitter=jitter)
    return factor


def level_projection(params: KernelParams, times, grid: Grid, quad: QuadratureRule, factor=None):
    """Matrix ``H`` with ``h(times) = H @ w_m``."""
    factor = grid_factor(params, grid) if factor is None else factor
    k = cross_cov_matrix(params, times, grid, quad)
    return linalg.cho_solve((factor, True), k.T).T


def h_values(state: LatentState, eval_times, grid: Grid, quad: QuadratureRule, factor=None) -> np.ndarray:
    """Integrated process (metres) at internal ``eval_times`` for one state."""
    t = np.atleast_1d(np.asarray(eval_times, dtype=float))
    if np.any(~grid.contains(t)):
        raise ParameterDomainError("evaluation times must lie inside the grid span")
    return level_projection(state.kernel, t, grid, quad, factor) @ np.asarray(state.w_m, dtype=float)


def _stack(data: Sequence[CorrectedObservation]):
    means = np.array([d.mean_obs for d in data], dtype=float).reshape(-1, 2)
    covs = np.array([d.cov_obs for d in data], dtype=float).reshape(-1, 2, 2)
    return means, covs


def loglik_sigp(state: LatentState, data: Sequence[CorrectedObservation], grid: Grid,
                quad: QuadratureRule, axis: TimeAxis) -> float:
    """Log-likelihood when ages are known exactly (all age variances zero)."""
    means, covs = _stack(data)
    if np.any(covs[:, 0, 0] != 0):
        raise ParameterDomainError("loglik_sigp needs records with zero age error")
    var = covs[:, 1, 1] + state.tau2
    if np.any(var <= 0):
        raise ParameterDomainError("total level variance must be positive")
    h = h_values(state, axis.to_internal(means[:, 0]), grid, quad)
    resid = means[:, 1] - state.alpha - h
    return float(-0.5 * np.sum(LOG_2PI + np.log(var) + resid**2 / var))


def _eiv_terms(state, data, grid, quad, axis):
    means, covs = _stack(data)
    chis = np.asarray(state.chis, dtype=float)
    exact = covs[:, 0, 0] <= 0
    t = np.where(exact, axis.to_internal(means[:, 0]), chis)
    proj = level_projection(state.kernel, t, grid, quad)
    h = proj @ np.asarray(state.w_m, dtype=float)
    s = covs.copy()
    s[:, 1, 1] += state.tau2
    r = np.column_stack([means[:, 0] - axis.to_years(t), means[:, 1] - state.alpha - h])
    return means, s, r, exact, proj


def loglik_eiv(state: LatentState, data: Sequence[CorrectedObservation], grid: Grid,
               quad: QuadratureRule, axis: TimeAxis) -> float:
    """Sum of bivariate normal log densities of the corrected (age, level) pairs.

    Records with zero age error are scored with the univariate level density
    at their observed age; the bivariate form would be singular.
    """
    _, s, r, exact, _ = _eiv_terms(state, data, grid, quad, axis)
    total = 0.0
    if np.any(exact):
        var = s[exact, 1, 1]
        total += float(-0.5 * np.sum(LOG_2PI + np.log(var) + r[exact, 1] ** 2 / var))
    biv = ~exact
    if np.any(biv):
        sb, rb = s[biv], r[biv]
        det = sb[:, 0, 0] * sb[:, 1, 1] - sb[:, 0, 1] * sb[:, 1, 0]
        if np.any(det <= 0):
            raise ParameterDomainError("singular age-level covariance")
        quadform = (sb[:, 1, 1] * rb[:, 0] ** 2 - 2 * sb[:, 0, 1] * rb[:, 0] * rb[:, 1]
                    + sb[:, 0, 0] * rb[:, 1] ** 2) / det
        total += float(-0.5 * np.sum(2 * LOG_2PI + np.log(det) + quadform))
    return total


def loglik_eiv_grad(state: LatentState, data: Sequence[CorrectedObservation], grid: Grid,
                    quad: QuadratureRule, axis: TimeAxis):
    """Gradient of :func:`loglik_eiv` with respect to ``alpha`` and ``w_m``."""
    _, s, r, exact, proj = _eiv_terms(state, data, grid, quad, axis)
    g = np.empty(len(r))
    g[exact] = r[exact, 1] / s[exact, 1, 1]
    biv = ~exact
    if np.any(biv):
        sb, rb = s[biv], r[biv]
        det = sb[:, 0, 0] * sb[:, 1, 1] - sb[:, 0, 1] * sb[:, 1, 0]
        # level component of S^-1 r
        g[biv] = (-sb[:, 1, 0] * rb[:, 0] + sb[:, 0, 0] * rb[:, 1]) / det
    return float(g.sum()), proj.T @ g


def log_prior(state: LatentState, priors: Priors, grid_cov_factor: np.ndarray,
              grid: Grid | None = None) -> float:
    """Joint log prior density of a state; ``-inf`` outside the support.

    ``grid_cov_factor`` is the lower Cholesky factor of the unit-variance grid
    correlation matrix. When ``grid`` is given the latent ages get their
    uniform prior over the grid span.
    """
    k = state.kernel
    if not (0 < k.rho < 1 and state.tau2 > 0 and k.upsilon2 > 0):
        return -np.inf
    lp = float(log_beta_pdf(k.rho, *priors.rho))
    lp += float(log_gamma_pdf(state.tau2, *priors.tau2))
    lp += float(log_gamma_pdf(k.upsilon2, *priors.upsilon2))
    lp += -0.5 * (LOG_2PI + 2 * np.log(priors.alpha_sd) + (state.alpha / priors.alpha_sd) ** 2)
    w = np.asarray(state.w_m, dtype=float)
    white = linalg.solve_triangular(grid_cov_factor, w, lower=True)
    m = w.size
    lp += -0.5 * (m * (LOG_2PI + np.log(k.upsilon2)) + 2 * np.sum(np.log(np.diag(grid_cov_factor)))
                  + white @ white / k.upsilon2)
    if grid is not None and np.size(state.chis):
        chis = np.asarray(state.chis, dtype=float)
        if np.any(~grid.contains(chis)):
            return -np.inf
        lp -= chis.size * np.log(grid.upper - grid.lower)
    return lp
