"""Posterior summaries of rate and level paths, and held-out predictions."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import lapack

from .diagnostics import effective_sample_size
from .kernel import Grid, KernelParams, ParameterDomainError, cross_cov_from_powers, integrand_powers, rate_cov
from .model import LatentState, grid_factor
from .sampler import ChainOutput

__all__ = [
    "Summary",
    "RateSummary",
    "LevelSummary",
    "Prediction",
    "rate_at",
    "rate_paths",
    "level_paths",
    "summarize",
    "predict_levels",
    "predict_observations",
]


@dataclass(frozen=True)
class Summary:
    """Pointwise posterior mean and equal-tailed 68% / 95% bands.

    ``mcse`` is the Monte Carlo standard error of ``mean``.
    """

    eval_times: np.ndarray
    mean: np.ndarray
    lower68: np.ndarray
    upper68: np.ndarray
    lower95: np.ndarray
    upper95: np.ndarray
    mcse: np.ndarray

    def at(self, year: float) -> dict:
        """Linear interpolation of every column at one calendar year."""
        return {name: float(np.interp(year, self.eval_times, getattr(self, name)))
                for name in ("mean", "lower68", "upper68", "lower95", "upper95", "mcse")}

    def as_columns(self) -> dict[str, np.ndarray]:
        return {"time": self.eval_times, "mean": self.mean, "lo68": self.lower68, "hi68": self.upper68,
                "lo95": self.lower95, "hi95": self.upper95, "mcse": self.mcse}


class RateSummary(Summary):
    """Rates in mm/yr at calendar years AD."""


class LevelSummary(Summary):
    """Levels in metres at calendar years AD."""


@dataclass(frozen=True)
class Prediction:
    times: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_paths: int
    truncated: bool


def rate_at(draw: LatentState, t, grid: Grid, factor=None) -> np.ndarray:
    """Rate of one draw at internal times ``t`` by kriging the grid rates.

    Values at grid nodes are the stored grid rates.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(~grid.contains(t)):
        raise ParameterDomainError("rate evaluation times must lie inside the grid span")
    factor = grid_factor(draw.kernel, grid) if factor is None else factor
    w = np.asarray(draw.w_m, dtype=float)
    coef, _ = lapack.dpotrs(factor, w, lower=1)
    out = rate_cov(draw.kernel, t[:, None] - grid.nodes[None, :]) @ coef
    idx = np.searchsorted(grid.nodes, t)
    idx = np.clip(idx, 0, grid.m - 1)
    on_node = grid.nodes[idx] == t
    out[on_node] = w[idx[on_node]]
    return out


def _pooled(chains: Sequence[ChainOutput]):
    if isinstance(chains, ChainOutput):
        chains = [chains]
    chains = list(chains)
    if not chains or sum(c.n_draws for c in chains) == 0:
        raise ParameterDomainError("no posterior draws to summarise")
    return chains


def _paths(chains, times_internal, kind: str) -> np.ndarray:
    chains = _pooled(chains)
    problem = chains[0].problem
    grid, quad, kappa = problem.grid, problem.quad, problem.kappa
    t = np.atleast_1d(np.asarray(times_internal, dtype=float))
    if np.any(~grid.contains(t)):
        raise ParameterDomainError("evaluation times must lie inside the grid span")
    t = np.clip(t, grid.lower, grid.upper)
    rate_factor = 1000.0 / problem.axis.scale
    if kind == "level":
        powers, sw = integrand_powers(t, grid, kappa, quad)
    else:
        diff = t[:, None] - grid.nodes[None, :]
        dpow = np.abs(diff) ** kappa
        idx = np.clip(np.searchsorted(grid.nodes, t), 0, grid.m - 1)
        on_node = grid.nodes[idx] == t
    rows = []
    for ch in chains:
        block = np.empty((ch.n_draws, t.size))
        last = (None, None)
        for i in range(ch.n_draws):
            rho = float(ch.rho[i])
            if last[0] != rho:
                kp = KernelParams(rho=rho, kappa=kappa)
                factor = grid_factor(kp, grid)
                cross = cross_cov_from_powers(rho, powers, sw) if kind == "level" else np.exp(math.log(rho) * dpow)
                last = (rho, (factor, cross))
            factor, cross = last[1]
            coef, _ = lapack.dpotrs(factor, ch.w[i], lower=1)
            vals = cross @ coef
            if kind == "level":
                block[i] = ch.alpha[i] + vals
            else:
                vals[on_node] = ch.w[i][idx[on_node]]
                block[i] = rate_factor * vals
        rows.append(block)
    return np.vstack(rows)


def rate_paths(chains, years) -> np.ndarray:
    """Rate (mm/yr) of every pooled draw at calendar ``years``; shape (draws, times)."""
    chains = _pooled(chains)
    return _paths(chains, chains[0].problem.axis.to_internal(years), "rate")


def level_paths(chains, years) -> np.ndarray:
    """Level (m) of every pooled draw at calendar ``years``; shape (draws, times)."""
    chains = _pooled(chains)
    return _paths(chains, chains[0].problem.axis.to_internal(years), "level")


def _mcse(paths_by_chain) -> np.ndarray:
    n_t = paths_by_chain[0].shape[1]
    out = np.empty(n_t)
    for j in range(n_t):
        ess = 0.0
        for p in paths_by_chain:
            if p.shape[0] >= 10:
                ess += effective_sample_size(p[:, j])
            else:
                ess += p.shape[0]
        pooled = np.concatenate([p[:, j] for p in paths_by_chain])
        out[j] = pooled.std(ddof=1) / math.sqrt(max(ess, 1.0)) if pooled.size > 1 else 0.0
    return out


def summarize(chains, eval_years=None, kind: str = "rate", n_eval: int = 200, min_draws: int = 100) -> Summary:
    """Pointwise posterior summary of rate or level paths.

    ``eval_years`` defaults to ``n_eval`` evenly spaced years over the data
    span (the grid span when there are no data).
    """
    chains = _pooled(chains)
    if kind not in ("rate", "level"):
        raise ParameterDomainError("kind must be 'rate' or 'level'")
    total = sum(c.n_draws for c in chains)
    if total < min_draws:
        raise ParameterDomainError(f"need at least {min_draws} pooled draws, got {total}")
    problem = chains[0].problem
    if eval_years is None:
        if problem.n:
            lo, hi = problem.ages.min(), problem.ages.max()
        else:
            lo, hi = problem.axis.to_years([problem.grid.lower, problem.grid.upper])
        eval_years = np.linspace(lo, hi, n_eval)
    eval_years = np.atleast_1d(np.asarray(eval_years, dtype=float))
    per_chain = [_paths([c], problem.axis.to_internal(eval_years), kind) for c in chains if c.n_draws]
    paths = np.vstack(per_chain)
    q = np.quantile(paths, [0.025, 0.16, 0.84, 0.975], axis=0)
    cls = RateSummary if kind == "rate" else LevelSummary
    return cls(eval_times=eval_years, mean=paths.mean(axis=0), lower68=q[1], upper68=q[2],
               lower95=q[0], upper95=q[3], mcse=_mcse(per_chain))


def _pick_draws(chains, n_paths: int, seed: int):
    """Indices into the pooled draws: ``n_paths`` without replacement, or all of them."""
    total = sum(c.n_draws for c in chains)
    truncated = n_paths > total
    if truncated:
        warnings.warn(f"requested {n_paths} paths but only {total} draws are available", stacklevel=3)
        return np.arange(total), truncated
    return np.sort(np.random.default_rng(seed).choice(total, size=n_paths, replace=False)), truncated


def _prediction(times, paths, truncated) -> Prediction:
    mean = paths.mean(axis=0)
    sd = paths.std(axis=0, ddof=1) if paths.shape[0] > 1 else np.zeros_like(mean)
    return Prediction(times=np.atleast_1d(np.asarray(times, dtype=float)), mean=mean, sd=sd,
                      lower=mean - 1.96 * sd, upper=mean + 1.96 * sd, n_paths=paths.shape[0],
                      truncated=truncated)


def predict_levels(chains, target_years, n_paths: int = 500, seed: int = 0) -> Prediction:
    """Predictive mean and normal-approximation 95% interval of the level at ``target_years``.

    Each path is ``alpha + h`` for one posterior draw; observation noise is
    not added, so the interval describes the latent level.

    ``n_paths`` draws are taken without replacement from the pooled chains;
    if fewer are available all are used and ``truncated`` is set.
    """
    chains = _pooled(chains)
    pick, truncated = _pick_draws(chains, n_paths, seed)
    return _prediction(target_years, level_paths(chains, target_years)[pick], truncated)


def predict_observations(chains, ages, level_sds, age_sds=None, gamma_m=None, n_paths: int = 500,
                         seed: int = 0) -> Prediction:
    """Predictive mean and normal-approximation 95% interval of new GIA-corrected observations.

    For each path the true age is drawn from ``N(age, age_sd**2)`` and
    clipped to the grid, the level ``alpha + h`` is evaluated there and
    shifted by the GIA correction between the observed and true age, and
    ``N(0, level_sd**2 + tau2)`` noise is added. With zero age errors this
    is :func:`predict_levels` plus observation noise.

    Parameters
    ----------
    ages : array_like
        Observed ages in years AD.
    level_sds, age_sds : array_like
        One-sigma level (m) and age (yr) errors; ``age_sds`` defaults to zero.
    gamma_m : array_like, optional
        GIA rates in m/yr used for the correction; default zero.
    """
    chains = _pooled(chains)
    problem = chains[0].problem
    ages = np.atleast_1d(np.asarray(ages, dtype=float))
    level_sds = np.broadcast_to(np.asarray(level_sds, dtype=float), ages.shape)
    age_sds = np.zeros_like(ages) if age_sds is None else np.broadcast_to(np.asarray(age_sds, float), ages.shape)
    gamma_m = np.zeros_like(ages) if gamma_m is None else np.broadcast_to(np.asarray(gamma_m, float), ages.shape)
    if np.any(~problem.grid.contains(problem.axis.to_internal(ages))):
        raise ParameterDomainError("prediction ages must lie inside the grid span")
    pick, truncated = _pick_draws(chains, n_paths, seed)
    rng = np.random.default_rng([seed, 1])
    grid, quad, kappa = problem.grid, problem.quad, problem.kappa
    offsets = np.cumsum([0] + [c.n_draws for c in chains])
    paths = np.empty((pick.size, ages.size))
    for row, k in enumerate(pick):
        ci = int(np.searchsorted(offsets, k, side="right") - 1)
        ch, i = chains[ci], int(k - offsets[ci])
        true_age = ages + age_sds * rng.standard_normal(ages.size)
        chi = np.clip(problem.axis.to_internal(true_age), grid.lower, grid.upper)
        true_age = problem.axis.to_years(chi)
        rho = float(ch.rho[i])
        powers, sw = integrand_powers(chi, grid, kappa, quad)
        factor = grid_factor(KernelParams(rho=rho, kappa=kappa), grid)
        coef, _ = lapack.dpotrs(factor, ch.w[i], lower=1)
        level = ch.alpha[i] + cross_cov_from_powers(rho, powers, sw) @ coef - gamma_m * (ages - true_age)
        noise_sd = np.sqrt(level_sds**2 + ch.tau2[i])
        paths[row] = level + noise_sd * rng.standard_normal(ages.size)
    return _prediction(ages, paths, truncated)
