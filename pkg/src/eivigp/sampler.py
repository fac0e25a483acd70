"""MCMC for the integrated-GP sea-level models.

One sweep of the sampler does, in order:

1. slice updates of ``rho``, ``log tau2`` and ``log upsilon2`` against the
   likelihood with ``(alpha, w_m)`` integrated out (given the latent ages);
2. an exact draw of ``(alpha, u)`` from its Gaussian full conditional, where
   ``w_m = sqrt(upsilon2) * L @ u`` and ``L`` is the Cholesky factor of the
   grid correlation matrix;
3. (EIV mode only) independent slice updates of every latent true age.

Steps 1 and 2 together draw ``(rho, tau2, upsilon2, alpha, w_m)`` jointly
from their conditional given the ages, so the sweep is a valid blocked
Gibbs sampler.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .kernel import (
    JITTER_START,
    ConditioningError,
    Grid,
    KernelParams,
    ParameterDomainError,
    QuadratureRule,
    jitter_cholesky,
    rate_cov_matrix,
)
from .model import (
    LOG_2PI,
    CorrectedObservation,
    GiaParams,
    LatentState,
    ObservationRecord,
    Priors,
    TimeAxis,
    apply_gia,
    log_beta_pdf,
    log_gamma_pdf,
)

__all__ = [
    "MODES",
    "SamplerError",
    "ChainConfig",
    "Problem",
    "ChainOutput",
    "slice_sample",
    "slice_sample_vector",
    "linear_block_conditional",
    "update_linear_block",
    "run_chain",
    "run_chains",
]

logger = logging.getLogger(__name__)

MODES = ("sigp", "eivigp")
MAX_SHRINK = 100
MAX_STEP_OUT = 50


class SamplerError(RuntimeError):
    """The chain reached a state it cannot continue from."""


@dataclass(frozen=True)
class ChainConfig:
    n_iterations: int = 5000
    burn_in: int = 500
    thin: int = 3
    n_chains: int = 2
    seed: int = 0
    adapt_window: int = 50

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_iterations:
            raise ParameterDomainError("need 0 <= burn_in < n_iterations")
        if self.thin < 1 or self.n_chains < 1 or self.adapt_window < 1:
            raise ParameterDomainError("thin, n_chains and adapt_window must be >= 1")

    @classmethod
    def long_run(cls, **kwargs) -> "ChainConfig":
        base = dict(n_iterations=50_000, burn_in=5000, thin=15)
        base.update(kwargs)
        return cls(**base)

    @property
    def n_draws(self) -> int:
        return (self.n_iterations - self.burn_in) // self.thin


@dataclass(frozen=True)
class Problem:
    """Everything a chain needs besides priors and run settings.

    Build one with :meth:`from_records`, which applies the GIA correction and
    places the time origin at the lower end of the padded grid.
    """

    data: tuple[CorrectedObservation, ...]
    axis: TimeAxis
    grid: Grid
    quad: QuadratureRule = field(default_factory=QuadratureRule)
    kappa: float = 2.0
    mode: str = "eivigp"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterDomainError(f"mode must be one of {MODES}, got {self.mode!r}")
        KernelParams(rho=0.5, kappa=self.kappa)
        if self.grid.lower < 0:
            raise ParameterDomainError("grid must start at or after the time origin")
        if self.n and np.any(~self.grid.contains(self.axis.to_internal(self.ages))):
            raise ParameterDomainError("observed ages must lie inside the grid")

    @classmethod
    def from_records(cls, records: Sequence[ObservationRecord], gia=None, *, mode: str = "eivigp",
                     m: int | None = None, quad_order: int = 30, kappa: float = 2.0,
                     time_scale: float = 1000.0, pad_sd: float = 3.0) -> "Problem":
        """Correct ``records`` for GIA and lay a uniform grid over their padded span.

        ``gia`` is ``None``, a single :class:`GiaParams`, or one per record.
        The padding is ``pad_sd`` times the largest age error (none in S-IGP
        mode). ``m`` defaults to 30 for spans under 500 years, else 50.
        """
        records = list(records)
        if not records:
            raise ParameterDomainError("no observations; use Problem.prior_only for an empty fit")
        if gia is None or isinstance(gia, GiaParams):
            gia = [gia] * len(records)
        if len(gia) != len(records):
            raise ParameterDomainError("need one GiaParams per record")
        data = tuple(apply_gia(r, g) for r, g in zip(records, gia))
        ages = np.array([r.age for r in records])
        sds = np.array([r.age_sd for r in records])
        pad = pad_sd * sds.max() if mode == "eivigp" else 0.0
        lo, hi = ages.min() - pad, ages.max() + pad
        if m is None:
            m = 30 if hi - lo < 500 else 50
        axis = TimeAxis(origin=lo, scale=time_scale)
        grid = Grid.uniform(0.0, (hi - lo) / time_scale, m)
        return cls(data, axis, grid, QuadratureRule(quad_order), kappa, mode)

    @classmethod
    def prior_only(cls, start_year: float, end_year: float, *, m: int = 30, quad_order: int = 30,
                   kappa: float = 2.0, time_scale: float = 1000.0) -> "Problem":
        axis = TimeAxis(origin=start_year, scale=time_scale)
        grid = Grid.uniform(0.0, (end_year - start_year) / time_scale, m)
        return cls((), axis, grid, QuadratureRule(quad_order), kappa, "sigp")

    @property
    def n(self) -> int:
        return len(self.data)

    @property
    def ages(self) -> np.ndarray:
        return np.array([d.mean_obs[0] for d in self.data], dtype=float)

    @property
    def levels(self) -> np.ndarray:
        return np.array([d.mean_obs[1] for d in self.data], dtype=float)

    @property
    def age_sds(self) -> np.ndarray:
        return np.array([np.sqrt(max(d.cov_obs[0, 0], 0.0)) for d in self.data], dtype=float)

    @property
    def level_sds(self) -> np.ndarray:
        # cov_yy minus the GIA-induced part recovers the original level variance
        out = []
        for d in self.data:
            sd = d.level_sd
            if not np.isfinite(sd):
                sd = math.sqrt(d.cov_obs[1, 1] - d.gamma_m**2 * d.cov_obs[0, 0])
            out.append(sd)
        return np.array(out, dtype=float)

    @property
    def gamma_m(self) -> np.ndarray:
        return np.array([d.gamma_m for d in self.data], dtype=float)

    @property
    def uncertain(self) -> np.ndarray:
        """Mask of records whose true age is sampled."""
        if self.mode == "sigp":
            return np.zeros(self.n, dtype=bool)
        return self.age_sds > 0

    def subset(self, index) -> "Problem":
        """Same grid and settings restricted to the records in ``index``."""
        return replace(self, data=tuple(self.data[i] for i in np.atleast_1d(index)))


@dataclass
class ChainOutput:
    """Post-burn-in, thinned draws of one chain.

    Arrays are indexed by draw first. ``w`` holds grid rates in mm/yr (per
    internal time unit when the time scale is not 1000), ``chis`` the latent
    ages in internal time and ``h`` the integrated process at those ages.
    """

    problem: Problem
    config: ChainConfig
    chain: int
    rho: np.ndarray
    tau2: np.ndarray
    upsilon2: np.ndarray
    alpha: np.ndarray
    w: np.ndarray
    chis: np.ndarray
    h: np.ndarray
    logpost: np.ndarray
    accept: dict[str, list[int]]
    jitter: np.ndarray

    @property
    def n_draws(self) -> int:
        return self.rho.size

    def state(self, i: int) -> LatentState:
        kp = KernelParams(rho=float(self.rho[i]), kappa=self.problem.kappa, upsilon2=float(self.upsilon2[i]))
        return LatentState(alpha=float(self.alpha[i]), tau2=float(self.tau2[i]), kernel=kp,
                           chis=self.chis[i].copy(), w_m=self.w[i].copy())

    @property
    def draws(self) -> list[LatentState]:
        return [self.state(i) for i in range(self.n_draws)]

    def scalar_traces(self) -> dict[str, np.ndarray]:
        return {"alpha": self.alpha, "tau2": self.tau2, "upsilon2": self.upsilon2, "rho": self.rho}


# ---------------------------------------------------------------------------
# slice sampling
# ---------------------------------------------------------------------------


def slice_sample(x0: float, logp: Callable[[float], float], rng: np.random.Generator, width: float = 1.0,
                 lower: float = -np.inf, upper: float = np.inf, logp0: float | None = None,
                 max_step_out: int = MAX_STEP_OUT, max_shrink: int = MAX_SHRINK):
    """One stepping-out slice-sampling update of a scalar.

    Returns ``(x, logp(x), accepted)``. If shrinkage needs more than
    ``max_shrink`` proposals the update is rejected and ``x0`` returned.
    """
    if logp0 is None:
        logp0 = logp(x0)
    level = logp0 - rng.exponential()
    left = x0 - width * rng.uniform()
    right = left + width
    j = int(math.floor(max_step_out * rng.uniform()))
    k = max_step_out - 1 - j
    while j > 0 and left > lower and logp(left) > level:
        left -= width
        j -= 1
    while k > 0 and right < upper and logp(right) > level:
        right += width
        k -= 1
    left, right = max(left, lower), min(right, upper)
    for _ in range(max_shrink):
        x1 = rng.uniform(left, right)
        if lower < x1 < upper:
            lp1 = logp(x1)
            if lp1 > level:
                return x1, lp1, True
        if x1 < x0:
            left = x1
        else:
            right = x1
    return x0, logp0, False


def slice_sample_vector(x0: np.ndarray, logp: Callable[[np.ndarray, np.ndarray], np.ndarray],
                        rng: np.random.Generator, width, lower, upper, logp0: np.ndarray | None = None,
                        max_step_out: int = 20, max_shrink: int = MAX_SHRINK):
    """Independent slice updates of many scalars whose log densities factorise.

    ``logp(x, idx)`` returns the log densities of coordinates ``idx`` at the
    values ``x`` (same length as ``idx``). Returns ``(x, logp(x), accepted)``.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    width = np.broadcast_to(np.asarray(width, dtype=float), (n,))
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (n,))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (n,))
    idx_all = np.arange(n)
    if logp0 is None:
        logp0 = logp(x0, idx_all)
    level = logp0 - rng.exponential(size=n)
    left = x0 - width * rng.uniform(size=n)
    right = left + width
    j = np.floor(max_step_out * rng.uniform(size=n)).astype(int)
    k = max_step_out - 1 - j
    for edge, budget, step in ((left, j, -1.0), (right, k, 1.0)):
        bound = lower if step < 0 else upper
        active = (budget > 0) & ((edge > bound) if step < 0 else (edge < bound))
        while np.any(active):
            idx = idx_all[active]
            inside = logp(edge[idx], idx) > level[idx]
            grow = idx[inside]
            edge[grow] += step * width[grow]
            budget[grow] -= 1
            active[:] = False
            active[grow] = (budget[grow] > 0) & ((edge[grow] > bound[grow]) if step < 0 else (edge[grow] < bound[grow]))
    left = np.maximum(left, lower)
    right = np.minimum(right, upper)
    x = x0.copy()
    lp = np.array(logp0, dtype=float, copy=True)
    pending = np.ones(n, dtype=bool)
    for _ in range(max_shrink):
        if not pending.any():
            break
        idx = idx_all[pending]
        x1 = rng.uniform(left[idx], right[idx])
        ok = (x1 > lower[idx]) & (x1 < upper[idx])
        lp1 = np.full(idx.size, -np.inf)
        if ok.any():
            lp1[ok] = logp(x1[ok], idx[ok])
        hit = lp1 > level[idx]
        x[idx[hit]] = x1[hit]
        lp[idx[hit]] = lp1[hit]
        pending[idx[hit]] = False
        miss = idx[~hit]
        below = x1[~hit] < x0[miss]
        left[miss[below]] = x1[~hit][below]
        right[miss[~below]] = x1[~hit][~below]
    return x, lp, ~pending


# ---------------------------------------------------------------------------
# the (alpha, w) block
# ---------------------------------------------------------------------------


def _gram(design: np.ndarray, target: np.ndarray, noise_var: np.ndarray) -> dict:
    """Sufficient statistics of the level model that do not involve ``upsilon2``."""
    d_inv = 1.0 / noise_var
    gd = design.T * d_inv
    return {
        "n": target.size,
        "gtg": gd @ design,
        "g1": gd.sum(axis=1),
        "gz": gd @ target,
        "s1": float(d_inv.sum()),
        "sz": float(d_inv @ target),
        "zz": float(d_inv @ target**2),
        "logdet": float(np.sum(np.log(noise_var))),
    }


def _conditional_from_gram(gram: dict, upsilon2: float, alpha_sd: float):
    m = gram["gtg"].shape[0]
    s = math.sqrt(upsilon2)
    prec = np.empty((m + 1, m + 1))
    prec[0, 0] = gram["s1"] + 1.0 / alpha_sd**2
    prec[0, 1:] = prec[1:, 0] = s * gram["g1"]
    prec[1:, 1:] = upsilon2 * gram["gtg"]
    prec[np.arange(1, m + 1), np.arange(1, m + 1)] += 1.0
    factor, info = lapack.dpotrf(prec, lower=1, clean=1)
    if info != 0:
        raise ConditioningError("conditional precision of (alpha, u) is not positive definite")
    b = np.empty(m + 1)
    b[0] = gram["sz"]
    b[1:] = s * gram["gz"]
    v, _ = lapack.dtrtrs(factor, b, lower=1)
    mean, _ = lapack.dtrtrs(factor, v, lower=1, trans=1)
    loglik = -0.5 * (gram["n"] * LOG_2PI + gram["logdet"] + 2 * math.log(alpha_sd)
                     + 2 * np.sum(np.log(np.diag(factor))) + gram["zz"] - v @ v)
    return mean, factor, float(loglik)


def linear_block_conditional(design: np.ndarray, target: np.ndarray, noise_var: np.ndarray,
                             upsilon2: float, alpha_sd: float):
    """Gaussian full conditional of ``beta = (alpha, u)``.

    The level model is ``target ~ N(alpha + sqrt(upsilon2) * design @ u,
    diag(noise_var))`` with priors ``alpha ~ N(0, alpha_sd**2)`` and
    ``u ~ N(0, I)``.

    Returns
    -------
    mean : ndarray
        Conditional mean of ``beta``.
    prec_factor : ndarray
        Lower Cholesky factor of the conditional precision.
    loglik : float
        Log marginal likelihood of ``target`` with ``beta`` integrated out.
    """
    design = np.asarray(design, dtype=float)
    target = np.asarray(target, dtype=float)
    noise_var = np.broadcast_to(np.asarray(noise_var, dtype=float), target.shape)
    return _conditional_from_gram(_gram(design, target, noise_var), upsilon2, alpha_sd)


def update_linear_block(design, target, noise_var, upsilon2, alpha_sd, rng):
    """Exact draw of ``(alpha, u)`` from :func:`linear_block_conditional`."""
    mean, factor, _ = linear_block_conditional(design, target, noise_var, upsilon2, alpha_sd)
    return _draw_beta(mean, factor, rng)


def _draw_beta(mean, factor, rng):
    z = rng.standard_normal(mean.size)
    step, _ = lapack.dtrtrs(factor, z, lower=1, trans=1)
    beta = mean + step
    return float(beta[0]), beta[1:]


def _elliptical_slice(u, loglik, rng, max_shrink=MAX_SHRINK):
    nu = rng.standard_normal(u.size)
    ll0 = loglik(u)
    level = ll0 - rng.exponential()
    theta = rng.uniform(0, 2 * np.pi)
    lo, hi = theta - 2 * np.pi, theta
    for _ in range(max_shrink):
        prop = u * math.cos(theta) + nu * math.sin(theta)
        if loglik(prop) > level:
            return prop, True
        if theta < 0:
            lo = theta
        else:
            hi = theta
        theta = rng.uniform(lo, hi)
    return u, False


# ---------------------------------------------------------------------------
# chain
# ---------------------------------------------------------------------------


class _Chain:
    """Mutable state and caches for one chain; not shared across chains."""

    def __init__(self, problem: Problem, priors: Priors, rng: np.random.Generator):
        self.p = problem
        self.priors = priors
        self.rng = rng
        pr = problem
        self.x_obs = pr.ages
        self.t_obs = pr.axis.to_internal(self.x_obs)
        self.level_obs = pr.levels
        self.g = pr.gamma_m
        self.sy2 = pr.level_sds**2
        self.sx = pr.age_sds
        self.unc = pr.uncertain
        self.unc_idx = np.flatnonzero(self.unc)
        self.nodes = pr.grid.nodes
        self.qv = pr.quad.nodes
        self.qw = pr.quad.effective_weights
        self.kappa = pr.kappa
        self.span = pr.grid.upper - pr.grid.lower
        self._grid_powers = np.abs(self.nodes[:, None] - self.nodes[None, :]) ** self.kappa
        self._diag = np.diag_indices(self.nodes.size)
        self.set_chi(np.clip(self.t_obs, pr.grid.lower, pr.grid.upper))

    # -- kernel pieces -----------------------------------------------------

    def _integrand(self, chi):
        u = 0.5 * chi[:, None] * (self.qv[None, :] + 1.0)
        diff = u[:, :, None] - self.nodes[None, None, :]
        if self.kappa == 2.0:
            powers = diff * diff
        elif self.kappa == 1.0:
            powers = np.abs(diff)
        else:
            powers = np.abs(diff) ** self.kappa
        return powers, 0.5 * chi[:, None] * self.qw[None, :]

    def kernel_pieces(self, rho):
        """Grid factor, its jitter, and ``G = K @ L^-T`` at the current ages."""
        if self._cache_rho is not None and self._cache_rho[0] == rho:
            return self._cache_rho[1]
        cmat = np.exp(math.log(rho) * self._grid_powers)
        cmat[self._diag] += JITTER_START
        factor, info = lapack.dpotrf(cmat, lower=1, clean=1)
        jit = JITTER_START
        if info != 0:
            factor, jit = jitter_cholesky(rate_cov_matrix(KernelParams(rho=rho, kappa=self.kappa), self.nodes),
                                          jitter=JITTER_START)
        buf = self._buf
        np.multiply(self._powers, math.log(rho), out=buf)
        np.exp(buf, out=buf)
        k = (self._sw[:, None, :] @ buf)[:, 0, :]
        if k.shape[0]:
            design, _ = lapack.dtrtrs(factor, k.T, lower=1)
            design = design.T
        else:
            design = k
        out = (factor, jit, design)
        self._cache_rho = (rho, out)
        self._cache_gram = None
        return out

    def gram(self, rho, tau2):
        key = (rho, tau2)
        if self._cache_gram is not None and self._cache_gram[0] == key:
            return self._cache_gram[1]
        _, _, design = self.kernel_pieces(rho)
        g = _gram(design, self.level_target(self.chi), self.sy2 + tau2)
        self._cache_gram = (key, g)
        return g

    def set_chi(self, chi):
        self.chi = chi
        self._powers, self._sw = self._integrand(chi)
        self._buf = np.empty_like(self._powers)
        self._cache_rho = None
        self._cache_gram = None

    def h_at(self, chi_sub, coef, rho):
        """Integrated process at arbitrary ages given ``coef = C^-1 w``."""
        powers, sw = self._integrand(chi_sub)
        np.multiply(powers, math.log(rho), out=powers)
        np.exp(powers, out=powers)
        return (sw[:, None, :] @ powers)[:, 0, :] @ coef

    # -- densities ---------------------------------------------------------

    def level_target(self, chi):
        """GIA-corrected level re-referenced to the latent ages."""
        return self.level_obs + self.g * (self.x_obs - self.p.axis.to_years(chi))

    def collapsed_loglik(self, rho, tau2, ups2):
        _, _, ll = _conditional_from_gram(self.gram(rho, tau2), ups2, self.priors.alpha_sd)
        return ll

    def log_posterior(self, s):
        """Joint log density in the ``(alpha, w)`` parameterisation."""
        pri = self.priors
        factor, _, design = self.kernel_pieces(s["rho"])
        ups2 = s["upsilon2"]
        h = math.sqrt(ups2) * design @ s["u"]
        var = self.sy2 + s["tau2"]
        r = self.level_target(self.chi) - s["alpha"] - h
        ll = -0.5 * np.sum(LOG_2PI + np.log(var) + r**2 / var)
        if self.unc_idx.size:
            sx2 = self.sx[self.unc] ** 2
            ra = self.x_obs[self.unc] - self.p.axis.to_years(self.chi[self.unc])
            ll += -0.5 * np.sum(LOG_2PI + np.log(sx2) + ra**2 / sx2)
        m = self.nodes.size
        lp = (log_beta_pdf(s["rho"], *pri.rho) + log_gamma_pdf(s["tau2"], *pri.tau2)
              + log_gamma_pdf(ups2, *pri.upsilon2)
              - 0.5 * (LOG_2PI + 2 * math.log(pri.alpha_sd) + (s["alpha"] / pri.alpha_sd) ** 2)
              - 0.5 * (m * (LOG_2PI + math.log(ups2)) + 2 * np.sum(np.log(np.diag(factor))) + s["u"] @ s["u"])
              - self.unc_idx.size * math.log(self.span))
        return float(ll + lp), h


def _lbeta(x, a, b):
    if not 0.0 < x < 1.0:
        return -math.inf
    return (a - 1) * math.log(x) + (b - 1) * math.log1p(-x) - (math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))


def _lgamma_pdf(x, shape, rate):
    if not x > 0.0:
        return -math.inf
    return shape * math.log(rate) - math.lgamma(shape) + (shape - 1) * math.log(x) - rate * x


def _initial_state(priors: Priors, m: int, rng: np.random.Generator) -> dict:
    rho = float(np.clip(rng.beta(*priors.rho), 1e-3, 1 - 1e-3))
    return {
        "rho": rho,
        "tau2": float(max(rng.gamma(priors.tau2[0], 1.0 / priors.tau2[1]), 1e-8)),
        "upsilon2": float(rng.gamma(priors.upsilon2[0], 1.0 / priors.upsilon2[1])),
        "alpha": 0.0,
        "u": rng.standard_normal(m),
    }


def run_chain(problem: Problem, priors: Priors | None = None, config: ChainConfig | None = None,
              chain: int = 0, rng: np.random.Generator | None = None, init: dict | None = None) -> ChainOutput:
    """Run one chain and return its stored draws.

    The random stream for chain ``c`` is spawned from ``config.seed``, so a
    given ``(problem, priors, config, chain)`` always gives identical output.
    The start is a prior draw unless ``init`` supplies ``rho``, ``tau2`` and
    ``upsilon2`` (and optionally ``chis``, internal latent ages).
    """
    priors = priors or Priors()
    config = config or ChainConfig()
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(chain + 1)[chain])
    st = _Chain(problem, priors, rng)
    m = problem.grid.m
    n = problem.n
    s = _initial_state(priors, m, rng)
    if init is not None:
        s.update({k: float(init[k]) for k in ("rho", "tau2", "upsilon2")})
        if init.get("chis") is not None:
            chi = np.array(init["chis"], dtype=float)
            if chi.shape != (n,) or np.any(~problem.grid.contains(chi)):
                raise ParameterDomainError("initial latent ages must match the data and lie in the grid")
            st.set_chi(np.where(st.unc, chi, st.chi))

    widths = {"rho": 0.2, "tau2": 2.0, "upsilon2": 1.0}
    window = {k: [] for k in widths}
    chi_width = np.where(st.unc, 2.0 * st.sx / problem.axis.scale, 1.0)
    chi_width = np.minimum(chi_width, st.span)
    accept = {k: [0, 0] for k in ("rho", "tau2", "upsilon2", "linear", "linear_fallback", "chi")}

    nd = config.n_draws
    out = {
        "rho": np.empty(nd), "tau2": np.empty(nd), "upsilon2": np.empty(nd), "alpha": np.empty(nd),
        "w": np.empty((nd, m)), "chis": np.empty((nd, n)), "h": np.empty((nd, n)),
        "logpost": np.empty(nd), "jitter": np.empty(nd),
    }
    pri = priors
    k_store = 0

    def lp_rho(r):
        if not 0.0 < r < 1.0:
            return -np.inf
        return _lbeta(r, *pri.rho) + st.collapsed_loglik(r, s["tau2"], s["upsilon2"])

    def lp_log_tau2(lt):
        t = math.exp(lt)
        if t <= 0.0:
            return -np.inf
        return _lgamma_pdf(t, *pri.tau2) + lt + st.collapsed_loglik(s["rho"], t, s["upsilon2"])

    def lp_log_ups2(lv):
        v = math.exp(lv)
        if v <= 0.0:
            return -np.inf
        return _lgamma_pdf(v, *pri.upsilon2) + lv + st.collapsed_loglik(s["rho"], s["tau2"], v)

    for it in range(config.n_iterations):
        try:
            # hyperparameters, (alpha, w) integrated out
            r, _, ok = slice_sample(s["rho"], lp_rho, rng, widths["rho"], 0.0, 1.0)
            accept["rho"][0 if ok else 1] += 1
            s["rho"] = r
            lt, _, ok = slice_sample(math.log(s["tau2"]), lp_log_tau2, rng, widths["tau2"])
            accept["tau2"][0 if ok else 1] += 1
            s["tau2"] = math.exp(lt)
            lv, _, ok = slice_sample(math.log(s["upsilon2"]), lp_log_ups2, rng, widths["upsilon2"])
            accept["upsilon2"][0 if ok else 1] += 1
            s["upsilon2"] = math.exp(lv)

            # (alpha, u) exactly from the full conditional
            _, _, design = st.kernel_pieces(s["rho"])
            target = st.level_target(st.chi)
            var = st.sy2 + s["tau2"]
            try:
                mean, pfac, _ = _conditional_from_gram(st.gram(s["rho"], s["tau2"]), s["upsilon2"], pri.alpha_sd)
                s["alpha"], s["u"] = _draw_beta(mean, pfac, rng)
                accept["linear"][0] += 1
            except ConditioningError:
                sc = math.sqrt(s["upsilon2"])

                def ll_u(u):
                    res = target - s["alpha"] - sc * design @ u
                    return float(-0.5 * np.sum(res**2 / var))

                s["u"], ok = _elliptical_slice(s["u"], ll_u, rng)
                accept["linear_fallback"][0 if ok else 1] += 1
                accept["linear"][1] += 1

            # latent ages
            if st.unc_idx.size:
                factor, _, _ = st.kernel_pieces(s["rho"])
                coef = math.sqrt(s["upsilon2"]) * linalg.solve_triangular(factor, s["u"], lower=True, trans="T")
                ui = st.unc_idx
                xo, lo, g = st.x_obs[ui], st.level_obs[ui], st.g[ui]
                sx2, vv = st.sx[ui] ** 2, var[ui]
                axis = problem.axis

                def lp_chi(c, idx):
                    years = axis.to_years(c)
                    h = st.h_at(c, coef, s["rho"])
                    lev = lo[idx] + g[idx] * (xo[idx] - years)
                    return -0.5 * ((xo[idx] - years) ** 2 / sx2[idx] + (lev - s["alpha"] - h) ** 2 / vv[idx])

                new, _, ok = slice_sample_vector(st.chi[ui], lp_chi, rng, chi_width[ui],
                                                 problem.grid.lower, problem.grid.upper)
                chi = st.chi.copy()
                chi[ui] = new
                st.set_chi(chi)
                accept["chi"][0] += int(ok.sum())
                accept["chi"][1] += int((~ok).sum())
        except ConditioningError as exc:
            raise ConditioningError(f"chain {chain}, iteration {it}: {exc}") from exc

        # slice-width adaptation, burn-in only
        if it < config.burn_in:
            window["rho"].append(s["rho"])
            window["tau2"].append(math.log(s["tau2"]))
            window["upsilon2"].append(math.log(s["upsilon2"]))
            if (it + 1) % config.adapt_window == 0:
                for key, vals in window.items():
                    sd = float(np.std(vals))
                    if sd > 0:
                        widths[key] = float(np.clip(3.0 * sd, 1e-4, 1.0 if key == "rho" else 10.0))
                    vals.clear()

        if it >= config.burn_in and (it - config.burn_in + 1) % config.thin == 0 and k_store < nd:
            factor, jit, _ = st.kernel_pieces(s["rho"])
            lp, h = st.log_posterior(s)
            if not np.isfinite(lp):
                raise SamplerError(f"chain {chain}, iteration {it}: non-finite log posterior; state={s!r}, "
                                   f"chi={st.chi!r}")
            out["rho"][k_store] = s["rho"]
            out["tau2"][k_store] = s["tau2"]
            out["upsilon2"][k_store] = s["upsilon2"]
            out["alpha"][k_store] = s["alpha"]
            out["w"][k_store] = math.sqrt(s["upsilon2"]) * factor @ s["u"]
            out["chis"][k_store] = st.chi
            out["h"][k_store] = h
            out["logpost"][k_store] = lp
            out["jitter"][k_store] = jit
            k_store += 1

    logger.debug("chain %d acceptance %s", chain, accept)
    return ChainOutput(problem=problem, config=config, chain=chain, accept=accept, **out)


def run_chains(problem: Problem, priors: Priors | None = None, config: ChainConfig | None = None,
               n_jobs: int = 1) -> list[ChainOutput]:
    """Run ``config.n_chains`` independent chains, optionally in worker processes."""
    config = config or ChainConfig()
    if n_jobs == 1 or config.n_chains == 1:
        return [run_chain(problem, priors, config, c) for c in range(config.n_chains)]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(delayed(run_chain)(problem, priors, config, c) for c in range(config.n_chains))
