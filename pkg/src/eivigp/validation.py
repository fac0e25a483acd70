"""Model validation: simulated-scenario coverage and k-fold cross-validation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import stats

from .kernel import (
    Grid,
    KernelParams,
    ParameterDomainError,
    QuadratureRule,
    jitter_cholesky,
    rate_cov,
    rate_cov_matrix,
    JITTER_START,
)
from .model import ObservationRecord, Priors, level_projection
from .posterior import predict_observations, rate_paths
from .sampler import ChainConfig, Problem, run_chain, run_chains

__all__ = [
    "interval_score",
    "Design",
    "ScenarioSpec",
    "SCENARIOS",
    "SCENARIO_PRIORS",
    "SimulatedDataset",
    "ScenarioResult",
    "CvResult",
    "LsrPrediction",
    "gamma_from_moments",
    "beta_from_moments",
    "simulate_dataset",
    "run_scenario",
    "fold_indices",
    "kfold_cv",
    "lsr_baseline",
]

logger = logging.getLogger(__name__)


def interval_score(l, u, x, alpha: float = 0.05):
    """Interval score of the central ``(1 - alpha)`` interval ``[l, u]`` for outcome ``x``.

    Lower is better: the width plus ``2 / alpha`` times the distance by which
    ``x`` falls outside the interval.
    """
    l, u, x = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (l, u, x)))
    if np.any(l > u):
        raise ParameterDomainError("interval lower bound exceeds upper bound")
    if not 0 < alpha < 1:
        raise ParameterDomainError("alpha must lie in (0, 1)")
    score = (u - l) + 2.0 / alpha * (l - x) * (x < l) + 2.0 / alpha * (x - u) * (x > u)
    return float(score) if score.ndim == 0 else score


# ---------------------------------------------------------------------------
# simulated scenarios
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Design:
    """Observation layout for simulated data.

    ``noise_sd`` is the standard deviation actually used to perturb the
    levels; ``level_sd`` is the error reported with each record.
    """

    n_obs: int = 100
    start_year: float = 0.0
    span_years: float = 2000.0
    level_sd: float = 0.05
    noise_sd: float | None = None
    alpha: float = 0.0
    m_truth: int = 100
    m_fit: int = 50
    n_eval: int = 50
    kappa: float = 2.0
    quad_order: int = 30

    @property
    def ages(self) -> np.ndarray:
        return np.linspace(self.start_year, self.start_year + self.span_years, self.n_obs)

    @property
    def eval_years(self) -> np.ndarray:
        return np.linspace(self.start_year, self.start_year + self.span_years, self.n_eval)


@dataclass(frozen=True)
class ScenarioSpec:
    """Means and variances of the simulated rate variance and correlation parameter."""

    name: str
    sigma_g2_mean: float
    sigma_g2_var: float
    rho_mean: float
    rho_var: float
    n_sims: int = 200
    design: Design = field(default_factory=Design)
    seed: int = 0

    def __post_init__(self):
        if min(self.sigma_g2_mean, self.sigma_g2_var, self.rho_mean, self.rho_var) <= 0:
            raise ParameterDomainError("scenario means and variances must be positive")
        if self.rho_var >= self.rho_mean * (1 - self.rho_mean):
            raise ParameterDomainError("rho variance too large for a beta distribution with that mean")


SCENARIOS: dict[str, ScenarioSpec] = {
    "a": ScenarioSpec("a", 1.0, 0.1, 0.2, 0.01),
    "b": ScenarioSpec("b", 2.0, 0.1, 0.2, 0.01),
    "c": ScenarioSpec("c", 0.5, 0.1, 0.1, 0.01),
    "d": ScenarioSpec("d", 1.0, 0.5, 0.2, 0.1),
    "e": ScenarioSpec("e", 1.0, 0.02, 0.2, 0.001),
    "f": ScenarioSpec("f", 2.0, 0.5, 0.4, 0.1),
    "g": ScenarioSpec("g", 0.5, 0.02, 0.1, 0.001),
}

# priors used when fitting simulated data: sigma_g^2 ~ Gamma(10, 10), rho ~ Beta(2, 8)
SCENARIO_PRIORS = Priors(rho=(2.0, 8.0), upsilon2=(10.0, 10.0))


def gamma_from_moments(mean: float, var: float) -> tuple[float, float]:
    """Shape and rate of the gamma distribution with the given mean and variance."""
    return mean**2 / var, mean / var


def beta_from_moments(mean: float, var: float) -> tuple[float, float]:
    """Shape parameters of the beta distribution with the given mean and variance."""
    k = mean * (1 - mean) / var - 1
    if k <= 0:
        raise ParameterDomainError("variance too large for a beta distribution with that mean")
    return mean * k, (1 - mean) * k


@dataclass(frozen=True)
class SimulatedDataset:
    records: tuple[ObservationRecord, ...]
    eval_years: np.ndarray
    true_rate: np.ndarray
    true_level: np.ndarray
    sigma_g2: float
    rho: float
    truth_grid: Grid
    truth_w: np.ndarray


def simulate_dataset(sigma_g2: float, rho: float, design: Design = Design(), seed=0,
                     w_truth: np.ndarray | None = None) -> SimulatedDataset:
    """Simulate levels from the integrated GP without age errors.

    The rate is drawn on a ``design.m_truth``-node grid, integrated to the
    observation ages and perturbed by Gaussian noise. The true rate at
    ``design.eval_years`` (mm/yr) is returned alongside the records.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    kp = KernelParams(rho=rho, kappa=design.kappa, upsilon2=sigma_g2)
    span = design.span_years / 1000.0
    grid = Grid.uniform(0.0, span, design.m_truth)
    factor, _ = jitter_cholesky(rate_cov_matrix(kp, grid), jitter=JITTER_START)
    if w_truth is None:
        w_truth = np.sqrt(sigma_g2) * factor @ rng.standard_normal(grid.m)
    w_truth = np.asarray(w_truth, dtype=float)
    quad = QuadratureRule(design.quad_order)
    t_obs = (design.ages - design.start_year) / 1000.0
    h = level_projection(kp, t_obs, grid, quad, factor) @ w_truth
    noise_sd = design.level_sd if design.noise_sd is None else design.noise_sd
    levels = design.alpha + h + noise_sd * rng.standard_normal(t_obs.size)
    records = tuple(ObservationRecord(level=float(y), level_sd=design.level_sd, age=float(x), age_sd=0.0)
                    for y, x in zip(levels, design.ages))
    t_eval = (design.eval_years - design.start_year) / 1000.0
    coef = np.linalg.solve(factor.T, np.linalg.solve(factor, w_truth))
    true_rate = rate_cov(kp, t_eval[:, None] - grid.nodes[None, :]) @ coef
    true_level = design.alpha + level_projection(kp, t_eval, grid, quad, factor) @ w_truth
    return SimulatedDataset(records, design.eval_years, true_rate, true_level, sigma_g2, rho, grid, w_truth)


@dataclass(frozen=True)
class ScenarioResult:
    name: str
    coverage95: float
    coverage68: float
    n_sims: int
    n_failed: int
    per_sim95: np.ndarray
    per_sim68: np.ndarray

    @staticmethod
    def _se(x: np.ndarray) -> float:
        return float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else float("nan")

    @property
    def mc_se95(self) -> float:
        """Monte Carlo standard error of ``coverage95``; nan for a single simulation."""
        return self._se(self.per_sim95)

    @property
    def mc_se68(self) -> float:
        return self._se(self.per_sim68)


SCENARIO_CHAIN = ChainConfig(n_iterations=1000, burn_in=200, thin=2, n_chains=1)


def _one_simulation(spec: ScenarioSpec, index: int, config: ChainConfig, priors: Priors):
    ss = np.random.SeedSequence([spec.seed, index])
    rng = np.random.default_rng(ss)
    g_shape, g_rate = gamma_from_moments(spec.sigma_g2_mean, spec.sigma_g2_var)
    b_a, b_b = beta_from_moments(spec.rho_mean, spec.rho_var)
    sigma_g2 = float(rng.gamma(g_shape, 1.0 / g_rate))
    # beta draws with tiny shapes can round to exactly 0 or 1
    rho = float(np.clip(rng.beta(b_a, b_b), 1e-12, 1 - 1e-9))
    sim = simulate_dataset(sigma_g2, rho, spec.design, rng)
    d = spec.design
    problem = Problem.from_records(sim.records, mode="sigp", m=d.m_fit, quad_order=d.quad_order, kappa=d.kappa)
    cfg = replace(config, seed=int(ss.generate_state(1)[0]))
    chains = run_chains(problem, priors, cfg)
    paths = rate_paths(chains, sim.eval_years)
    q = np.quantile(paths, [0.025, 0.16, 0.84, 0.975], axis=0)
    cov95 = np.mean((sim.true_rate >= q[0]) & (sim.true_rate <= q[3]))
    cov68 = np.mean((sim.true_rate >= q[1]) & (sim.true_rate <= q[2]))
    return float(cov95), float(cov68)


def run_scenario(spec: ScenarioSpec, config: ChainConfig = SCENARIO_CHAIN, priors: Priors = SCENARIO_PRIORS,
                 n_jobs: int = 1) -> ScenarioResult:
    """Average pointwise coverage of the true rate by the 95% and 68% bands.

    Each simulation draws ``sigma_g2`` from a moment-matched gamma and ``rho``
    from a moment-matched beta, simulates a dataset and fits it. Simulations
    that raise are counted in ``n_failed`` and excluded.
    """
    if spec.n_sims < 1:
        raise ParameterDomainError("n_sims must be at least 1")

    def job(i):
        try:
            return _one_simulation(spec, i, config, priors)
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            logger.warning("scenario %s simulation %d failed: %s", spec.name, i, exc)
            return None

    if n_jobs == 1:
        results = [job(i) for i in range(spec.n_sims)]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(job)(i) for i in range(spec.n_sims))
    ok = [r for r in results if r is not None]
    if not ok:
        raise RuntimeError(f"every simulation in scenario {spec.name} failed")
    c95 = np.array([r[0] for r in ok])
    c68 = np.array([r[1] for r in ok])
    return ScenarioResult(spec.name, float(c95.mean()), float(c68.mean()), spec.n_sims,
                          spec.n_sims - len(ok), c95, c68)


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LsrPrediction:
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    coef: np.ndarray
    residuals: np.ndarray


def lsr_baseline(train_x, train_y, predict_x, degree: int = 2, level: float = 0.95) -> LsrPrediction:
    """Ordinary least-squares polynomial fit with frequentist prediction intervals.

    ``coef`` is in increasing powers of the raw ``x``.
    """
    x = np.asarray(train_x, dtype=float)
    y = np.asarray(train_y, dtype=float)
    x0 = np.atleast_1d(np.asarray(predict_x, dtype=float))
    p = degree + 1
    if x.size <= p:
        raise ParameterDomainError(f"need more than {p} points for a degree-{degree} fit")
    centre, scale = x.mean(), max(np.ptp(x) / 2.0, 1e-300)
    design = np.vander((x - centre) / scale, p, increasing=True)
    q, r = np.linalg.qr(design)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-12 * diag.max():
        raise np.linalg.LinAlgError("rank-deficient polynomial design")
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - design @ beta
    dof = x.size - p
    s2 = resid @ resid / dof
    d0 = np.vander((x0 - centre) / scale, p, increasing=True)
    rinv_d0 = np.linalg.solve(r.T, d0.T)
    lev = np.sum(rinv_d0**2, axis=0)
    mean = d0 @ beta
    half = stats.t.ppf(0.5 + level / 2.0, dof) * np.sqrt(s2 * (1.0 + lev))
    poly = np.polynomial.Polynomial(beta, domain=[centre - scale, centre + scale], window=[-1, 1])
    coef = poly.convert().coef
    coef = np.pad(coef, (0, p - coef.size))
    return LsrPrediction(mean, mean - half, mean + half, coef, resid)


@dataclass(frozen=True)
class CvResult:
    model: str
    empirical_coverage: float
    avg_interval_width: float
    avg_interval_score: float
    observed: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    folds: tuple[np.ndarray, ...]


def fold_indices(n: int, k: int = 10, seed: int = 0) -> list[np.ndarray]:
    """Partition a seeded random permutation of ``range(n)`` into ``k`` folds."""
    if not 1 < k <= n:
        raise ParameterDomainError("need 1 < k <= n")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


class FoldError(RuntimeError):
    """A cross-validation fold could not be fitted."""


def kfold_cv(problem: Problem, model: str = "igp", k: int = 10, seed: int = 0,
             config: ChainConfig | None = None, priors: Priors | None = None, n_paths: int = 500,
             lsr_degree: int = 2, alpha: float = 0.05) -> CvResult:
    """k-fold cross-validation of 95% prediction intervals for the GIA-corrected levels.

    ``model`` is ``"igp"`` (the mode of ``problem``) or ``"lsr"``. The grid
    of ``problem`` already covers every record, so held-out ages lie inside
    it. Model intervals are for the held-out observations, so they include
    level noise, ``tau2`` and (in EIV mode) the age error, as the LSR
    prediction intervals do.
    """
    if model not in ("igp", "lsr", "sigp", "eivigp"):
        raise ParameterDomainError(f"unknown model {model!r}")
    if model in ("sigp", "eivigp"):
        problem = replace(problem, mode=model)
        model = "igp"
    folds = fold_indices(problem.n, k, seed)
    ages, levels = problem.ages, problem.levels
    level_sds, gamma_m = problem.level_sds, problem.gamma_m
    age_sds = np.where(problem.uncertain, problem.age_sds, 0.0)
    mean = np.empty(problem.n)
    lower = np.empty(problem.n)
    upper = np.empty(problem.n)
    config = config or ChainConfig()
    for f, test in enumerate(folds):
        train = np.setdiff1d(np.arange(problem.n), test)
        try:
            if model == "lsr":
                pred = lsr_baseline(ages[train], levels[train], ages[test], degree=lsr_degree, level=1 - alpha)
                mean[test], lower[test], upper[test] = pred.mean, pred.lower, pred.upper
            else:
                cfg = replace(config, seed=config.seed + 7919 * (f + 1))
                chains = run_chains(problem.subset(train), priors, cfg)
                pred = predict_observations(chains, ages[test], level_sds[test], age_sds[test], gamma_m[test],
                                            n_paths=n_paths, seed=seed + f)
                mean[test], lower[test], upper[test] = pred.mean, pred.lower, pred.upper
        except Exception as exc:
            raise FoldError(f"fold {f} failed: {exc}") from exc
    inside = (levels >= lower) & (levels <= upper)
    scores = interval_score(lower, upper, levels, alpha)
    name = "lsr" if model == "lsr" else problem.mode
    return CvResult(name, float(inside.mean()), float(np.mean(upper - lower)), float(np.mean(scores)),
                    levels, mean, lower, upper, tuple(folds))
