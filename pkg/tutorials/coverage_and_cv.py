"""Checking calibration: simulated coverage and cross-validated interval scores.

The first part simulates a handful of datasets from the integrated GP,
refits them and reports how often the 95% and 68% bands cover the true
rate. The second part runs 5-fold cross-validation on one simulated
dataset and compares the model's prediction intervals with a quadratic
least-squares baseline using the interval score (lower is better).

Run with ``python tutorials/coverage_and_cv.py``. It takes a minute or two.
"""

from dataclasses import replace

from eivigp import ChainConfig, Priors, Problem
from eivigp.validation import SCENARIOS, kfold_cv, run_scenario, simulate_dataset

spec = replace(SCENARIOS["a"], n_sims=10)
res = run_scenario(spec)
print(f"scenario a, {res.n_sims} simulations: coverage95 {res.coverage95:.3f} +- {res.mc_se95:.3f}, "
      f"coverage68 {res.coverage68:.3f} +- {res.mc_se68:.3f}")

sim = simulate_dataset(sigma_g2=1.0, rho=0.2, seed=5)
problem = Problem.from_records(sim.records, mode="sigp", m=30)
config = ChainConfig(n_iterations=1500, burn_in=300, thin=2, n_chains=1)
print("\nmodel   coverage  width (m)  score (m)")
for model in ("lsr", "sigp"):
    cv = kfold_cv(problem, model, k=5, seed=1, config=config, priors=Priors(), n_paths=300)
    print(f"{cv.model:6s}  {cv.empirical_coverage:8.3f}  {cv.avg_interval_width:9.4f}  {cv.avg_interval_score:9.4f}")
