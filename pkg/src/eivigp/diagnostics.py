"""Convergence diagnostics for scalar MCMC traces."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.linalg import solve_toeplitz

from .kernel import ParameterDomainError

__all__ = ["spectrum0", "geweke", "gelman_rubin", "effective_sample_size", "autocorrelation"]


def autocorrelation(x) -> np.ndarray:
    """Sample autocorrelation at all lags (FFT based, biased normalisation)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    if acov[0] <= 0:
        return np.zeros(n)
    return acov / acov[0]


def spectrum0(x, max_order: int | None = None) -> float:
    """Spectral density at frequency zero from an AR fit with AIC order choice.

    Returns the long-run variance, so ``spectrum0(x) / len(x)`` estimates the
    variance of the sample mean.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    acov = np.array([xc[: n - k] @ xc[k:] / n for k in range((max_order or min(n - 1, int(10 * np.log10(n)))) + 1)])
    if acov[0] <= 0:
        return 0.0
    best_aic, best = n * np.log(acov[0]), (np.zeros(0), acov[0])
    for p in range(1, acov.size):
        try:
            phi = solve_toeplitz(acov[:p], acov[1 : p + 1])
        except np.linalg.LinAlgError:
            break
        sigma2 = acov[0] - phi @ acov[1 : p + 1]
        if sigma2 <= 0:
            break
        aic = n * np.log(sigma2) + 2 * p
        if aic < best_aic:
            best_aic, best = aic, (phi, sigma2)
    phi, sigma2 = best
    return float(sigma2 / (1.0 - phi.sum()) ** 2)


def geweke(x, frac_first: float = 0.1, frac_last: float = 0.5) -> float:
    """Geweke z-score comparing the means of the start and end of a chain.

    Returns ``nan`` when either segment has zero variance.
    """
    x = np.asarray(x, dtype=float)
    if x.size < 100:
        raise ParameterDomainError("geweke needs at least 100 values")
    if not (0 < frac_first < 1 and 0 < frac_last < 1 and frac_first + frac_last <= 1):
        raise ParameterDomainError("segment fractions must be in (0, 1) and sum to at most 1")
    n = x.size
    a = x[: int(frac_first * n)]
    b = x[n - int(frac_last * n):]
    va = spectrum0(a) / a.size
    vb = spectrum0(b) / b.size
    if va + vb <= 0:
        return float("nan")
    return float((a.mean() - b.mean()) / np.sqrt(va + vb))


def gelman_rubin(chains: Sequence) -> float:
    """Potential scale reduction factor for two or more equal-length chains."""
    arr = np.asarray([np.asarray(c, dtype=float) for c in chains])
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ParameterDomainError("gelman_rubin needs at least two chains")
    k, n = arr.shape
    if n < 10:
        raise ParameterDomainError("gelman_rubin needs chains of length >= 10")
    means = arr.mean(axis=1)
    w = arr.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    if w <= 0:
        return float("nan") if b > 0 else 1.0
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def effective_sample_size(x) -> float:
    """Effective sample size with Geyer's initial positive sequence truncation."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 10:
        raise ParameterDomainError("effective_sample_size needs at least 10 values")
    if np.ptp(x) == 0:
        return 1.0
    rho = autocorrelation(x)
    total = 0.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        total += pair
    # total = rho_0 + 2 * sum_{k>=1} rho_k would double count rho_0
    tau = 2.0 * total - 1.0
    return float(min(n / max(tau, 1e-12), n * np.log10(n)))
