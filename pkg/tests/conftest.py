import numpy as np
import pytest

from eivigp.model import ObservationRecord

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def linear_records(rate_mm=1.7, n=40, start=1000.0, span=800.0, level_sd=0.002, age_sd=0.0, seed=0,
                   noise=None):
    """Records from an exact linear trend, optionally with noisy levels."""
    rng = np.random.default_rng(seed)
    ages = np.linspace(start, start + span, n)
    levels = 0.3 + rate_mm / 1000.0 * (ages - start)
    if noise:
        levels = levels + noise * rng.standard_normal(n)
    return [ObservationRecord(level=float(y), level_sd=level_sd, age=float(x), age_sd=age_sd)
            for x, y in zip(ages, levels)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
