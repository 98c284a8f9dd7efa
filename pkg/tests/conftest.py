import numpy as np
import pytest

from riskpart.data import CATEGORICAL, Covariate, SurvivalDataset


def random_dataset(rng, n=40, p=3, censor=0.3, integer=True, categorical=False, ties=False):
    """Small synthetic dataset; integer covariates so that ties occur."""
    if integer:
        x = rng.integers(1, 11, size=(n, p)).astype(float)
    else:
        x = rng.normal(size=(n, p))
    schema = [Covariate(f"x{j}") for j in range(p)]
    if categorical:
        x = np.column_stack([x, rng.integers(0, 4, size=n)])
        schema.append(Covariate("grp", CATEGORICAL, ("a", "b", "c", "d")))
    t = rng.exponential(1.0 + (x[:, 0] > np.median(x[:, 0])), size=n)
    if ties:
        t = np.ceil(t * 4) / 4
    event = rng.random(n) >= censor
    event[0] = True
    return SurvivalDataset(tuple(schema), x, t, event)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def toy():
    """Eight subjects, two covariates, a clear split on x0."""
    x = np.array([[1, 5], [2, 3], [3, 8], [4, 1], [5, 9], [6, 2], [7, 7], [8, 4]], dtype=float)
    time = np.array([0.5, 0.7, 0.6, 0.9, 4.0, 5.0, 3.5, 4.5])
    event = np.array([1, 1, 0, 1, 1, 0, 1, 1], dtype=bool)
    return SurvivalDataset((Covariate("a"), Covariate("b")), x, time, event)


# PASS/FAIL lines appended by test_acceptance.py, echoed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
