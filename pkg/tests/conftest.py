import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pochange import FunctionalDataset, Grid

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def make_dataset(rng, n=8, q=5, p_obs=0.7, grid=None):
    while True:
        mask = rng.random((n, q)) < p_obs
        if mask.any(axis=0).all():
            break
    values = np.where(mask, rng.normal(size=(n, q)), np.nan)
    grid = grid or Grid(np.sort(rng.choice(np.linspace(0, 1, 4 * q), q, replace=False)))
    return FunctionalDataset(grid, mask, values)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def dataset_factory(rng):
    def factory(**kw):
        return make_dataset(rng, **kw)

    return factory


# One line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
