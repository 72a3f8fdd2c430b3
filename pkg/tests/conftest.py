import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from radllr.core import LabeledDataset, RngSeed
from radllr.synthgen import fig1_spec, random_orthogonal_spec, sample

settings.register_profile(
    "default",
    max_examples=30,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def fig1():
    return fig1_spec()


@pytest.fixture(scope="session")
def fig1_small(fig1):
    return sample(fig1, 2000, RngSeed(3, "sample"))


@pytest.fixture(scope="session")
def fig1_std(fig1_small):
    X = fig1_small.features
    return fig1_small.replace(features=(X - X.mean(0)) / X.std(0))


@pytest.fixture(scope="session")
def six_dim():
    spec = random_orthogonal_spec(6, np.random.default_rng(0), 0.1)
    return sample(spec, 1000, RngSeed(4, "sample"))


def toy_dataset(counts, m=2, seed=0):
    """Rows grouped as (y, d) = (0,0), (0,1), (1,0), (1,1) with the given
    counts and random features."""
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 0, 1, 1], counts)
    d = np.repeat([0, 1, 0, 1], counts)
    X = rng.standard_normal((len(y), m)) + y[:, None]
    return LabeledDataset(X, y, d, num_classes=2, num_domains=2)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
