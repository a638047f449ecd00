import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from uqcodec.density import LogisticDensity  # noqa: E402
from uqcodec.training import RdConfig, train  # noqa: E402

from corpus import crops  # noqa: E402


@pytest.fixture
def logistic():
    return LogisticDensity(0.0, 1.0)


@pytest.fixture(scope="session")
def small_corpus():
    return [img for _, img in crops(12, size=96, seed=5)]


@pytest.fixture(scope="session")
def trained_model(small_corpus):
    """A briefly trained C=16 UN+UQ model (frozen)."""
    config = RdConfig(lam=0.01, channels=16, steps=300, seed=3, learning_rate=3e-3)
    model, _ = train(small_corpus, config)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.acceptance_lines = {}


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
