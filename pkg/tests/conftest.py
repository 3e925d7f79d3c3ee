import numpy as np
import pytest
from hypothesis import settings

from zoomq.env import build_oracle, make_env

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def line_oracle():
    return build_oracle(make_env("line-bandit"), 2.0 ** -8)


@pytest.fixture(scope="session")
def band_oracle():
    return build_oracle(make_env("band-mdp"), 2.0 ** -8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
