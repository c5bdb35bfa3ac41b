import numpy as np
import pytest

from vidauth.core import AnswerSpace
from vidauth.datagen import DatagenConfig, build_corpus


@pytest.fixture
def space():
    return AnswerSpace()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_binary_corpus():
    return build_corpus(DatagenConfig(n_pairs=40, noise_base=3.0, seed=7))


@pytest.fixture(scope="session")
def small_quality_corpus():
    return build_corpus(DatagenConfig(n_pairs=12, quality_mode=True, seed=3))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for name in sorted(verdicts, key=lambda k: int(k[1:])):
            terminalreporter.write_line(verdicts[name])
