import dataclasses

import numpy as np
import pytest

from ditcache.model import ModelConfig, init_model

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_weights():
    return init_model(ModelConfig())


@pytest.fixture(scope="session")
def zero_weights():
    return init_model(ModelConfig(weight_scale=0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def with_block(weights, index, **changes):
    """Copy of ``weights`` with fields of block ``index`` (0-based) replaced."""
    blocks = list(weights.blocks)
    blocks[index] = dataclasses.replace(blocks[index], **changes)
    return dataclasses.replace(weights, blocks=tuple(blocks))
