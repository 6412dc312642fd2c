import pathlib
import sys

import numpy as np
import pytest

import tokenadapt.numerics as nx

# shared loop oracles live next to the tests
sys.path.insert(0, str(pathlib.Path(__file__).parent))


@pytest.fixture(params=sorted(nx.available_backends()))
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    monkeypatch.setattr(nx, "_impl", nx.available_backends()[request.param])
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
