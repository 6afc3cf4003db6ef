import numpy as np
import pytest

from src.application.uses_cases.surrogate.surrogate_service import init_network
from src.domain.models import InitScheme
from src.domain.state import NetworkShape


@pytest.fixture
def output_dir(tmp_path, monkeypatch):
    """Results root for one test, installed through the environment override."""
    root = tmp_path / "results"
    monkeypatch.setenv("NEURALBO_OUTPUT_DIR", str(root))
    return root


@pytest.fixture
def make_net():
    def factory(d=3, depth=2, width=8, seed=0, scheme=InitScheme.EXPERIMENT):
        return init_network(NetworkShape(d, depth, width), seed, scheme)
    return factory


def unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    X = rng.standard_normal((n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


@pytest.fixture
def unit_points():
    return unit_rows
