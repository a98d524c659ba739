import sys
from pathlib import Path

import numpy as np
import pytest

SCRIPTS_DIR = Path(__file__).resolve().parents[1] / "scripts"
if str(SCRIPTS_DIR) not in sys.path:
    sys.path.insert(0, str(SCRIPTS_DIR))

from scenarios import load_scenario  # noqa: E402
from settings import DEFAULTS  # noqa: E402

SEED = 20240613


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


@pytest.fixture
def config():
    return dict(DEFAULTS)


@pytest.fixture(scope="session")
def bell8():
    return load_scenario("bell-impurity", {"L": 8})


@pytest.fixture(scope="session")
def bell10():
    return load_scenario("bell-impurity", {"L": 10})


@pytest.fixture(scope="session")
def bell12():
    return load_scenario("bell-impurity")


@pytest.fixture(scope="session")
def ising8():
    return load_scenario("ising-ltqo-fail", {"L": 8})


@pytest.fixture(scope="session")
def cluster():
    return load_scenario("cluster-chain")


def random_hermitian(rng, dim):
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return 0.5 * (g + g.conj().T)


def random_unitary(rng, dim):
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(g)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_vector(rng, dim):
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)
