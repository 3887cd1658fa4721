import warnings

import numpy as np
import pytest

from braidmc.lattice import LatticeSpec, ModelSpec, build_interactions, build_lattice
from braidmc.worldlines import Configuration

DIMER_TOML = """
[model]
kind = "nn_chain"
t = 1.0
V = 0.0
mu = 0.0
beta = 2.0

[lattice]
L = 2

[run]
thermalization_sweeps = 50
target_samples = 200
seed = 3

[output]
threshold = 0.0
"""


@pytest.fixture
def chain3():
    return build_lattice(LatticeSpec("chain", 3))


@pytest.fixture
def square4():
    return build_lattice(LatticeSpec("square", 4))


@pytest.fixture
def square2():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_lattice(LatticeSpec("square", 2))


@pytest.fixture
def exchange_config(chain3):
    """Two bosons on a three-site ring that swap places once around imaginary time."""
    config = Configuration(chain3, [1, 1, 0], beta=2.0)
    config.add_kink(0.1, 1, 2)
    config.add_kink(0.2, 0, 1)
    config.add_kink(0.3, 2, 0)
    return config


@pytest.fixture
def chain3_model():
    return ModelSpec("nn_chain", t=1.0, V=1.5, mu=0.3, filling="2/3", beta=2.0)


@pytest.fixture
def chain3_table(chain3):
    return build_interactions(chain3, "nn_chain")


@pytest.fixture
def dimer_toml(tmp_path):
    path = tmp_path / "dimer.toml"
    path.write_text(DIMER_TOML)
    return str(path)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))
