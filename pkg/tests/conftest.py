import numpy as np
import pytest

from consrom.fem import assemble_operators
from consrom.fom import SINES_2D, generate_snapshots
from consrom.mesh import structured_unit_square
from consrom.numerics import Rng
from consrom.tree import build_averaged


@pytest.fixture(scope="session")
def mesh8():
    return structured_unit_square(8)


@pytest.fixture(scope="session")
def ops8(mesh8):
    return assemble_operators(mesh8)


@pytest.fixture(scope="session")
def mesh16():
    return structured_unit_square(16)


@pytest.fixture(scope="session")
def ops16(mesh16):
    return assemble_operators(mesh16)


@pytest.fixture(scope="session")
def solver8(ops8):
    return build_averaged(ops8, Rng(5), 3)


@pytest.fixture(scope="session")
def sines8(ops8):
    return generate_snapshots(SINES_2D, ops8, Rng(11), 12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
