import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("lab", max_examples=25, deadline=None, derandomize=True)
settings.load_profile("lab")

J_STD = np.array([[0.0, -1.0], [1.0, 0.0]], dtype=np.complex128)
SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128)
SZ = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=np.complex128)


def random_complex(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def dirac():
    """The selfadjoint test collar: J standard, Γ = −iσ_z, V = 0.7σ_x, ℓ = 1."""
    from collarlab.collar import constant_collar

    return constant_collar(1.0, 4, 2, J_STD, -1j * SZ, 0.7 * SX, grid_points=65, selfadjoint=True)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
