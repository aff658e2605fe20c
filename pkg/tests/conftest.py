import numpy as np
import pytest

from dynrecon.generator import generator_from_geometry


def tiny_generator(seed=0, latent_dim=2, dtype=np.float64):
    """Three-layer generator producing 8x8 images, small enough for finite differences."""
    geometry = [
        (latent_dim, 6, 2, 1, 0),   # 1 -> 2
        (6, 4, 4, 2, 1),            # 2 -> 4
        (4, 2, 4, 2, 1),            # 4 -> 8
    ]
    return generator_from_geometry(geometry, latent_dim, seed=seed, dtype=dtype)


def rel_err(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.linalg.norm((a - b).ravel()) / max(np.linalg.norm(b.ravel()), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance results, printed together at the end of the run
ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
