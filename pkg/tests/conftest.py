import numpy as np
import pytest

from mudlab.model import SystemConfig, generate_instance, instance_from_arrays


@pytest.fixture(scope="session")
def golden_inst():
    """K=4, N=8, seed 42, 6 dB: the reference instance for frozen values."""
    return generate_instance(SystemConfig(4, 8, 6.0, seed=42), trial=0)


def orthogonal_instance(d, n=None, sigma2=0.25):
    """Two users on orthogonal Walsh codes (R = I)."""
    S = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2.0)
    d = np.asarray(d, dtype=float)
    n = np.zeros((2,) + d.shape[1:]) if n is None else np.asarray(n, dtype=float)
    return instance_from_arrays(S, d, n, sigma2, chips=np.array([[1, 1], [1, -1]]))


def single_user(d=1.0, N=4, noise=None, sigma2=0.25):
    S = np.full((N, 1), 1.0 / np.sqrt(N))
    n = np.zeros(N) if noise is None else np.asarray(noise, dtype=float)
    return instance_from_arrays(S, [d], n, sigma2, chips=np.ones((N, 1)))


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance line: ``verdict(number, passed, detail)``."""
    def record(number, passed, detail):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _VERDICTS.append((number, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
