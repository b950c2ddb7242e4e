import sys

import numpy as np
import pytest

from tedmd.data import Episode
from tedmd.lifting import LiftingConfig


def identity_lifting(n, m):
    return LiftingConfig(state_dim=n, input_dim=m, monomial_degree=1)


def random_stable(n, rng, radius=0.9):
    """Random ``n x n`` matrix with spectral radius ``radius``."""
    A = rng.standard_normal((n, n))
    return A * radius / np.max(np.abs(np.linalg.eigvals(A)))


def multisine(q, m, rng, n_harmonics=7):
    t = np.arange(q)
    u = np.zeros((q, m))
    for j in range(m):
        for h in range(1, n_harmonics + 1):
            u[:, j] += np.sin(2 * np.pi * h * t / 97 + rng.uniform(0, 2 * np.pi))
    return u


def linear_episode(A, B, q, rng, ep_id=0, x0=None):
    """Noiseless episode of ``x_{k+1} = A x_k + B u_k`` with ``q`` steps."""
    n, m = B.shape
    u = multisine(q + 1, m, rng)
    x = np.zeros((q + 1, n))
    x[0] = rng.standard_normal(n) if x0 is None else x0
    for k in range(q):
        x[k + 1] = A @ x[k] + B @ u[k]
    return Episode(id=ep_id, dt=1.0, states=x, inputs=u)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get('test_acceptance')
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section('acceptance criteria')
    for line in mod.format_results():
        terminalreporter.write_line(line)
