import numpy as np
import pytest
from hypothesis import settings

from overlapnet.market import make_market

settings.register_profile("overlapnet", max_examples=60, deadline=None)
settings.load_profile("overlapnet")


def random_market(rng, K, N, density=0.7, with_returns=False):
    """Small random market; every bank and asset keeps at least one holding."""
    V = rng.uniform(1.0, 100.0, (K, N)) * (rng.random((K, N)) < density)
    for i in range(N):
        if not V[:, i].any():
            V[rng.integers(K), i] = rng.uniform(1.0, 100.0)
    for k in range(K):
        if not V[k].any():
            V[k, rng.integers(N)] = rng.uniform(1.0, 100.0)
    E = rng.uniform(5.0, 60.0, N)
    D = rng.uniform(200.0, 2000.0, K)
    kw = {}
    if with_returns:
        kw["expected_returns"] = rng.uniform(0.0, 0.05, K)
    return make_market(V, E, depths=D, other_assets=rng.uniform(0.0, 500.0, N), **kw)


def random_covariance(rng, K):
    B = rng.normal(size=(K, K))
    return (B @ B.T + K * np.eye(K)) * 1e-4


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_market():
    """K=1, N=2 market with hand-checkable exposures."""
    return make_market([[100.0, 50.0]], [10.0, 10.0], depths=[1000.0])


# criterion number -> (passed, detail), filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
