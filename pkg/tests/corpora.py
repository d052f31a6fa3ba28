"""Instance generators shared by the unit and acceptance tests."""

import numpy as np

from overlapnet import optimizer as opt
from overlapnet.market import make_market
from overlapnet.synthetic import SyntheticSpec, synthetic_market

# (K, N, equal returns): degrees of freedom 2, 2, 1, 2
ORACLE_SHAPES = [(2, 3, True), (3, 2, False), (2, 2, True), (3, 2, True)]


def small_instance(rng, K, N, equal_returns):
    """Random QCQP with lognormal holdings and a random positive definite covariance."""
    V = rng.lognormal(0.0, 1.0, (K, N)) + 1e-2
    D = rng.lognormal(0.0, 1.0, K) * V.sum(axis=1)
    E = V.sum(axis=0) * rng.uniform(0.05, 0.3, N)
    r = np.full(K, 0.03) if equal_returns else rng.uniform(0.01, 0.05, K)
    L = rng.standard_normal((K, K)) * 0.1
    Q = L @ L.T + np.diag(rng.uniform(0.01, 0.05, K))
    market = make_market(V, E, D, expected_returns=r)
    return market, opt.build_qcqp(market, r, Q)


def oracle_corpus(n=24, seed=7):
    """``n`` instances with at most two degrees of freedom."""
    rng = np.random.default_rng(seed)
    out = []
    for j in range(n):
        K, N, eq = ORACLE_SHAPES[j % len(ORACLE_SHAPES)]
        out.append(small_instance(rng, K, N, eq))
    return out


def full_scale_market(seed):
    """Synthetic market with 36 bonds and 49 banks."""
    return synthetic_market(SyntheticSpec(), seed)


def triple_sum_objective(market, y):
    """Total direct impact written out as an explicit triple loop."""
    K, N = market.K, market.N
    X = np.asarray(y).reshape(K, N, order="F")
    V = market.holdings.sum(axis=0)
    v = V / V.sum()
    E = market.equities
    D = market.depths
    total = 0.0
    for i in range(N):
        for j in range(N):
            for k in range(K):
                total += v[j] / E[j] * X[k, i] * X[k, j] / D[k]
    return total
