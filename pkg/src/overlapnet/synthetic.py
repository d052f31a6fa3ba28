"""Synthetic bank/sovereign-bond markets with realistic texture.

Banks are heavily home-biased: each one holds a large position in its
domestic bond and smaller positions in a random subset of foreign bonds.
Portfolio sizes are lognormal, leverage is drawn from a typical range and
bonds make up only part of each balance sheet.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market import DEFAULT_DEPTH_SCALE, Asset, Bank, BipartiteMarket


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for :func:`synthetic_market`.

    ``density`` is the target share of nonzero holdings; ``depth_ratio``
    is the median ratio of an asset's market depth to its outstanding
    volume.
    """

    n_assets: int = 36
    n_banks: int = 49
    density: float = 0.51
    home_share: float = 0.5
    portfolio_median: float = 2e10
    portfolio_sigma: float = 1.2
    leverage_range: tuple[float, float] = (10.0, 30.0)
    bond_share_range: tuple[float, float] = (0.03, 0.47)
    depth_ratio: float = 5.0
    depth_sigma: float = 1.0
    return_range: tuple[float, float] = (0.0, 0.04)
    volatility_range: tuple[float, float] = (0.003, 0.02)
    n_factors: int = 2
    depth_scale: float = DEFAULT_DEPTH_SCALE


@dataclass(frozen=True, eq=False)
class SyntheticMarket:
    market: BipartiteMarket
    returns: np.ndarray
    covariance: np.ndarray


def _holdings(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    K, N = spec.n_assets, spec.n_banks
    home = np.arange(N) % K
    rng.shuffle(home)
    # foreign links per bank so that the overall density hits the target
    extra = max(spec.density * K * N - N, 0.0) / N
    p_link = min(extra / max(K - 1, 1), 1.0)
    # bigger assets attract more foreign holders
    popularity = rng.lognormal(0.0, 1.0, K)
    weights = np.zeros((K, N))
    for i in range(N):
        others = np.delete(np.arange(K), home[i])
        n_foreign = rng.binomial(K - 1, p_link)
        p = popularity[others] / popularity[others].sum()
        chosen = rng.choice(others, size=n_foreign, replace=False, p=p)
        if chosen.size:
            w = rng.lognormal(0.0, 1.0, chosen.size)
            weights[chosen, i] = (1.0 - spec.home_share) * w / w.sum()
            weights[home[i], i] = spec.home_share
        else:
            weights[home[i], i] = 1.0
    totals = spec.portfolio_median * rng.lognormal(0.0, spec.portfolio_sigma, N)
    return weights * totals[None, :]


def _covariance(spec: SyntheticSpec, vol: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    K = vol.size
    B = rng.normal(0.0, 1.0, (K, spec.n_factors))
    C = B @ B.T + np.diag(rng.uniform(0.5, 1.5, K))
    d = np.sqrt(np.diag(C))
    corr = C / np.outer(d, d)
    return corr * np.outer(vol, vol)


def synthetic_market(spec: SyntheticSpec | None = None, seed: int = 0) -> SyntheticMarket:
    """Draw a market with returns and a positive definite covariance."""
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(seed)
    V = _holdings(spec, rng)
    K, N = V.shape
    S = V.sum(axis=1)
    Vt = V.sum(axis=0)

    vol = rng.uniform(*spec.volatility_range, K)
    depth = spec.depth_ratio * S * rng.lognormal(0.0, spec.depth_sigma, K)
    adv = depth * vol / spec.depth_scale
    returns = rng.uniform(*spec.return_range, K)
    # period volatility for the mean-variance constraints, annualized from daily
    cov = _covariance(spec, vol * np.sqrt(250.0), rng)

    bond_share = rng.uniform(*spec.bond_share_range, N)
    total_assets = Vt / bond_share
    leverage = rng.uniform(*spec.leverage_range, N)
    equity = total_assets / leverage
    other = total_assets - Vt

    assets = [
        Asset(id=f"BOND{k + 1:02d}", adv=float(adv[k]), volatility=float(vol[k]), expected_return=float(returns[k]))
        for k in range(K)
    ]
    banks = [Bank(id=f"BANK{i + 1:02d}", equity=float(equity[i]), other_assets=float(other[i])) for i in range(N)]
    market = BipartiteMarket(assets, banks, V, depth_scale=spec.depth_scale)
    return SyntheticMarket(market=market, returns=returns, covariance=cov)
