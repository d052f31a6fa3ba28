"""Network statistics, portfolio concentration, rank agreement and the
market-depth sweep.

Graph statistics on the bank projection ignore self-loops. A pair of banks
is linked when its exposure exceeds a small threshold, which absorbs the
floating-point dust an optimizer can leave behind.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse.csgraph as csgraph
import scipy.stats

from .debtrank import market_debtrank
from .errors import DomainError
from .market import BipartiteMarket, OverlapNetwork


@dataclass(frozen=True)
class NetworkStats:
    density: float
    avg_degree_unweighted: float
    avg_degree_weighted: float
    clustering_unweighted: float
    clustering_weighted: float
    avg_nn_degree_unweighted: float
    avg_nn_degree_weighted: float
    diameter_unweighted: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class BipartiteStats:
    density: float
    avg_bank_degree: float
    avg_asset_degree: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class ConcentrationReport:
    """``per_bank_hhi`` is NaN for banks without holdings; those are listed in ``excluded``."""

    per_bank_hhi: np.ndarray
    mean_hhi: float
    excluded: tuple = ()


@dataclass(frozen=True)
class RankCorrelation:
    spearman_rho: float
    kendall_tau: float

    @property
    def defined(self) -> bool:
        return bool(np.isfinite(self.spearman_rho) and np.isfinite(self.kendall_tau))


@dataclass(frozen=True, eq=False)
class DepthSweep:
    c_values: np.ndarray
    original: np.ndarray
    optimized: np.ndarray | None = None


def bipartite_density(market: BipartiteMarket) -> float:
    """Share of bank-asset pairs with a nonzero holding."""
    if market.K * market.N == 0:
        raise DomainError("empty market")
    return float(np.count_nonzero(market.holdings) / (market.K * market.N))


def bipartite_stats(market: BipartiteMarket) -> BipartiteStats:
    A = market.holdings != 0
    return BipartiteStats(
        density=bipartite_density(market),
        avg_bank_degree=float(A.sum(axis=0).mean()),
        avg_asset_degree=float(A.sum(axis=1).mean()),
    )


def link_threshold(weights: np.ndarray, rel: float = 1e-9) -> float:
    """Default presence threshold: ``rel`` times the mean positive off-diagonal weight."""
    W = np.asarray(weights, dtype=np.float64)
    off = W[~np.eye(W.shape[0], dtype=bool)]
    pos = off[off > 0]
    return float(rel * pos.mean()) if pos.size else 0.0


def _graph(exposure, threshold):
    W = np.array(exposure, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise DomainError(f"exposure must be square, got shape {W.shape}")
    np.fill_diagonal(W, 0.0)
    if threshold is None:
        threshold = link_threshold(W)
    A = W > threshold
    W = np.where(A, W, 0.0)
    return W, A


def barrat_clustering(W: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Per-node weighted clustering; zero for nodes with fewer than two links."""
    Af = A.astype(np.float64)
    k = Af.sum(axis=1)
    s = W.sum(axis=1)
    # by symmetry in j and h the two weight terms contribute equally:
    # sum_{j,h} (w_ij + w_ih) a_ij a_ih a_jh = 2 sum_h a_ih sum_j w_ij a_jh
    closed = (W @ Af) * Af
    num = 2.0 * closed.sum(axis=1)
    den = 2.0 * s * (k - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where((k >= 2) & (s > 0), num / den, 0.0)


def transitivity(A: np.ndarray) -> float:
    """Three times the triangle count over the number of connected triples."""
    Af = A.astype(np.float64)
    k = Af.sum(axis=1)
    triples = float((k * (k - 1)).sum())
    if triples == 0:
        return 0.0
    closed = float(np.trace(Af @ Af @ Af))
    return closed / triples


def diameter(A: np.ndarray) -> float:
    """Longest shortest path in hops; ``inf`` if the graph is disconnected."""
    if A.shape[0] <= 1:
        return 0.0
    D = csgraph.shortest_path(A.astype(np.float64), method="D", unweighted=True, directed=False)
    return float(D.max())


def projection_stats(overlap: OverlapNetwork | np.ndarray, threshold: float | None = None) -> NetworkStats:
    """Statistics of the bank projection (self-loops excluded)."""
    exposure = overlap.exposure if isinstance(overlap, OverlapNetwork) else overlap
    W, A = _graph(exposure, threshold)
    N = W.shape[0]
    if N == 0 or not A.any():
        raise DomainError("empty network: no links between distinct banks")
    k = A.sum(axis=1).astype(np.float64)
    s = W.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        knn_u = np.where(k > 0, (A @ k) / k, 0.0)
        knn_w = np.where(s > 0, (W @ k) / s, 0.0)
    return NetworkStats(
        density=float(A.sum() / (N * (N - 1))),
        avg_degree_unweighted=float(k.mean()),
        avg_degree_weighted=float(s.mean()),
        clustering_unweighted=transitivity(A),
        clustering_weighted=float(barrat_clustering(W, A).mean()),
        avg_nn_degree_unweighted=float(knn_u.mean()),
        avg_nn_degree_weighted=float(knn_w.mean()),
        diameter_unweighted=diameter(A),
    )


def hhi(market: BipartiteMarket) -> ConcentrationReport:
    """Herfindahl-Hirschman index of each bank's bond portfolio."""
    V = market.holdings
    tot = V.sum(axis=0)
    ok = tot > 0
    H = np.full(market.N, np.nan)
    # one division at the end keeps uniform portfolios at 1/K exactly when the sums are exact
    H[ok] = (V[:, ok] ** 2).sum(axis=0) / tot[ok] ** 2
    excluded = tuple(market.bank_ids[i] for i in np.nonzero(~ok)[0])
    if excluded:
        warnings.warn(f"banks without holdings excluded from HHI: {', '.join(excluded)}", stacklevel=2)
    mean = float(H[ok].mean()) if ok.any() else float("nan")
    return ConcentrationReport(per_bank_hhi=H, mean_hhi=mean, excluded=excluded)


def _kendall_tau_b(x: np.ndarray, y: np.ndarray) -> float:
    # pair counts are integers, so identical or reversed orderings give exactly +-1
    i, j = np.triu_indices(x.size, 1)
    sx = np.sign(x[i] - x[j]).astype(np.int64)
    sy = np.sign(y[i] - y[j]).astype(np.int64)
    s = int((sx * sy).sum())
    nx_ = int(np.count_nonzero(sx))
    ny_ = int(np.count_nonzero(sy))
    return s / math.sqrt(nx_ * ny_)


def _spearman_rho(x: np.ndarray, y: np.ndarray) -> float:
    a = scipy.stats.rankdata(x)
    b = scipy.stats.rankdata(y)
    a = a - a.mean()
    b = b - b.mean()
    return float(a @ b / math.sqrt((a @ a) * (b @ b)))


def rank_correlation(a: Sequence[float], b: Sequence[float]) -> RankCorrelation:
    """Spearman's rho and Kendall's tau-b, ties given average ranks.

    A constant input leaves both undefined; they are returned as NaN.
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise DomainError(f"inputs must be 1-D of equal length, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise DomainError("rank correlation needs at least two observations")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return RankCorrelation(float("nan"), float("nan"))
    rho = min(max(_spearman_rho(x, y), -1.0), 1.0)
    tau = min(max(_kendall_tau_b(x, y), -1.0), 1.0)
    return RankCorrelation(rho, tau)


def sweep_depth_scale(
    market: BipartiteMarket,
    c_values: Sequence[float],
    optimized: BipartiteMarket | None = None,
    psi: float = 1.0,
) -> DepthSweep:
    """Mean DebtRank as the depth scaling constant varies.

    Depths derived from ADV and volatility are rebuilt for each ``c``;
    explicitly given depths are rescaled in proportion.
    """
    cs = np.asarray(list(c_values), dtype=np.float64)
    if np.any(~(cs > 0)):
        raise DomainError("every c must be > 0")

    def curve(m):
        return np.array([market_debtrank(m.with_depth_scale(float(c)), psi).mean for c in cs])

    return DepthSweep(
        c_values=cs,
        original=curve(market),
        optimized=None if optimized is None else curve(optimized),
    )
