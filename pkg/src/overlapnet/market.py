"""Bipartite bank-asset market, linear price impact and the
liquidity-adjusted one-mode projection onto banks.

All monetary amounts are float64 in a single currency. Holdings are stored
as a ``K x N`` matrix ``V`` (assets in rows, banks in columns).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DomainError

DEFAULT_DEPTH_SCALE = 0.4


def _require_positive(name: str, value: float) -> None:
    if not (math.isfinite(value) and value > 0):
        raise DomainError(f"{name} must be finite and > 0, got {value!r}")


def market_depth(adv: float, volatility: float, c: float = DEFAULT_DEPTH_SCALE) -> float:
    """Market depth ``c * ADV / sigma``.

    Selling ``depth / 100`` of the asset moves its price by one percent.
    """
    _require_positive("adv", adv)
    _require_positive("volatility", volatility)
    _require_positive("c", c)
    return c * adv / volatility


def price_impact(signed_volume: float, depth: float) -> float:
    """Fractional price change caused by a net trade of ``signed_volume``.

    Positive volume is a net buy, negative a net sell. The result is not
    bounded; callers that track prices clamp them at zero.
    """
    if not (depth > 0):
        raise DomainError(f"depth must be > 0, got {depth!r}")
    return signed_volume / depth


@dataclass(frozen=True)
class Asset:
    id: str
    adv: float
    volatility: float
    depth: float | None = None
    expected_return: float = 0.0


@dataclass(frozen=True)
class Bank:
    id: str
    equity: float
    other_assets: float = 0.0


@dataclass(frozen=True)
class Violation:
    """One failed invariant, located by asset row ``k`` and/or bank column ``i``."""

    rule: str
    message: str
    k: int | None = None
    i: int | None = None


@dataclass(frozen=True, eq=False)
class BipartiteMarket:
    """Banks, assets and the ``K x N`` holdings matrix.

    ``depth_scale`` is the scaling constant used to derive depths from
    ADV and volatility. Assets carrying an explicit ``depth`` use it as
    given at this scale; :meth:`with_depth_scale` rescales those
    proportionally.
    """

    assets: tuple[Asset, ...]
    banks: tuple[Bank, ...]
    holdings: np.ndarray
    depth_scale: float = DEFAULT_DEPTH_SCALE
    _depths: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "assets", tuple(self.assets))
        object.__setattr__(self, "banks", tuple(self.banks))
        V = np.array(self.holdings, dtype=np.float64, copy=True)
        if V.ndim != 2 or V.shape != (len(self.assets), len(self.banks)):
            raise DomainError(
                f"holdings must have shape (K, N) = ({len(self.assets)}, {len(self.banks)}), "
                f"got {V.shape}"
            )
        V.setflags(write=False)
        object.__setattr__(self, "holdings", V)
        object.__setattr__(self, "_depths", self._compute_depths())

    def _compute_depths(self) -> np.ndarray:
        out = np.empty(len(self.assets))
        for k, a in enumerate(self.assets):
            if a.depth is not None:
                out[k] = a.depth
            elif a.adv > 0 and a.volatility > 0 and self.depth_scale > 0:
                out[k] = self.depth_scale * a.adv / a.volatility
            else:
                out[k] = np.nan
        out.setflags(write=False)
        return out

    @property
    def K(self) -> int:
        return len(self.assets)

    @property
    def N(self) -> int:
        return len(self.banks)

    @property
    def depths(self) -> np.ndarray:
        return self._depths

    @property
    def equities(self) -> np.ndarray:
        return np.array([b.equity for b in self.banks], dtype=np.float64)

    @property
    def other_assets(self) -> np.ndarray:
        return np.array([b.other_assets for b in self.banks], dtype=np.float64)

    @property
    def expected_returns(self) -> np.ndarray:
        return np.array([a.expected_return for a in self.assets], dtype=np.float64)

    @property
    def bank_totals(self) -> np.ndarray:
        """Portfolio value per bank (column sums)."""
        return self.holdings.sum(axis=0)

    @property
    def asset_totals(self) -> np.ndarray:
        """Outstanding value per asset (row sums)."""
        return self.holdings.sum(axis=1)

    @property
    def bank_ids(self) -> list[str]:
        return [b.id for b in self.banks]

    @property
    def asset_ids(self) -> list[str]:
        return [a.id for a in self.assets]

    def with_holdings(self, holdings: np.ndarray) -> "BipartiteMarket":
        return replace(self, holdings=holdings)

    def with_depth_scale(self, c: float) -> "BipartiteMarket":
        """Same market with every depth rebuilt (or rescaled) for scale ``c``."""
        _require_positive("c", c)
        ratio = c / self.depth_scale
        assets = tuple(
            replace(a, depth=a.depth * ratio) if a.depth is not None else a for a in self.assets
        )
        return replace(self, assets=assets, depth_scale=c)

    def scale_depths(self, factor: float) -> "BipartiteMarket":
        """Multiply every depth by ``factor`` (explicit depths are materialized)."""
        _require_positive("factor", factor)
        assets = tuple(replace(a, depth=float(d) * factor) for a, d in zip(self.assets, self.depths))
        return replace(self, assets=assets)


def make_market(
    holdings,
    equities: Sequence[float],
    depths: Sequence[float] | None = None,
    *,
    other_assets: Sequence[float] | None = None,
    expected_returns: Sequence[float] | None = None,
    adv: Sequence[float] | None = None,
    volatility: Sequence[float] | None = None,
    depth_scale: float = DEFAULT_DEPTH_SCALE,
) -> BipartiteMarket:
    """Convenience constructor from plain arrays, with generated ids."""
    V = np.asarray(holdings, dtype=np.float64)
    K, N = V.shape
    other = np.zeros(N) if other_assets is None else np.asarray(other_assets, dtype=float)
    rets = np.zeros(K) if expected_returns is None else np.asarray(expected_returns, dtype=float)
    adv_ = np.ones(K) if adv is None else np.asarray(adv, dtype=float)
    vol_ = np.ones(K) if volatility is None else np.asarray(volatility, dtype=float)
    assets = [
        Asset(
            id=f"A{k + 1}",
            adv=float(adv_[k]),
            volatility=float(vol_[k]),
            depth=None if depths is None else float(depths[k]),
            expected_return=float(rets[k]),
        )
        for k in range(K)
    ]
    banks = [
        Bank(id=f"B{i + 1}", equity=float(equities[i]), other_assets=float(other[i]))
        for i in range(N)
    ]
    return BipartiteMarket(assets, banks, V, depth_scale=depth_scale)


def validate_market(market: BipartiteMarket) -> list[Violation]:
    """Every invariant violation in ``market``; an empty list means valid."""
    out: list[Violation] = []
    if market.K < 1:
        out.append(Violation("min_assets", "market has no assets"))
    if market.N < 1:
        out.append(Violation("min_banks", "market has no banks"))
    if not (math.isfinite(market.depth_scale) and market.depth_scale > 0):
        out.append(Violation("depth_scale", f"depth_scale must be > 0, got {market.depth_scale!r}"))

    seen: dict[str, int] = {}
    for k, a in enumerate(market.assets):
        if a.id in seen:
            out.append(Violation("duplicate_asset_id", f"asset id {a.id!r} repeated", k=k))
        seen[a.id] = k
        for name in ("adv", "volatility"):
            val = getattr(a, name)
            if not (math.isfinite(val) and val > 0):
                out.append(Violation(f"asset_{name}", f"asset {a.id!r}: {name} must be > 0, got {val!r}", k=k))
        if not math.isfinite(a.expected_return):
            out.append(Violation("asset_return", f"asset {a.id!r}: expected_return is not finite", k=k))
        d = market.depths[k]
        if not (math.isfinite(d) and d > 0):
            out.append(Violation("asset_depth", f"asset {a.id!r}: depth must be > 0, got {d!r}", k=k))

    seen = {}
    for i, b in enumerate(market.banks):
        if b.id in seen:
            out.append(Violation("duplicate_bank_id", f"bank id {b.id!r} repeated", i=i))
        seen[b.id] = i
        if not (math.isfinite(b.equity) and b.equity > 0):
            out.append(Violation("bank_equity", f"bank {b.id!r}: equity must be > 0, got {b.equity!r}", i=i))
        if not (math.isfinite(b.other_assets) and b.other_assets >= 0):
            out.append(
                Violation("bank_other_assets", f"bank {b.id!r}: other_assets must be >= 0, got {b.other_assets!r}", i=i)
            )

    V = market.holdings
    for k, i in zip(*np.nonzero(~np.isfinite(V))):
        out.append(Violation("holding_finite", f"holding at (k={k}, i={i}) is not finite", k=int(k), i=int(i)))
    for k, i in zip(*np.nonzero(V < 0)):
        out.append(
            Violation("holding_nonnegative", f"holding at (k={k}, i={i}) is negative: {V[k, i]!r}", k=int(k), i=int(i))
        )
    return out


def check_market(market: BipartiteMarket) -> None:
    """Raise :class:`DomainError` listing all violations, if any."""
    problems = validate_market(market)
    if problems:
        raise DomainError("invalid market: " + "; ".join(p.message for p in problems))


@dataclass(frozen=True, eq=False)
class OverlapNetwork:
    """Bank-bank projection: exposure ``w``, capped impact matrix and economic values."""

    exposure: np.ndarray
    impact: np.ndarray
    economic_value: np.ndarray


def exposure_matrix(holdings: np.ndarray, depths: np.ndarray) -> np.ndarray:
    """``V^T D^-1 V``, symmetrized so that ``w == w.T`` holds bit for bit."""
    V = np.asarray(holdings, dtype=np.float64)
    w = V.T @ (V / np.asarray(depths, dtype=np.float64)[:, None])
    return 0.5 * (w + w.T)


def impact_matrix(exposure: np.ndarray, equities: np.ndarray) -> np.ndarray:
    """Per-pair equity loss fraction ``min(1, w_ij / E_j)``."""
    E = np.asarray(equities, dtype=np.float64)
    if np.any(~(E > 0)):
        raise DomainError("all equities must be > 0 to build the impact matrix")
    return np.minimum(1.0, exposure / E[None, :])


def economic_values(market: BipartiteMarket) -> np.ndarray:
    """Each bank's share of the total market value."""
    totals = market.bank_totals
    total = totals.sum()
    if not (total > 0):
        raise DomainError("total market value is zero")
    return totals / total


def project_overlap(market: BipartiteMarket) -> OverlapNetwork:
    d = market.depths
    if np.any(~(d > 0)):
        raise DomainError("all depths must be > 0")
    w = exposure_matrix(market.holdings, d)
    W = impact_matrix(w, market.equities)
    total = market.bank_totals.sum()
    v = market.bank_totals / total if total > 0 else np.zeros(market.N)
    return OverlapNetwork(exposure=w, impact=W, economic_value=v)


def warn_depth_override(asset_ids: Sequence[str]) -> None:
    if asset_ids:
        warnings.warn(
            "explicit depth overrides the ADV/volatility-derived depth for assets: "
            + ", ".join(asset_ids),
            stacklevel=3,
        )
