"""Leverage-targeting fire sales on a bipartite bank-asset market.

Every bank tracks its leverage ``(V + O) / E``. A bank above its cap sells
the same fraction of every bond so that, at unchanged prices, its
leverage lands a little below the cap. Aggregate sales depress prices
linearly in the sold volume over market depth, the mark-to-market losses
eat into equity and banks whose equity hits zero are liquidated in full at
the next step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _backend, _pykernels
from .errors import DomainError
from .market import BipartiteMarket

MODERATE_CAP = 33.0
DEFAULT_EPSILON = 0.025


@dataclass(frozen=True)
class FireSaleConfig:
    """Fire-sale parameters.

    ``leverage_cap_mode`` is ``"fixed"`` (every bank capped at
    ``leverage_cap``) or ``"initial"`` (each bank capped at its own
    starting leverage).
    """

    leverage_cap_mode: str = "fixed"
    leverage_cap: float = MODERATE_CAP
    epsilon: float = DEFAULT_EPSILON
    max_steps: int = 1000
    stop_tol: float = 1e-12

    def __post_init__(self):
        if self.leverage_cap_mode not in ("fixed", "initial"):
            raise DomainError(f"leverage_cap_mode must be 'fixed' or 'initial', got {self.leverage_cap_mode!r}")
        if not (self.leverage_cap > 0):
            raise DomainError(f"leverage_cap must be > 0, got {self.leverage_cap!r}")
        if not (0.0 <= self.epsilon < 1.0):
            raise DomainError(f"epsilon must lie in [0, 1), got {self.epsilon!r}")
        if self.max_steps < 1:
            raise DomainError("max_steps must be >= 1")
        if not (self.stop_tol >= 0):
            raise DomainError("stop_tol must be >= 0")

    @classmethod
    def moderate(cls, **kw) -> "FireSaleConfig":
        return cls(leverage_cap_mode="fixed", leverage_cap=MODERATE_CAP, **kw)

    @classmethod
    def extreme(cls, **kw) -> "FireSaleConfig":
        return cls(leverage_cap_mode="initial", **kw)

    @classmethod
    def scenario(cls, name: str, **kw) -> "FireSaleConfig":
        if name == "moderate":
            return cls.moderate(**kw)
        if name == "extreme":
            return cls.extreme(**kw)
        raise DomainError(f"unknown scenario {name!r}; expected 'moderate' or 'extreme'")


def leverage(bond_value: float, other_assets: float, equity: float) -> float:
    """``(V + O) / E``; a bank without positive equity has infinite leverage."""
    if not (equity > 0):
        return math.inf
    return (bond_value + other_assets) / equity


def sell_fraction(bond_value: float, other_assets: float, equity: float, leverage_cap: float, epsilon: float) -> float:
    """Share of the bond portfolio a bank sells this step.

    Zero when the bank is at or below its cap, and also when it has no
    bonds left to sell.
    """
    if not (equity > 0):
        raise DomainError("sell_fraction needs a bank with positive equity")
    if leverage(bond_value, other_assets, equity) <= leverage_cap or not (bond_value > 0):
        return 0.0
    g = (bond_value + other_assets - (1.0 - epsilon) * leverage_cap * equity) / bond_value
    return min(g, 1.0)


@dataclass(frozen=True, eq=False)
class FireSaleState:
    """Balance sheets at one step.

    ``pending`` marks banks that defaulted on the previous step and whose
    remaining bonds are dumped now. ``exhausted`` marks banks that have
    already sold their whole portfolio.
    """

    holdings: np.ndarray
    other_assets: np.ndarray
    equity: np.ndarray
    alive: np.ndarray
    price_factor: np.ndarray
    depths: np.ndarray
    leverage_cap: np.ndarray
    epsilon: float
    pending: np.ndarray
    exhausted: np.ndarray
    t: int = 0

    @property
    def bond_value(self) -> np.ndarray:
        return self.holdings.sum(axis=0)

    @property
    def debt(self) -> np.ndarray:
        """Liabilities other than equity, from the balance identity."""
        return self.bond_value + self.other_assets - self.equity

    @property
    def leverage(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.where(self.equity > 0, (self.bond_value + self.other_assets) / self.equity, np.inf)


@dataclass(frozen=True, eq=False)
class StepFlow:
    gamma: np.ndarray
    sold: np.ndarray
    loss: np.ndarray
    sold_total: float
    defaulted: np.ndarray
    stuck: np.ndarray


@dataclass(frozen=True, eq=False)
class ScenarioResult:
    initial_defaulter: int
    induced_defaults: tuple
    final_market_fraction: float
    equity_destroyed: float
    leverage_path: np.ndarray
    steps: int
    default_step: np.ndarray
    price_factor: np.ndarray
    sold_path: np.ndarray
    stuck: tuple = ()

    @property
    def contagion(self) -> bool:
        return len(self.induced_defaults) > 0


@dataclass(frozen=True, eq=False)
class ContagionReport:
    probability: float
    results: tuple


def _caps(market: BipartiteMarket, config: FireSaleConfig) -> np.ndarray:
    if config.leverage_cap_mode == "fixed":
        return np.full(market.N, float(config.leverage_cap))
    E = market.equities
    return (market.bank_totals + market.other_assets) / E


def _check(market: BipartiteMarket):
    E = market.equities
    if np.any(~(E > 0)):
        raise DomainError("all equities must be > 0 before a fire sale")
    if np.any(~(market.depths > 0)):
        raise DomainError("all depths must be > 0")


def initial_state(market: BipartiteMarket, config: FireSaleConfig) -> FireSaleState:
    _check(market)
    K, N = market.K, market.N
    return FireSaleState(
        holdings=np.array(market.holdings),
        other_assets=market.other_assets,
        equity=market.equities,
        alive=np.ones(N, dtype=bool),
        price_factor=np.ones(K),
        depths=np.array(market.depths),
        leverage_cap=_caps(market, config),
        epsilon=float(config.epsilon),
        pending=np.zeros(N, dtype=bool),
        exhausted=np.zeros(N, dtype=bool),
    )


def default_bank(state: FireSaleState, i: int) -> FireSaleState:
    """Declare bank ``i`` bankrupt; its portfolio is dumped on the next step."""
    alive = state.alive.copy()
    pending = state.pending.copy()
    alive[i] = False
    pending[i] = True
    return replace(state, alive=alive, pending=pending)


def step(state: FireSaleState, *, liquidate_only: bool = False) -> tuple[FireSaleState, StepFlow]:
    """Advance one synchronous round.

    With ``liquidate_only`` only pending liquidations trade; this is how a
    scenario's opening step is played.
    """
    H, E, pf, alive, defaulted, exhausted, flow = _pykernels.firesale_step(
        state.holdings,
        state.equity,
        state.other_assets,
        state.leverage_cap,
        state.epsilon,
        state.depths,
        state.price_factor,
        state.alive,
        state.pending,
        state.exhausted,
        liquidate_only,
    )
    new = replace(
        state,
        holdings=H,
        equity=E,
        price_factor=pf,
        alive=alive,
        pending=defaulted,
        exhausted=exhausted,
        t=state.t + 1,
    )
    return new, StepFlow(**flow)


def _validate_index(market: BipartiteMarket, i: int) -> int:
    i = int(i)
    if not (0 <= i < market.N):
        raise DomainError(f"initial defaulter index {i} out of range for N={market.N}")
    return i


def run_scenario(market: BipartiteMarket, config: FireSaleConfig, initial_defaulter: int, *, backend=None) -> ScenarioResult:
    """Cascade triggered by the exogenous default of one bank."""
    _check(market)
    i0 = _validate_index(market, initial_defaulter)
    k = _backend.kernels if backend is None else _backend.get(backend)
    H0 = np.array(market.holdings)
    E0 = market.equities
    out = k.firesale_cascade(
        H0,
        E0,
        market.other_assets,
        _caps(market, config),
        float(config.epsilon),
        np.array(market.depths),
        i0,
        int(config.max_steps),
        float(config.stop_tol),
    )
    induced = tuple(int(j) for j in np.nonzero(out["default_step"] > 0)[0] if j != i0)
    # value of everything but the initial defaulter's portfolio, at final vs initial prices
    rest = H0.sum(axis=1) - H0[:, i0]
    base = rest.sum()
    frac = float(rest @ out["price_factor"] / base) if base > 0 else 1.0
    others = np.arange(market.N) != i0
    destroyed = float((E0[others] - out["equity"][others]).sum())
    return ScenarioResult(
        initial_defaulter=i0,
        induced_defaults=induced,
        final_market_fraction=min(max(frac, 0.0), 1.0),
        equity_destroyed=destroyed,
        leverage_path=out["leverage_path"],
        steps=int(out["steps"]),
        default_step=out["default_step"],
        price_factor=out["price_factor"],
        sold_path=out["sold_path"],
        stuck=tuple(int(j) for j in np.nonzero(out["stuck"])[0]),
    )


def contagion_probability(market: BipartiteMarket, config: FireSaleConfig, *, backend=None) -> ContagionReport:
    """Share of single-bank defaults that bring down at least one other bank."""
    results = tuple(run_scenario(market, config, i, backend=backend) for i in range(market.N))
    p = sum(r.contagion for r in results) / market.N if market.N else 0.0
    return ContagionReport(probability=p, results=results)
