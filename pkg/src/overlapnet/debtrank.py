"""DebtRank on an impact matrix.

Each node holds a continuous distress level ``h`` in [0, 1] and a state in
{undistressed, distressed, inactive}. A distressed node passes
``W[j, i] * h[j]`` to every neighbour ``i`` exactly once and then turns
inactive, so distress reverberates at most once through any node.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import _backend, _pykernels
from .errors import DomainError
from .market import BipartiteMarket, project_overlap

UNDISTRESSED = _pykernels.UNDISTRESSED
DISTRESSED = _pykernels.DISTRESSED
INACTIVE = _pykernels.INACTIVE


@dataclass(frozen=True)
class DebtRankRun:
    """Outcome of one run from a seed set.

    ``h_history[t]`` and ``s_history[t]`` hold the state at step ``t + 1``.
    """

    value: float
    steps: int
    h_history: np.ndarray | None = None
    s_history: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class DebtRankResult:
    per_bank: np.ndarray
    mean: float
    steps: np.ndarray


def _check_inputs(impact, value, psi):
    W = np.asarray(impact, dtype=np.float64)
    v = np.asarray(value, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise DomainError(f"impact matrix must be square, got shape {W.shape}")
    if v.shape != (W.shape[0],):
        raise DomainError(f"value vector must have length {W.shape[0]}, got shape {v.shape}")
    if not np.all(np.isfinite(W)) or W.min(initial=0.0) < 0 or W.max(initial=0.0) > 1:
        raise DomainError("impact entries must lie in [0, 1]")
    if np.any(~np.isfinite(v)) or np.any(v < 0):
        raise DomainError("economic values must be finite and >= 0")
    if W.shape[0] and abs(v.sum() - 1.0) > 1e-9:
        raise DomainError(f"economic values must sum to 1, got {v.sum()!r}")
    if not (0.0 <= psi <= 1.0):
        raise DomainError(f"psi must lie in [0, 1], got {psi!r}")
    return W, v


def _propagation_matrix(W, self_impact):
    if self_impact:
        return np.ascontiguousarray(W)
    W = W.copy()
    np.fill_diagonal(W, 0.0)
    return W


def debtrank_seed(
    impact,
    value,
    seeds: Iterable[int],
    psi: float = 1.0,
    *,
    self_impact: bool = False,
    record: bool = True,
) -> DebtRankRun:
    """Distress induced by the seed set, excluding the seeds' own initial distress.

    With ``self_impact=False`` (default) the diagonal of ``impact`` is
    ignored during propagation.
    """
    W, v = _check_inputs(impact, value, psi)
    seeds = sorted(set(int(s) for s in seeds))
    if not seeds:
        raise DomainError("seed set must not be empty")
    if seeds[0] < 0 or seeds[-1] >= W.shape[0]:
        raise DomainError(f"seed index out of range for N={W.shape[0]}")
    W = _propagation_matrix(W, self_impact)
    R, steps, hh, ss = _pykernels.debtrank_run(W, v, seeds, psi, record=record)
    if record:
        return DebtRankRun(R, steps, np.array(hh), np.array(ss))
    return DebtRankRun(R, steps)


def debtrank_all(impact, value, psi: float = 1.0, *, self_impact: bool = False, backend=None) -> DebtRankResult:
    """Single-seed DebtRank for every bank and the market average."""
    W, v = _check_inputs(impact, value, psi)
    W = _propagation_matrix(W, self_impact)
    k = _backend.kernels if backend is None else _backend.get(backend)
    R, steps = k.debtrank_all(W, v, float(psi))
    mean = float(R.mean()) if R.size else 0.0
    return DebtRankResult(per_bank=R, mean=mean, steps=steps)


def market_debtrank(market: BipartiteMarket, psi: float = 1.0, **kwargs) -> DebtRankResult:
    """Project ``market`` onto banks and run :func:`debtrank_all`."""
    net = project_overlap(market)
    return debtrank_all(net.impact, net.economic_value, psi, **kwargs)
