"""Pure numpy implementations of the hot loops.

These are the reference semantics; ``_ckernels.pyx`` mirrors them with
explicit loops. Both expose the same functions and return the same types.
"""

import numpy as np

UNDISTRESSED, DISTRESSED, INACTIVE = 0, 1, 2


def debtrank_run(W, v, seeds, psi, record=False):
    """One DebtRank run from the seed set.

    ``W[j, i]`` is the impact of ``j`` on ``i``. Returns
    ``(R, steps, h_history, s_history)``; histories are ``None`` unless
    ``record`` is set.
    """
    N = W.shape[0]
    h = np.zeros(N)
    s = np.zeros(N, dtype=np.int8)
    h[seeds] = psi
    s[seeds] = DISTRESSED
    h1 = h.copy()
    hh = [h.copy()] if record else None
    ss = [s.copy()] if record else None
    t = 1
    while True:
        d = s == DISTRESSED
        if not d.any():
            break
        h_new = np.minimum(1.0, h + h[d] @ W[d])
        s_new = s.copy()
        s_new[d] = INACTIVE
        s_new[(s == UNDISTRESSED) & (h_new > 0)] = DISTRESSED
        h, s = h_new, s_new
        t += 1
        if record:
            hh.append(h.copy())
            ss.append(s.copy())
    R = float(h @ v - h1 @ v)
    return R, t, hh, ss


def debtrank_all(W, v, psi):
    N = W.shape[0]
    R = np.empty(N)
    steps = np.empty(N, dtype=np.int64)
    for i in range(N):
        R[i], steps[i], _, _ = debtrank_run(W, v, [i], psi)
    return R, steps


def firesale_step(H, E, O, cap, eps, D, pf, alive, pending, exhausted, liquidate_only=False):
    """One synchronous fire-sale round; returns new arrays and the flow record."""
    N = H.shape[1]
    V = H.sum(axis=0)
    gamma = np.zeros(N)
    stuck = np.zeros(N, dtype=bool)
    if not liquidate_only:
        act = alive & ~exhausted
        with np.errstate(divide="ignore", invalid="ignore"):
            L = np.where(act, (V + O) / np.where(act, E, 1.0), 0.0)
        over = act & (L > cap)
        sells = over & (V > 0)
        stuck = over & ~(V > 0)
        g = (V[sells] + O[sells] - (1.0 - eps) * cap[sells] * E[sells]) / V[sells]
        gamma[sells] = np.minimum(g, 1.0)
    gamma[pending] = 1.0

    sold = H @ gamma
    impact = np.minimum(sold / D, 1.0)
    pf_new = np.maximum(pf * (1.0 - impact), 0.0)
    loss = impact @ H
    H_new = np.maximum(H * (1.0 - impact)[:, None] * (1.0 - gamma)[None, :], 0.0)

    E_new = E.copy()
    E_new[alive] = np.maximum(E[alive] - loss[alive], 0.0)
    exhausted_new = exhausted | (alive & (gamma >= 1.0))
    defaulted = alive & ~(E_new > 0)
    alive_new = alive & ~defaulted
    flow = {
        "gamma": gamma,
        "sold": sold,
        "loss": loss,
        "sold_total": float(sold.sum()),
        "defaulted": defaulted,
        "stuck": stuck,
    }
    return H_new, E_new, pf_new, alive_new, defaulted, exhausted_new, flow


def _mean_leverage(H, E, O, alive):
    if not alive.any():
        return float("nan")
    V = H[:, alive].sum(axis=0)
    return float(np.mean((V + O[alive]) / E[alive]))


def firesale_cascade(H, E, O, cap, eps, D, initial, max_steps, stop_tol):
    """Full cascade after exogenous default of bank ``initial``."""
    K, N = H.shape
    H = H.copy()
    E = E.copy()
    pf = np.ones(K)
    alive = np.ones(N, dtype=bool)
    alive[initial] = False
    pending = np.zeros(N, dtype=bool)
    pending[initial] = True
    exhausted = np.zeros(N, dtype=bool)
    default_step = np.full(N, -1, dtype=np.int64)
    stuck_any = np.zeros(N, dtype=bool)
    threshold = stop_tol * H.sum()
    sold_path = []
    lev_path = []

    liquidate_only = True
    steps = 0
    while steps < max_steps:
        H, E, pf, alive, defaulted, exhausted, flow = firesale_step(
            H, E, O, cap, eps, D, pf, alive, pending, exhausted, liquidate_only
        )
        liquidate_only = False
        steps += 1
        default_step[defaulted] = steps
        stuck_any |= flow["stuck"]
        pending = defaulted
        sold_path.append(flow["sold_total"])
        lev_path.append(_mean_leverage(H, E, O, alive))
        if flow["sold_total"] < threshold and not pending.any():
            break
    return {
        "holdings": H,
        "equity": E,
        "price_factor": pf,
        "alive": alive,
        "default_step": default_step,
        "steps": steps,
        "sold_path": np.array(sold_path),
        "leverage_path": np.array(lev_path),
        "stuck": stuck_any,
    }
