"""Systemic-risk-efficient reallocation as a quadratically constrained QP.

The allocation ``X`` (``K x N``, assets by banks) is vectorized bank by bank,
``y = vec(X)`` with ``y[i*K + k] = X[k, i]``. The problem is

    min_{y >= 0}  1/2 y^T (P0^T + P0) y
    s.t.          y^T P_i y - sigma_i^2 <= 0      (portfolio variance, per bank)
                  A1 y + c1 <= 0                  (expected return, per bank)
                  A2 y + c2 = 0                   (asset and bank totals)

``solve`` runs a multi-start augmented Lagrangian with spectral projected
gradient inner loops. Start 0 is always the original allocation, which is
feasible, so the returned objective is never worse than the baseline.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse as sp

from .errors import DomainError
from .market import BipartiteMarket

_DEBUG = False
# constraint slack accepted when polishing: rounding level, not the report tolerance
_POLISH_TOL = 1e-12
IMPROVED = "Improved"
BASELINE_RETURNED = "BaselineReturned"


@dataclass(frozen=True, eq=False)
class QcqpInstance:
    K: int
    N: int
    P0: sp.csr_matrix
    P: tuple
    A1: sp.csr_matrix
    c1: np.ndarray
    A2: sp.csr_matrix
    c2: np.ndarray
    variance_bound: np.ndarray
    y0: np.ndarray
    # structure kept for the solver's fast path
    depths: np.ndarray
    weights: np.ndarray
    covariance: np.ndarray
    returns: np.ndarray
    asset_totals: np.ndarray
    bank_totals: np.ndarray
    return_scale: np.ndarray
    variance_scale: np.ndarray

    @property
    def n_vars(self) -> int:
        return self.K * self.N

    def devectorize(self, y) -> np.ndarray:
        return np.asarray(y, dtype=np.float64).reshape(self.K, self.N, order="F")


@dataclass(frozen=True)
class OptimizerConfig:
    eq_tol: float = 1e-8
    ineq_tol: float = 1e-8
    max_iterations: int = 60
    max_inner_iterations: int = 5000
    max_total_iterations: int = 200000
    n_starts: int = 4
    rng_seed: int = 0
    rho0: float = 10.0
    rho_growth: float = 10.0
    rho_max: float = 1e12
    feasibility_target: float = 1e-11
    inner_tol: float = 1e-10
    margin: float = 0.0
    start_perturbation: float = 0.5
    inner_solver: str = "lbfgsb"

    def __post_init__(self):
        if not (self.eq_tol > 0 and self.ineq_tol > 0):
            raise DomainError("tolerances must be > 0")
        if self.n_starts < 1:
            raise DomainError("n_starts must be >= 1")
        if self.inner_solver not in ("lbfgsb", "spg"):
            raise DomainError(f"inner_solver must be 'lbfgsb' or 'spg', got {self.inner_solver!r}")
        if min(self.max_iterations, self.max_inner_iterations, self.max_total_iterations) < 1:
            raise DomainError("iteration budgets must be >= 1")


@dataclass(frozen=True)
class ResidualReport:
    """Maximum violation per constraint family, relative to its own scale.

    ``equality_rows`` holds the absolute residual ``A2 y + c2`` row by row.
    """

    equality: float
    returns: float
    variance: float
    negativity: float
    equality_rows: np.ndarray = field(repr=False)

    def within(self, eq_tol: float, ineq_tol: float) -> bool:
        return (
            self.equality <= eq_tol
            and self.negativity <= eq_tol
            and self.returns <= ineq_tol
            and self.variance <= ineq_tol
        )

    def as_dict(self) -> dict:
        return {
            "equality": self.equality,
            "returns": self.returns,
            "variance": self.variance,
            "negativity": self.negativity,
        }


@dataclass(frozen=True, eq=False)
class Solution:
    y: np.ndarray
    objective_value: float
    baseline_objective: float
    feasibility: ResidualReport
    starts_used: int
    status: str
    start_objectives: tuple = ()
    iterations: int = 0


def repair_covariance(covariance) -> np.ndarray:
    """Symmetrize and clip negative eigenvalues at zero."""
    Q = np.asarray(covariance, dtype=np.float64)
    Q = 0.5 * (Q + Q.T)
    if Q.size == 0:
        return Q
    evals, evecs = np.linalg.eigh(Q)
    if evals.min() >= 0:
        return Q
    tol = 1e-10 * max(np.trace(Q), 0.0)
    if evals.min() < -tol:
        warnings.warn(
            f"covariance is not positive semidefinite (min eigenvalue {evals.min():.3e}); clipping",
            stacklevel=3,
        )
    Q = (evecs * np.maximum(evals, 0.0)) @ evecs.T
    return 0.5 * (Q + Q.T)


def build_qcqp(market: BipartiteMarket, returns=None, covariance=None, equities=None) -> QcqpInstance:
    """Assemble the QCQP for reallocating ``market``'s holdings."""
    K, N = market.K, market.N
    r = market.expected_returns if returns is None else np.asarray(returns, dtype=np.float64)
    if covariance is None:
        raise DomainError("covariance matrix is required")
    Q_raw = np.asarray(covariance, dtype=np.float64)
    E = market.equities if equities is None else np.asarray(equities, dtype=np.float64)
    if r.shape != (K,):
        raise DomainError(f"returns must have length K={K}, got shape {r.shape}")
    if Q_raw.shape != (K, K):
        raise DomainError(f"covariance must be {K}x{K}, got shape {Q_raw.shape}")
    if E.shape != (N,):
        raise DomainError(f"equities must have length N={N}, got shape {E.shape}")
    if not np.all(np.isfinite(Q_raw)) or not np.all(np.isfinite(r)):
        raise DomainError("returns and covariance must be finite")
    scale = max(np.abs(Q_raw).max(initial=0.0), 1e-300)
    if np.abs(Q_raw - Q_raw.T).max(initial=0.0) > 1e-9 * scale:
        raise DomainError("covariance matrix is not symmetric")
    if np.any(~(E > 0)):
        raise DomainError("equities must be > 0")
    D = market.depths
    if np.any(~(D > 0)):
        raise DomainError("depths must be > 0")

    Q = repair_covariance(Q_raw)
    X0 = np.array(market.holdings)
    S = X0.sum(axis=1)
    Vt = X0.sum(axis=0)
    total = Vt.sum()
    if not (total > 0):
        raise DomainError("empty market: total holdings are zero")
    v = Vt / total
    a = v / E
    n = K * N
    idx = np.arange(n).reshape(N, K)  # idx[i, k] = i*K + k

    # P0[(i,k), (j,k)] = (1/D_k) * v_i / E_i
    rows = np.broadcast_to(idx[:, None, :], (N, N, K))
    cols = np.broadcast_to(idx[None, :, :], (N, N, K))
    vals = np.broadcast_to((a[:, None] / D[None, :])[:, None, :], (N, N, K))
    P0 = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))

    Qs = sp.csr_matrix(Q)
    P = tuple(
        sp.block_diag([Qs if j == i else sp.csr_matrix((K, K)) for j in range(N)], format="csr")
        for i in range(N)
    )
    A1 = sp.block_diag([sp.csr_matrix(-r[None, :]) for _ in range(N)], format="csr")
    c1 = X0.T @ r
    A_assets = sp.hstack([sp.identity(K, format="csr")] * N, format="csr")
    A_banks = sp.block_diag([sp.csr_matrix(np.ones((1, K)))] * N, format="csr")
    A2 = sp.vstack([A_assets, A_banks], format="csr")
    c2 = -np.concatenate([S, Vt])
    sigma2 = np.einsum("ki,kl,li->i", X0, Q, X0)

    rmax = np.abs(r).max(initial=0.0)
    ret_scale = np.maximum(np.abs(c1), 1e-3 * Vt * rmax)
    ret_scale[ret_scale <= 0] = 1.0
    qmax = np.abs(np.diag(Q)).max(initial=0.0)
    var_scale = np.maximum(sigma2, 1e-3 * Vt**2 * qmax)
    var_scale[var_scale <= 0] = 1.0

    return QcqpInstance(
        K=K,
        N=N,
        P0=P0,
        P=P,
        A1=A1,
        c1=c1,
        A2=A2,
        c2=c2,
        variance_bound=sigma2,
        y0=X0.reshape(-1, order="F").copy(),
        depths=np.array(D),
        weights=a,
        covariance=Q,
        returns=r.copy(),
        asset_totals=S,
        bank_totals=Vt,
        return_scale=ret_scale,
        variance_scale=var_scale,
    )


def objective(instance: QcqpInstance, y) -> float:
    """``1/2 y^T (P0^T + P0) y``."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (instance.n_vars,):
        raise DomainError(f"y must have length {instance.n_vars}, got shape {y.shape}")
    P0 = instance.P0
    return float(0.5 * (y @ (P0 @ y) + y @ (P0.T @ y)))


def constraint_residuals(instance: QcqpInstance, y) -> ResidualReport:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (instance.n_vars,):
        raise DomainError(f"y must have length {instance.n_vars}, got shape {y.shape}")
    eq_rows = instance.A2 @ y + instance.c2
    eq_scale = max(np.abs(instance.c2).max(initial=0.0), 1e-300)
    ret = np.maximum(0.0, instance.A1 @ y + instance.c1) / instance.return_scale
    var = np.array([y @ (Pi @ y) for Pi in instance.P]) - instance.variance_bound
    var = np.maximum(0.0, var) / instance.variance_scale
    neg = np.maximum(0.0, -y).max(initial=0.0) / eq_scale
    return ResidualReport(
        equality=float(np.abs(eq_rows).max(initial=0.0) / eq_scale),
        returns=float(ret.max(initial=0.0)),
        variance=float(var.max(initial=0.0)),
        negativity=float(neg),
        equality_rows=eq_rows,
    )


# ---------------------------------------------------------------------------
# solver


def returns_conserved(inst: QcqpInstance, tol: float = 1e-12) -> bool:
    """Whether the per-bank return constraints can only hold with equality.

    Summed over banks, ``A1 y`` equals ``-r . S`` for every ``y`` with the
    prescribed asset totals. If the bounds ``c1`` add up to that same
    number, no bank can gain return without another losing it, so each
    inequality is tight on the whole feasible set.
    """
    slack = -(inst.A1 @ inst.y0 + inst.c1).sum()
    return abs(slack) <= tol * max(np.abs(inst.c1).sum(), 1e-300)


def _linear_system(inst: QcqpInstance, with_returns: bool):
    """Stacked equality rows ``M y = b`` (totals, plus returns if conserved)."""
    if not with_returns:
        return inst.A2, -inst.c2
    return sp.vstack([inst.A2, inst.A1], format="csr"), np.concatenate([-inst.c2, -inst.c1])


class _Scaled:
    """The problem in units where the mean holding is one and f(y0) = K*N."""

    def __init__(self, inst: QcqpInstance, margin: float, returns_as_equalities: bool = False):
        self.inst = inst
        K, N = inst.K, inst.N
        self.K, self.N = K, N
        total = inst.bank_totals.sum()
        self.m = total / (K * N)
        f0 = objective(inst, inst.y0)
        self.fs = (K * N) * self.m**2 / f0 if f0 > 0 else 1.0
        self.cD = 1.0 / inst.depths
        self.a = inst.weights
        self.Q = inst.covariance
        self.r = inst.returns
        # zero totals only occur for empty rows/columns, which stay empty
        self.S = np.maximum(inst.asset_totals / self.m, 1e-300)
        self.Vt = np.maximum(inst.bank_totals / self.m, 1e-300)
        self.rs = inst.return_scale
        self.vs = inst.variance_scale
        self.req = returns_as_equalities
        self.ret_rhs = (inst.c1 + margin * np.abs(inst.c1)) / self.rs
        self.var_rhs = (inst.variance_bound * (1.0 - margin)) / self.vs
        self.n_eq = K + N + (N if self.req else 0)
        self.n_ineq = N if self.req else 2 * N

    def f_grad(self, U):
        rowsum = U.sum(axis=1)
        Ua = U @ self.a
        f = self.fs * float(self.cD @ (rowsum * Ua))
        g = self.fs * self.cD[:, None] * (Ua[:, None] + rowsum[:, None] * self.a[None, :])
        return f, g

    def _ret(self, U):
        return self.ret_rhs - self.m * (self.r @ U) / self.rs

    def _ret_adjoint(self, w):
        return (-self.m * self.r[:, None]) * (w / self.rs)[None, :]

    def eq(self, U):
        # each total is measured relative to itself
        parts = [U.sum(axis=1) / self.S - 1.0, U.sum(axis=0) / self.Vt - 1.0]
        if self.req:
            parts.append(self._ret(U))
        return np.concatenate(parts)

    def eq_adjoint(self, z):
        K, N = self.K, self.N
        out = z[:K, None] / self.S[:, None] + z[None, K : K + N] / self.Vt[None, :]
        if self.req:
            out = out + self._ret_adjoint(z[K + N :])
        return out

    def ineq(self, U):
        QU = self.Q @ U
        var = self.m**2 * np.einsum("ki,ki->i", U, QU) / self.vs - self.var_rhs
        if self.req:
            return var, QU
        return np.concatenate([self._ret(U), var]), QU

    def ineq_adjoint(self, w, QU):
        wv = w[-self.N :]
        out = 2 * self.m**2 * QU * (wv / self.vs)[None, :]
        if not self.req:
            out = out + self._ret_adjoint(w[: self.N])
        return out


def _spg(fun, U, tol, maxit, memory=10):
    """Spectral projected gradient on ``U >= 0`` with a nonmonotone line search."""
    f, g = fun(U)
    pg = np.abs(np.maximum(U - g, 0.0) - U).max()
    alpha = 1.0 / max(pg, 1e-12)
    hist = deque([f], maxlen=memory)
    it = 0
    while it < maxit and pg > tol:
        it += 1
        d = np.maximum(U - alpha * g, 0.0) - U
        gd = float(np.sum(g * d))
        if gd >= 0:
            alpha = 1.0
            d = np.maximum(U - g, 0.0) - U
            gd = float(np.sum(g * d))
            if gd >= 0:
                break
        fref = max(hist)
        lam = 1.0
        while True:
            Un = U + lam * d
            fn, gn = fun(Un)
            if fn <= fref + 1e-4 * lam * gd or lam < 1e-16:
                break
            lam_q = -0.5 * gd * lam**2 / (fn - f - lam * gd)
            lam = lam_q if 0.1 * lam <= lam_q <= 0.9 * lam else 0.5 * lam
        s = Un - U
        yv = gn - g
        sy = float(np.sum(s * yv))
        alpha = min(max(float(np.sum(s * s)) / sy, 1e-12), 1e12) if sy > 0 else 1e12
        U, f, g = Un, fn, gn
        hist.append(f)
        pg = np.abs(np.maximum(U - g, 0.0) - U).max()
    return U, it, pg


def _lbfgsb(fun, U, tol, maxit):
    """Bound-constrained quasi-Newton (gradient projection plus subspace steps) on ``U >= 0``."""
    shape = U.shape

    def flat(u):
        f, g = fun(u.reshape(shape))
        return f, g.ravel()

    res = scipy.optimize.minimize(
        flat,
        U.ravel(),
        jac=True,
        method="L-BFGS-B",
        bounds=scipy.optimize.Bounds(0.0, np.inf),
        options={"maxiter": maxit, "gtol": tol, "ftol": 1e-15, "maxcor": 20},
    )
    Un = res.x.reshape(shape)
    _, g = fun(Un)
    pg = np.abs(np.maximum(Un - g, 0.0) - Un).max()
    return Un, int(res.nit), (min(pg, tol) if res.success else pg)


def _augmented_lagrangian(sc: _Scaled, U, cfg: OptimizerConfig):
    lam = np.zeros(sc.n_eq)
    mu = np.zeros(sc.n_ineq)
    rho = cfg.rho0
    prev_viol = np.inf
    best_viol = np.inf
    stalled = 0
    total_iters = 0
    inner_tol = 1e-3

    for _ in range(cfg.max_iterations):
        def fun(V, lam=lam, mu=mu, rho=rho):
            f, g = sc.f_grad(V)
            h = sc.eq(V)
            c, QU = sc.ineq(V)
            act = np.maximum(0.0, mu + rho * c)
            val = f + lam @ h + 0.5 * rho * (h @ h) + (act @ act - mu @ mu) / (2 * rho)
            grad = g + sc.eq_adjoint(lam + rho * h) + sc.ineq_adjoint(act, QU)
            return val, grad

        budget = min(cfg.max_inner_iterations, cfg.max_total_iterations - total_iters)
        inner = _lbfgsb if cfg.inner_solver == "lbfgsb" else _spg
        U, it, pg = inner(fun, U, inner_tol, budget)
        total_iters += it
        h = sc.eq(U)
        c, _ = sc.ineq(U)
        viol = max(np.abs(h).max(), np.abs(np.maximum(c, -mu / rho)).max())
        lam = lam + rho * h
        mu = np.maximum(0.0, mu + rho * c)
        if _DEBUG:
            print("   outer viol", viol, "rho", rho, "pg", pg, "it", it)
        if viol <= cfg.feasibility_target and pg <= 10 * cfg.inner_tol:
            break
        # a degenerate feasible set can stall short of the target
        converged = pg <= inner_tol
        if converged:
            stalled = stalled + 1 if viol > 0.5 * best_viol else 0
            best_viol = min(best_viol, viol)
        if stalled >= 4 or total_iters >= cfg.max_total_iterations:
            break
        if viol > 0.25 * prev_viol:
            rho = min(rho * cfg.rho_growth, cfg.rho_max)
        prev_viol = viol
        if converged:
            inner_tol = max(cfg.inner_tol, min(0.1 * inner_tol, viol))
    return U, mu, total_iters


def rebalance(X, asset_totals, bank_totals, max_iter=5000, tol=1e-15):
    """Alternately rescale rows and columns of ``X >= 0`` to the given sums.

    Zero entries stay zero. Returns ``(X, converged)``.
    """
    X = np.maximum(np.asarray(X, dtype=np.float64), 0.0)
    S = np.asarray(asset_totals, dtype=np.float64)
    Vt = np.asarray(bank_totals, dtype=np.float64)
    scale = max(S.max(initial=0.0), Vt.max(initial=0.0), 1e-300)
    for _ in range(max_iter):
        rs = X.sum(axis=1)
        if np.any((rs <= 0) & (S > 0)):
            return X, False
        X = X * np.divide(S, rs, out=np.zeros_like(S), where=rs > 0)[:, None]
        cs = X.sum(axis=0)
        if np.any((cs <= 0) & (Vt > 0)):
            return X, False
        X = X * np.divide(Vt, cs, out=np.zeros_like(Vt), where=cs > 0)[None, :]
        err = np.abs(X.sum(axis=1) - S).max(initial=0.0) / scale
        if err <= tol:
            return X, True
    err = np.abs(X.sum(axis=1) - S).max(initial=0.0) / scale
    return X, err <= 1e-12


def _max_step(inst: QcqpInstance, y0, d, ineq_tol):
    """Largest ``t >= 0`` keeping ``y0 + t d`` nonnegative and within the inequality tolerances."""
    K, N = inst.K, inst.N
    neg = d < 0
    if not neg.any():
        return 0.0
    t = float((y0[neg] / -d[neg]).min())
    X0 = y0.reshape(K, N, order="F")
    Dm = d.reshape(K, N, order="F")
    Q = inst.covariance
    for i in range(N):
        x, dx = X0[:, i], Dm[:, i]
        A = dx @ Q @ dx
        B = 2 * (x @ Q @ dx)
        C = x @ Q @ x - inst.variance_bound[i] - ineq_tol * inst.variance_scale[i]
        if C > 0:
            return 0.0
        if A > 0:
            disc = max(B * B - 4 * A * C, 0.0)
            root = (2 * -C) / (B + np.sqrt(disc)) if B > 0 else (-B + np.sqrt(disc)) / (2 * A)
            t = min(t, root)
        elif B > 0:
            t = min(t, -C / B)
        rd = inst.returns @ dx
        slack = ineq_tol * inst.return_scale[i] - (inst.c1[i] - inst.returns @ x)
        if slack < 0:
            return 0.0
        if rd < 0:
            t = min(t, slack / -rd)
    return max(t, 0.0)


def baseline_is_optimal(inst: QcqpInstance, with_returns: bool, tol: float = 1e-10) -> bool:
    """Exact optimality certificate for ``y0`` from one linear program.

    With the asset totals fixed the objective is linear on the feasible
    set, and every variance constraint is convex, so each feasible point
    lies in ``y0`` plus the cone of directions that keep the totals (and
    conserved returns), stay nonnegative where ``y0`` is zero, and do not
    increase any variance that is already at its bound. If no direction in
    that cone decreases the objective, ``y0`` is a global minimizer.
    """
    K, N = inst.K, inst.N
    m = inst.bank_totals.sum() / (K * N)
    f0 = objective(inst, inst.y0)
    if not (f0 > 0):
        return False
    grad = (inst.P0 @ inst.y0 + inst.P0.T @ inst.y0) * (m / f0)
    M, _ = _linear_system(inst, with_returns)
    X0 = inst.devectorize(inst.y0)
    QX = inst.covariance @ X0
    var = np.einsum("ki,ki->i", X0, QX)
    rows, rhs = [], []
    for i in range(N):
        if var[i] >= inst.variance_bound[i] - 1e-12 * inst.variance_scale[i]:
            g = np.zeros(K * N)
            g[i * K : (i + 1) * K] = QX[:, i] / max(np.abs(QX[:, i]).max(), 1e-300)
            rows.append(g)
            rhs.append(0.0)
    if not with_returns:
        slack = -(inst.A1 @ inst.y0 + inst.c1)
        for i in np.nonzero(slack <= 1e-12 * inst.return_scale)[0]:
            rows.append(inst.A1[i].toarray().ravel() / max(np.abs(inst.returns).max(), 1e-300))
            rhs.append(0.0)
    zero = inst.y0 <= 0
    bounds = [(0.0, 1.0) if z else (-1.0, 1.0) for z in zero]
    res = scipy.optimize.linprog(
        grad,
        A_ub=np.array(rows) if rows else None,
        b_ub=np.array(rhs) if rows else None,
        A_eq=M.toarray(),
        b_eq=np.zeros(M.shape[0]),
        bounds=bounds,
        method="highs",
    )
    return res.status == 0 and res.fun >= -tol


def _restore(inst: QcqpInstance, y, with_returns: bool, rounds: int = 5):
    """Nearby ``y >= 0`` meeting the linear equalities to rounding accuracy.

    Entries that are negligible are zeroed; the least-norm correction is
    then applied on the remaining support. Returns ``None`` on failure.
    """
    M, b = _linear_system(inst, with_returns)
    M = M.toarray()
    scale = max(np.abs(b).max(initial=0.0), 1e-300)
    y = np.where(y > 1e-13 * np.abs(y).max(initial=0.0), y, 0.0)
    for _ in range(rounds):
        supp = y > 0
        res = M @ y - b
        if np.abs(res).max(initial=0.0) <= 1e-14 * scale:
            return y
        dy = np.linalg.lstsq(M[:, supp], res, rcond=None)[0]
        y = y.copy()
        y[supp] -= dy
        y = np.maximum(y, 0.0)
    res = M @ y - b
    return y if np.abs(res).max(initial=0.0) <= 1e-12 * scale else None


def _kkt_polish(inst: QcqpInstance, y, active, with_returns: bool, max_newton: int = 30, max_swaps: int = 8):
    """Newton iterations on the KKT system for a guessed active set.

    ``active`` flags the variance constraints assumed to hold with
    equality; entries of ``y`` that are zero stay fixed at zero. The guess
    is corrected when a multiplier has the wrong sign or a dropped
    constraint is violated. Returns the refined point, or ``None`` if
    Newton fails to converge.
    """
    K, N = inst.K, inst.N
    M, b = _linear_system(inst, with_returns)
    M = M.toarray()
    H0 = (inst.P0 + inst.P0.T).toarray()
    Q = inst.covariance
    blocks = [slice(i * K, (i + 1) * K) for i in range(N)]
    scale = max(np.abs(b).max(initial=0.0), 1e-300)
    active = np.array(active, dtype=bool)
    free = y > 1e-13 * np.abs(y).max(initial=0.0)
    y = np.where(free, y, 0.0)
    for _ in range(max_swaps):
        act = np.nonzero(active)[0]
        z = y.copy()
        mu = np.zeros(len(act))
        lam = np.zeros(M.shape[0])
        ok = False
        for _ in range(max_newton):
            grad_g = np.zeros((len(act), K * N))
            gval = np.zeros(len(act))
            H = H0.copy()
            for a, i in enumerate(act):
                qx = Q @ z[blocks[i]]
                grad_g[a, blocks[i]] = 2 * qx
                gval[a] = z[blocks[i]] @ qx - inst.variance_bound[i]
                H[blocks[i], blocks[i]] += 2 * mu[a] * Q
            r1 = (H0 @ z + M.T @ lam + grad_g.T @ mu)[free]
            r2 = M @ z - b
            nf = int(free.sum())
            J = np.block([
                [H[np.ix_(free, free)], M[:, free].T, grad_g[:, free].T],
                [M[:, free], np.zeros((M.shape[0], M.shape[0] + len(act)))],
                [grad_g[:, free], np.zeros((len(act), M.shape[0] + len(act)))],
            ])
            rhs = -np.concatenate([r1, r2, gval])
            step = np.linalg.lstsq(J, rhs, rcond=None)[0]
            z[free] += step[:nf]
            lam += step[nf : nf + M.shape[0]]
            mu += step[nf + M.shape[0] :]
            res = np.abs(rhs).max(initial=0.0)
            if np.abs(step[:nf]).max(initial=0.0) <= 1e-15 * scale and res <= 1e-9 * max(scale, 1.0):
                ok = True
                break
        if not ok or not np.all(np.isfinite(z)):
            return None
        changed = False
        if len(act) and mu.min() < 0:
            active[act[np.argmin(mu)]] = False
            changed = True
        else:
            X = z.reshape(K, N, order="F")
            var = np.einsum("ki,kl,li->i", X, Q, X) - inst.variance_bound
            viol = (~active) & (var > _POLISH_TOL * inst.variance_scale)
            if viol.any():
                active[np.argmax(np.where(viol, var / inst.variance_scale, -np.inf))] = True
                changed = True
        if z.min() < 0:
            j = np.argmin(z)
            free[j] = False
            z[j] = 0.0
            changed = True
        y = z
        if not changed:
            return y
    return None


def _segment_best(inst: QcqpInstance, y):
    """Best feasible point on the ray from y0 through ``y`` (``None`` if none beyond y0)."""
    d = y - inst.y0
    tmax = _max_step(inst, inst.y0, d, _POLISH_TOL)
    if tmax <= 0:
        return None
    Pd = inst.P0 @ d
    PTd = inst.P0.T @ d
    curv = 0.5 * (d @ Pd + d @ PTd)
    slope = inst.y0 @ Pd + inst.y0 @ PTd
    cand = [tmax]
    if curv > 0:
        tv = -slope / (2 * curv)
        if 0 < tv < tmax:
            cand.append(tv)
    best = min(cand, key=lambda t: slope * t + curv * t * t)
    return np.maximum(inst.y0 + best * d, 0.0)


def _finalize(inst: QcqpInstance, U, m, with_returns: bool, active):
    """Exact linear constraints, optional KKT polish, then the best point on the ray from y0."""
    y = _restore(inst, U.reshape(-1, order="F") * m, with_returns)
    if y is None:
        return None
    out = _segment_best(inst, y)
    polished = _kkt_polish(inst, y, active, with_returns)
    if polished is not None:
        polished = _restore(inst, polished, with_returns)
    if polished is not None:
        cand = _segment_best(inst, polished)
        if cand is not None and (out is None or objective(inst, cand) < objective(inst, out)):
            out = cand
    return out


def _starts(inst: QcqpInstance, cfg: OptimizerConfig, m):
    X0 = inst.devectorize(inst.y0) / m
    yield X0
    rng = np.random.default_rng(cfg.rng_seed)
    for _ in range(cfg.n_starts - 1):
        Z = rng.standard_normal(X0.shape)
        Z = Z - Z.mean(axis=1, keepdims=True) - Z.mean(axis=0, keepdims=True) + Z.mean()
        Xs = np.maximum(X0 + cfg.start_perturbation * Z, 0.0)
        Xs, ok = rebalance(Xs, inst.asset_totals / m, inst.bank_totals / m)
        yield Xs if ok else X0


def solve(instance: QcqpInstance, config: OptimizerConfig | None = None) -> Solution:
    """Best feasible allocation found over ``config.n_starts`` local runs."""
    cfg = config or OptimizerConfig()
    inst = instance
    base_report = constraint_residuals(inst, inst.y0)
    if not base_report.within(cfg.eq_tol, cfg.ineq_tol):
        raise DomainError(f"baseline allocation is infeasible: {base_report.as_dict()}")
    f_base = objective(inst, inst.y0)
    best_y, best_f = inst.y0, f_base
    start_obj = []
    iters = 0
    conserved = returns_conserved(inst)
    sc = _Scaled(inst, cfg.margin, returns_as_equalities=conserved)
    if _free_dimension(inst, conserved) > 0 and not baseline_is_optimal(inst, conserved):
        for U0 in _starts(inst, cfg, sc.m):
            U, mu, it = _augmented_lagrangian(sc, U0, cfg)
            iters += it
            y = _finalize(inst, U, sc.m, conserved, mu[-inst.N :] > 0)
            if y is None:
                start_obj.append(float("nan"))
                continue
            rep = constraint_residuals(inst, y)
            f = objective(inst, y)
            start_obj.append(f)
            # ties keep the earlier start
            if rep.within(cfg.eq_tol, cfg.ineq_tol) and f < best_f:
                best_y, best_f = y, f
    status = IMPROVED if best_f < f_base - 1e-12 * abs(f_base) else BASELINE_RETURNED
    if status == BASELINE_RETURNED:
        best_y, best_f = inst.y0, f_base
    return Solution(
        y=best_y.copy(),
        objective_value=best_f,
        baseline_objective=f_base,
        feasibility=constraint_residuals(inst, best_y),
        starts_used=len(start_obj),
        status=status,
        start_objectives=tuple(start_obj),
        iterations=iters,
    )


# ---------------------------------------------------------------------------
# exhaustive oracle for tiny instances


def degrees_of_freedom(instance: QcqpInstance) -> int:
    """Dimension of the affine set cut out by the asset and bank totals."""
    return instance.n_vars - int(np.linalg.matrix_rank(instance.A2.toarray()))


def _free_dimension(inst: QcqpInstance, with_returns: bool) -> int:
    M, _ = _linear_system(inst, with_returns)
    return inst.n_vars - int(np.linalg.matrix_rank(M.toarray()))


def _line_minimum(inst, Pbar, base, direction, tol):
    """Minimize the objective on ``base[j] + s * direction`` for every row ``j``.

    Returns ``(s_best, f_best)`` arrays; infeasible lines get ``f = inf``.
    """
    K, N = inst.K, inst.N
    n_lines = base.shape[0]
    lo = np.full(n_lines, -np.inf)
    hi = np.full(n_lines, np.inf)
    pos, neg = direction > 0, direction < 0
    if pos.any():
        lo = np.maximum(lo, (-base[:, pos] / direction[pos]).max(axis=1))
    if neg.any():
        hi = np.minimum(hi, (-base[:, neg] / direction[neg]).min(axis=1))
    flat = ~(pos | neg)
    if flat.any():
        bad = (base[:, flat] < -tol * np.abs(inst.c2).max()).any(axis=1)
        hi[bad] = -np.inf

    for i in range(N):
        Pi = inst.P[i].toarray()
        Pd = Pi @ direction
        A = direction @ Pd
        B = 2 * base @ Pd
        C = np.einsum("jn,nm,jm->j", base, Pi, base) - inst.variance_bound[i] - tol * inst.variance_scale[i]
        if A > 0:
            disc = B * B - 4 * A * C
            ok = disc >= 0
            sq = np.sqrt(np.where(ok, disc, 0.0))
            r1 = (-B - sq) / (2 * A)
            r2 = (-B + sq) / (2 * A)
            lo = np.where(ok, np.maximum(lo, r1), lo)
            hi = np.where(ok, np.minimum(hi, r2), -np.inf)
        else:
            lo, hi = _linear_cut(lo, hi, B, C)
        a1 = inst.A1[i].toarray().ravel()
        lo, hi = _linear_cut(lo, hi, np.full(n_lines, a1 @ direction), base @ a1 + inst.c1[i] - tol * inst.return_scale[i])

    q2 = direction @ Pbar @ direction
    q1 = 2 * base @ (Pbar @ direction)
    q0 = np.einsum("jn,nm,jm->j", base, Pbar, base)
    feasible = lo <= hi
    lo_c = np.where(feasible, lo, 0.0)
    hi_c = np.where(feasible, hi, 0.0)
    cands = [lo_c, hi_c]
    if q2 > 0:
        cands.append(np.clip(-q1 / (2 * q2), lo_c, hi_c))
    s = np.stack(cands)
    vals = q2 * s * s + q1[None, :] * s + q0[None, :]
    pick = np.argmin(vals, axis=0)
    s_best = s[pick, np.arange(n_lines)]
    f_best = np.where(feasible, vals[pick, np.arange(n_lines)], np.inf)
    return s_best, f_best


def _linear_cut(lo, hi, b, c):
    """Intersect ``[lo, hi]`` with ``{s : b s + c <= 0}`` elementwise."""
    b = np.broadcast_to(b, lo.shape)
    c = np.broadcast_to(c, lo.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        root = -c / b
    lo = np.where(b < 0, np.maximum(lo, root), lo)
    hi = np.where(b > 0, np.minimum(hi, root), hi)
    hi = np.where((b == 0) & (c > 0), -np.inf, hi)
    return lo, hi


def _feasible_range(inst, Pbar, y0, B, tol, n_bisect=80):
    """Range of the first null-space coordinate over the feasible set.

    The set is convex and contains ``y0`` (coordinate 0), so each end is
    found by bisection between 0 and the bound imposed by ``y >= 0``.
    """
    ends = []
    for sign in (-1.0, 1.0):
        res = scipy.optimize.linprog(
            np.array([-sign, 0.0]), A_ub=-B, b_ub=y0, bounds=[(None, None)] * 2, method="highs"
        )
        outer = -res.fun * sign if res.status == 0 else 0.0
        inner = 0.0

        def feasible(t):
            _, fv = _line_minimum(inst, Pbar, (y0 + t * B[:, 0])[None, :], B[:, 1], tol)
            return np.isfinite(fv[0])

        if feasible(outer):
            ends.append(outer)
            continue
        for _ in range(n_bisect):
            mid = 0.5 * (inner + outer)
            if feasible(mid):
                inner = mid
            else:
                outer = mid
        ends.append(inner)
    return ends[0], ends[1]


def brute_force_oracle(instance: QcqpInstance, grid_resolution: int = 2048, tol: float = 1e-12) -> Solution:
    """Exhaustive minimum for instances with at most two degrees of freedom.

    The affine solution set of the equalities is parameterized by an
    orthonormal null-space basis. With two degrees of freedom the first
    coordinate is scanned on ``grid_resolution + 1`` evenly spaced lines
    (endpoints included, so doubling the resolution refines the grid); the
    second coordinate is resolved exactly on each line, since every
    constraint restricted to a line is an interval and the objective a
    one-dimensional quadratic.
    """
    inst = instance
    dof = degrees_of_freedom(inst)
    if dof > 2:
        raise DomainError(f"oracle supports at most 2 degrees of freedom, instance has {dof}")
    y0 = inst.y0
    f0 = objective(inst, y0)
    P0 = inst.P0.toarray()
    Pbar = 0.5 * (P0 + P0.T)
    conserved = returns_conserved(inst)
    M, _ = _linear_system(inst, conserved)
    B = scipy.linalg.null_space(M.toarray())
    if B.shape[1] == 0:
        y, f = y0, f0
    else:
        if B.shape[1] == 1:
            base = y0[None, :]
            direction = B[:, 0]
        else:
            t_lo, t_hi = _feasible_range(inst, Pbar, y0, B, tol)
            t = np.linspace(t_lo, t_hi, grid_resolution + 1)
            base = y0[None, :] + t[:, None] * B[:, 0][None, :]
            direction = B[:, 1]
        s, fvals = _line_minimum(inst, Pbar, base, direction, tol)
        j = int(np.argmin(fvals))
        if not np.isfinite(fvals[j]) or fvals[j] >= f0:
            y, f = y0, f0
        else:
            y = np.maximum(base[j] + s[j] * direction, 0.0)
            f = objective(inst, y)
    status = IMPROVED if f < f0 - 1e-12 * abs(f0) else BASELINE_RETURNED
    return Solution(
        y=np.array(y),
        objective_value=f,
        baseline_objective=f0,
        feasibility=constraint_residuals(inst, y),
        starts_used=0,
        status=status,
    )


def apply_solution(market: BipartiteMarket, y, *, tol: float = 1e-8, clamp: float = 1e-12) -> BipartiteMarket:
    """Market with holdings replaced by the allocation ``y``.

    Entries below ``clamp`` times the largest entry become exact zeros.
    """
    K, N = market.K, market.N
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (K * N,):
        raise DomainError(f"y must have length {K * N}, got shape {y.shape}")
    X = y.reshape(K, N, order="F")
    S, Vt = market.asset_totals, market.bank_totals
    scale = max(S.max(initial=0.0), Vt.max(initial=0.0), 1e-300)
    err = max(np.abs(X.sum(axis=1) - S).max(initial=0.0), np.abs(X.sum(axis=0) - Vt).max(initial=0.0)) / scale
    if err > tol or X.min(initial=0.0) < -tol * scale:
        raise DomainError(f"allocation violates market totals (relative residual {err:.3e})")
    X = np.where(X < clamp * X.max(initial=0.0), 0.0, X)
    return market.with_holdings(X)
