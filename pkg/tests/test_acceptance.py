"""Acceptance suite: one test per criterion, each recorded as a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v``; the per-criterion verdicts are
repeated in the terminal summary under "acceptance criteria".
"""

import math
import time

import numpy as np
import pytest

from overlapnet import optimizer as opt
from overlapnet.analytics import bipartite_density, hhi, projection_stats, rank_correlation, sweep_depth_scale
from overlapnet.debtrank import debtrank_all, debtrank_seed, market_debtrank
from overlapnet.firesale import FireSaleConfig, contagion_probability, default_bank, initial_state, run_scenario, step
from overlapnet.market import make_market, project_overlap
from overlapnet.pipeline import DEFAULT_SWEEP, RunConfig, reports_equal, run_pipeline

from .conftest import ACCEPTANCE, random_market
from .corpora import oracle_corpus, full_scale_market, small_instance, triple_sum_objective

FULL_SCALE_SEEDS = range(10)


def verdict(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def _triple_loop_exposure(V, D):
    K, N = V.shape
    w = np.zeros((N, N))
    for i in range(N):
        for j in range(N):
            for k in range(K):
                w[i, j] += V[k, i] * V[k, j] / D[k]
    return w


def test_criterion_1_projection_oracle():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    symmetric = True
    for _ in range(200):
        m = random_market(rng, int(rng.integers(1, 7)), int(rng.integers(1, 7)))
        w = project_overlap(m).exposure
        ref = _triple_loop_exposure(m.holdings, m.depths)
        nz = ref != 0
        worst = max(worst, float(np.max(np.abs(w[nz] - ref[nz]) / ref[nz], initial=0.0)))
        symmetric &= bool(np.array_equal(w, w.T)) and bool(np.all(w[~nz] == 0))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and symmetric and elapsed < 5.0
    verdict(1, ok, f"max rel err {worst:.2e}, symmetric={symmetric}, {elapsed:.2f} s")


def _nested_pair(rng):
    N = int(rng.integers(2, 9))
    p = rng.uniform(0.2, 1.0)
    W1 = rng.uniform(0, 1, (N, N)) * (rng.random((N, N)) < p)
    W2 = np.minimum(1.0, W1 + rng.uniform(0, 1, (N, N)) * (rng.random((N, N)) < p))
    np.fill_diagonal(W1, 0.0)
    np.fill_diagonal(W2, 0.0)
    v = rng.random(N)
    return W1, W2, v / v.sum()


def test_criterion_2_debtrank():
    W = np.array([[0.0, 0.5], [0.0, 0.0]])
    traces = [
        abs(debtrank_seed(W, [0.5, 0.5], {0}).value - 0.25),
        abs(debtrank_seed(np.zeros((3, 3)), np.ones(3) / 3, {1}).value - 0.0),
        abs(debtrank_seed(np.ones((3, 3)) - np.eye(3), np.ones(3) / 3, {0}).value - (1 - 1 / 3)),
    ]
    rng = np.random.default_rng(0)
    violations = 0
    max_steps_over = 0
    for _ in range(100):
        W1, W2, v = _nested_pair(rng)
        a = debtrank_all(W1, v)
        b = debtrank_all(W2, v)
        violations += bool(np.any(b.per_bank < a.per_bank))
        N = v.size
        max_steps_over = max(max_steps_over, int(a.steps.max()) - (N + 1), int(b.steps.max()) - (N + 1))
    ok = max(traces) <= 1e-15 and violations == 0 and max_steps_over <= 0
    verdict(2, ok, f"hand-trace errors {max(traces):.1e}, monotonicity violations {violations}/100, steps within N+1: {max_steps_over <= 0}")


def test_criterion_3_qcqp_assembly():
    rng = np.random.default_rng(3)
    worst_obj = worst_eq = 0.0
    for _ in range(50):
        K, N = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        m, inst = small_instance(rng, K, N, bool(rng.integers(2)))
        y = rng.uniform(0.0, 2.0, inst.n_vars) * inst.y0.max()
        quad = 0.5 * y @ (inst.P0.T + inst.P0) @ y
        direct = triple_sum_objective(m, y)
        worst_obj = max(worst_obj, abs(quad - direct) / abs(direct))
        res = inst.A2 @ inst.y0 + inst.c2
        worst_eq = max(worst_eq, float(np.abs(res).max() / np.abs(inst.c2).max()))
    m, inst = small_instance(rng, 2, 2, False)
    dims = (inst.P0.shape, inst.A1.shape, inst.A2.shape) == ((4, 4), (2, 4), (4, 4))
    ok = worst_obj <= 1e-10 and worst_eq <= 1e-10 and dims
    verdict(3, ok, f"objective rel err {worst_obj:.1e}, A2 y0 + c2 rel {worst_eq:.1e}, K=N=2 dims ok={dims}")


def test_criterion_4_solver_vs_oracle():
    t0 = time.perf_counter()
    worst_gap = worst_res = 0.0
    never_worse = True
    corpus = oracle_corpus(24)
    for _, inst in corpus:
        sol = opt.solve(inst)
        ora = opt.brute_force_oracle(inst)
        worst_gap = max(worst_gap, abs(sol.objective_value - ora.objective_value) / abs(ora.objective_value))
        never_worse &= sol.objective_value <= sol.baseline_objective
        worst_res = max(worst_res, max(sol.feasibility.as_dict().values()))
    elapsed = time.perf_counter() - t0
    ok = worst_gap <= 1e-6 and never_worse and worst_res <= 1e-8 and elapsed < 60.0
    verdict(
        4,
        ok,
        f"{len(corpus)} instances, max rel gap {worst_gap:.1e}, never worse={never_worse}, max residual {worst_res:.1e}, {elapsed:.1f} s",
    )


@pytest.fixture(scope="module")
def full_scale_runs():
    """Original and optimized full-scale markets, one optimizer start each."""
    out = {}
    for seed in FULL_SCALE_SEEDS:
        sm = full_scale_market(seed)
        inst = opt.build_qcqp(sm.market, sm.returns, sm.covariance)
        sol = opt.solve(inst, opt.OptimizerConfig(n_starts=1))
        out[seed] = (sm.market, opt.apply_solution(sm.market, sol.y))
    return out


@pytest.mark.slow
def test_criterion_5_full_scale():
    sm = full_scale_market(0)
    m = sm.market
    t0 = time.perf_counter()
    inst = opt.build_qcqp(m, sm.returns, sm.covariance)
    sol = opt.solve(inst)
    opt_market = opt.apply_solution(m, sol.y)
    elapsed = time.perf_counter() - t0
    shape = (inst.n_vars, inst.A2.shape[0] + inst.A1.shape[0], m.K, m.N)
    density = bipartite_density(m)
    r0, r1 = market_debtrank(m).mean, market_debtrank(opt_market).mean
    feasible = max(sol.feasibility.as_dict().values()) <= 1e-8
    ok = (
        shape == (1764, 134, 36, 49)
        and inst.A2.shape[0] == 85
        and abs(density - 0.51) <= 0.02
        and feasible
        and sol.objective_value <= sol.baseline_objective
        and r1 < r0
        and elapsed < 600.0
    )
    verdict(
        5,
        ok,
        f"{inst.n_vars} variables, {inst.A2.shape[0]} equalities, density {density:.3f}, "
        f"R-bar {r0:.4f} -> {r1:.4f}, objective ratio {sol.objective_value / sol.baseline_objective:.3f}, {elapsed:.0f} s",
    )


def test_criterion_6_firesale_limits():
    rng = np.random.default_rng(6)
    markets = [full_scale_market(0).market] + [random_market(rng, 5, 8) for _ in range(5)]
    deep_ok = True
    min_fraction = 1.0
    for m in markets:
        deep = m.scale_depths(1e12)
        for cfg in (FireSaleConfig.moderate(), FireSaleConfig.extreme()):
            rep = contagion_probability(deep, cfg)
            deep_ok &= rep.probability == 0.0
            min_fraction = min(min_fraction, min(r.final_market_fraction for r in rep.results))

    # unbounded cap: after the opening liquidation only fresh defaulters unload
    unbounded = FireSaleConfig(leverage_cap=math.inf)
    quiet = True
    for m in markets:
        for i in range(m.N):
            state, _ = step(default_bank(initial_state(m, unbounded), i), liquidate_only=True)
            for _ in range(m.N + 2):
                pending = state.pending
                state, flow = step(state)
                quiet &= bool(np.all(flow.gamma[~pending] == 0.0))
            res = run_scenario(m, unbounded, i)
            if not res.induced_defaults:
                quiet &= bool(np.all(res.sold_path[1:] == 0.0))

    # post-sale leverage equals the cap for partial sellers
    worst = 0.0
    partial = 0
    for m in markets:
        deep = m.scale_depths(1e12)
        for cap in (5.0, 15.0, 33.0):
            s1, flow = step(initial_state(deep, FireSaleConfig(leverage_cap=cap, epsilon=0.0)))
            sel = (flow.gamma > 0) & (flow.gamma < 1)
            partial += int(sel.sum())
            if sel.any():
                worst = max(worst, float(np.abs(s1.leverage[sel] - cap).max()))
    ok = deep_ok and min_fraction >= 0.999 and quiet and partial > 0 and worst <= 1e-9
    verdict(
        6,
        ok,
        f"deep markets contagion-free={deep_ok}, min final fraction {min_fraction:.6f}, "
        f"no selling under unbounded cap={quiet}, leverage identity max err {worst:.1e} over {partial} partial sellers",
    )


@pytest.mark.slow
def test_criterion_7_cross_network_dominance(full_scale_runs):
    rows = []
    ok = True
    for seed, (m0, m1) in full_scale_runs.items():
        probs = []
        for name in ("moderate", "extreme"):
            cfg = FireSaleConfig.scenario(name)
            assert cfg.epsilon == 0.025
            a = contagion_probability(m0, cfg).probability
            b = contagion_probability(m1, cfg).probability
            ok &= b <= a
            probs.append(f"{a:.3f}->{b:.3f}")
        rows.append(f"seed {seed}: " + ", ".join(probs))
    verdict(7, ok, f"{len(rows)} markets (moderate, extreme): " + "; ".join(rows))


def test_criterion_8_analytics():
    uniform = all(
        np.all(hhi(make_market(np.full((K, 3), 2.0), np.ones(3), depths=np.ones(K))).per_bank_hhi == 1.0 / K)
        for K in (1, 2, 3, 5, 7, 36)
    )
    tri = np.ones((3, 3)) - np.eye(3)
    star = np.zeros((4, 4))
    star[0, 1:] = star[1:, 0] = 1.0
    clustering = projection_stats(tri).clustering_unweighted == 1.0 and projection_stats(star).clustering_unweighted == 0.0
    x = np.array([0.3, 0.1, 0.7, 0.2, 0.9, 0.4])
    r_pos, r_neg = rank_correlation(x, x), rank_correlation(x, -x)
    ranks = (r_pos.spearman_rho, r_pos.kendall_tau, r_neg.spearman_rho, r_neg.kendall_tau) == (1.0, 1.0, -1.0, -1.0)
    rng = np.random.default_rng(8)
    sweep_ok = True
    for _ in range(10):
        m = random_market(rng, int(rng.integers(2, 7)), int(rng.integers(2, 9)))
        curve = sweep_depth_scale(m, DEFAULT_SWEEP).original
        sweep_ok &= curve.size == 10 and bool(np.all(np.diff(curve) <= 0.0))
    ok = uniform and clustering and ranks and sweep_ok
    verdict(8, ok, f"HHI 1/K={uniform}, triangle/star={clustering}, rank +-1={ranks}, R-bar(c) non-increasing={sweep_ok}")


def test_criterion_9_determinism(tmp_path):
    from pathlib import Path

    import overlapnet

    fixture = Path(overlapnet.__file__).parent / "data" / "fixture" / "config.json"
    codes = []
    for name in ("a", "b"):
        cfg = RunConfig.from_json(fixture, output_dir=str(tmp_path / name))
        codes.append(run_pipeline(cfg).exit_code)
    same = reports_equal(tmp_path / "a", tmp_path / "b")
    verdict(9, codes == [0, 0] and same, f"exit codes {codes}, reports identical={same}")
