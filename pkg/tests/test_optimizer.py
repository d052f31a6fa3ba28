import dataclasses
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from overlapnet import optimizer as opt
from overlapnet.errors import DomainError
from overlapnet.market import make_market

from .conftest import random_covariance, random_market
from .corpora import oracle_corpus, small_instance, triple_sum_objective


def _instance(rng, K, N):
    m = random_market(rng, K, N, with_returns=True)
    return m, opt.build_qcqp(m, m.expected_returns, random_covariance(rng, K))


class TestAssembly:
    def test_dimensions_2x2(self, rng):
        _, inst = _instance(rng, 2, 2)
        assert inst.P0.shape == (4, 4)
        assert inst.A1.shape == (2, 4)
        assert inst.A2.shape == (4, 4)
        assert inst.c2.shape == (4,)
        assert len(inst.P) == 2 and all(Pi.shape == (4, 4) for Pi in inst.P)

    def test_p0_row_pattern(self):
        # equal bank totals give v = (0.5, 0.5)
        m = make_market([[1.0, 2.0], [3.0, 2.0]], [1.0, 2.0], depths=[10.0, 20.0])
        inst = opt.build_qcqp(m, np.zeros(2), np.eye(2))
        np.testing.assert_allclose(inst.P0.toarray()[0], [0.05, 0.0, 0.05, 0.0], rtol=1e-15)

    def test_block_structure(self, rng):
        m, inst = _instance(rng, 3, 4)
        Q = inst.covariance
        for i, Pi in enumerate(inst.P):
            dense = Pi.toarray()
            np.testing.assert_array_equal(dense[3 * i : 3 * i + 3, 3 * i : 3 * i + 3], Q)
            dense[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = 0
            assert not dense.any()
            assert np.linalg.eigvalsh(Pi.toarray()).min() >= -1e-14
        A1 = inst.A1.toarray()
        np.testing.assert_array_equal(A1[1, 3:6], -m.expected_returns)
        np.testing.assert_allclose(inst.c1, m.holdings.T @ m.expected_returns)
        np.testing.assert_array_equal(inst.c2, -np.concatenate([m.asset_totals, m.bank_totals]))

    def test_baseline_feasible(self, rng):
        for _ in range(20):
            _, inst = _instance(rng, rng.integers(1, 5), rng.integers(1, 5))
            res = inst.A2 @ inst.y0 + inst.c2
            assert np.abs(res).max() <= 1e-10 * np.abs(inst.c2).max()

    def test_full_scale_shape(self):
        from .corpora import full_scale_market

        sm = full_scale_market(0)
        inst = opt.build_qcqp(sm.market, sm.returns, sm.covariance)
        assert inst.n_vars == 1764
        assert inst.A2.shape[0] == 85
        assert inst.A1.shape[0] == 49
        assert len(inst.P) == 49

    def test_dimension_errors(self, rng):
        m = random_market(rng, 2, 3)
        with pytest.raises(DomainError, match="returns"):
            opt.build_qcqp(m, np.zeros(3), np.eye(2))
        with pytest.raises(DomainError, match="covariance"):
            opt.build_qcqp(m, np.zeros(2), np.eye(3))
        with pytest.raises(DomainError, match="symmetric"):
            opt.build_qcqp(m, np.zeros(2), [[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(DomainError, match="required"):
            opt.build_qcqp(m, np.zeros(2), None)

    def test_covariance_repair(self):
        Q = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.warns(UserWarning, match="semidefinite"):
            R = opt.repair_covariance(Q)
        assert np.linalg.eigvalsh(R).min() >= -1e-15
        ok = np.array([[2.0, 1.0], [1.0, 2.0]])
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            np.testing.assert_array_equal(opt.repair_covariance(ok), ok)


class TestObjectiveAndResiduals:
    def test_zero(self, rng):
        _, inst = _instance(rng, 2, 3)
        assert opt.objective(inst, np.zeros(6)) == 0.0

    def test_matches_triple_sum(self, rng):
        for _ in range(30):
            m, inst = _instance(rng, rng.integers(1, 7), rng.integers(1, 7))
            y = rng.uniform(0, 50, inst.n_vars)
            assert opt.objective(inst, y) == pytest.approx(triple_sum_objective(m, y), rel=1e-10)

    def test_toy_market_by_hand(self, toy_market):
        inst = opt.build_qcqp(toy_market, np.zeros(1), np.eye(1))
        # sum_j (v_j/E_j) x_j * (sum_i x_i) / D = (2/3*100 + 1/3*50)/10 * 150/1000
        assert opt.objective(inst, inst.y0) == pytest.approx(1.25, rel=1e-14)

    def test_baseline_residuals(self, rng):
        _, inst = _instance(rng, 3, 4)
        rep = opt.constraint_residuals(inst, inst.y0)
        assert max(rep.as_dict().values()) <= 1e-12

    def test_empty_allocation(self, rng):
        _, inst = _instance(rng, 3, 4)
        rep = opt.constraint_residuals(inst, np.zeros(inst.n_vars))
        assert rep.equality == pytest.approx(1.0)

    def test_single_perturbation_hits_two_rows(self, rng):
        _, inst = _instance(rng, 3, 4)
        y = inst.y0.copy()
        delta = 0.125
        y[5] += delta  # bank 1, asset 2
        rows = opt.constraint_residuals(inst, y).equality_rows
        hit = np.nonzero(np.abs(rows) > 1e-9)[0]
        assert hit.tolist() == [2, 3 + 1]
        np.testing.assert_allclose(rows[hit], delta, rtol=1e-12)


class TestSolve:
    def test_single_bank_is_pinned(self, rng):
        _, inst = _instance(rng, 3, 1)
        sol = opt.solve(inst)
        assert sol.status == opt.BASELINE_RETURNED
        np.testing.assert_array_equal(sol.y, inst.y0)

    def test_symmetric_2x2_matches_oracle(self):
        V = np.array([[80.0, 20.0], [20.0, 80.0]])
        r = np.full(2, 0.02)
        Q = np.array([[0.04, 0.01], [0.01, 0.04]])
        m = make_market(V, [10.0, 10.0], depths=[500.0, 500.0], expected_returns=r)
        inst = opt.build_qcqp(m, r, Q)
        sol = opt.solve(inst)
        ora = opt.brute_force_oracle(inst)
        assert abs(sol.objective_value - ora.objective_value) <= 1e-6 * abs(ora.objective_value)
        assert sol.objective_value <= sol.baseline_objective

    def test_deterministic(self):
        _, inst = oracle_corpus(2)[1]
        a = opt.solve(inst)
        b = opt.solve(inst)
        assert a.y.tobytes() == b.y.tobytes()
        assert a.objective_value == b.objective_value

    @settings(max_examples=8)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([(2, 2), (2, 3), (3, 3), (3, 4)]))
    def test_never_worse_and_feasible(self, seed, shape):
        _, inst = small_instance(np.random.default_rng(seed), *shape, equal_returns=False)
        cfg = opt.OptimizerConfig(n_starts=2)
        sol = opt.solve(inst, cfg)
        assert sol.objective_value <= sol.baseline_objective + 1e-12 * abs(sol.baseline_objective)
        assert sol.feasibility.within(cfg.eq_tol, cfg.ineq_tol)

    def test_infeasible_baseline_rejected(self, rng):
        _, inst = _instance(rng, 2, 2)
        bad = dataclasses.replace(inst, variance_bound=inst.variance_bound * 0.5)
        with pytest.raises(DomainError, match="baseline"):
            opt.solve(bad)

    def test_return_constraints_conserved(self, rng):
        _, inst = _instance(rng, 3, 3)
        assert opt.returns_conserved(inst)
        loose = dataclasses.replace(inst, c1=inst.c1 * 0.5)
        assert not opt.returns_conserved(loose)

    def test_spg_inner_solver(self):
        _, inst = oracle_corpus(3)[2]
        cfg = opt.OptimizerConfig(inner_solver="spg", n_starts=1)
        sol = opt.solve(inst, cfg)
        ora = opt.brute_force_oracle(inst)
        assert sol.objective_value == pytest.approx(ora.objective_value, rel=1e-6)

    @pytest.mark.parametrize(
        "kw",
        [{"eq_tol": 0.0}, {"ineq_tol": -1.0}, {"n_starts": 0}, {"max_iterations": 0}, {"inner_solver": "newton"}],
    )
    def test_config_validation(self, kw):
        with pytest.raises(DomainError):
            opt.OptimizerConfig(**kw)


class TestOracle:
    def test_single_bank(self, rng):
        _, inst = _instance(rng, 3, 1)
        ora = opt.brute_force_oracle(inst)
        np.testing.assert_array_equal(ora.y, inst.y0)

    def test_refuses_large_instances(self, rng):
        _, inst = _instance(rng, 3, 3)
        assert opt.degrees_of_freedom(inst) == 4
        with pytest.raises(DomainError, match="degrees of freedom"):
            opt.brute_force_oracle(inst)

    def test_unconstrained_line_matches_closed_form(self):
        V = np.array([[30.0, 70.0], [50.0, 10.0]])
        m = make_market(V, [4.0, 9.0], depths=[300.0, 120.0])
        inst = opt.build_qcqp(m, np.zeros(2), np.eye(2) * 1e-3)
        # switch the return and variance constraints off
        free = dataclasses.replace(inst, c1=np.full(2, -1e300), variance_bound=np.full(2, 1e300))
        ora = opt.brute_force_oracle(free)
        d = np.array([1.0, -1.0, -1.0, 1.0])
        P = inst.P0.toarray()
        Pbar = 0.5 * (P + P.T)
        a = d @ Pbar @ d
        b = 2 * inst.y0 @ Pbar @ d
        lo = max(-inst.y0[i] for i in (0, 3))
        hi = min(inst.y0[i] for i in (1, 2))
        cands = [lo, hi] + ([float(np.clip(-b / (2 * a), lo, hi))] if a > 0 else [])
        best = min(opt.objective(inst, inst.y0 + s * d) for s in cands)
        assert ora.objective_value == pytest.approx(min(best, opt.objective(inst, inst.y0)), rel=1e-12)

    def test_refinement_never_increases_minimum(self):
        for _, inst in oracle_corpus(8, seed=3):
            if opt.degrees_of_freedom(inst) != 2:
                continue
            prev = np.inf
            for g in (16, 32, 64, 128):
                f = opt.brute_force_oracle(inst, grid_resolution=g).objective_value
                assert f <= prev + 1e-15 * abs(prev if np.isfinite(prev) else f)
                prev = f

    def test_oracle_point_feasible(self):
        for _, inst in oracle_corpus(8):
            ora = opt.brute_force_oracle(inst)
            assert ora.feasibility.within(1e-8, 1e-8)
            assert ora.objective_value <= ora.baseline_objective


class TestApplySolution:
    def test_identity(self, rng):
        m, inst = _instance(rng, 3, 4)
        out = opt.apply_solution(m, inst.y0)
        np.testing.assert_array_equal(out.holdings, m.holdings)
        np.testing.assert_array_equal(out.depths, m.depths)
        np.testing.assert_array_equal(out.equities, m.equities)

    def test_sums_preserved(self, rng):
        m, inst = _instance(rng, 3, 4)
        X = np.array(m.holdings)
        # move mass around a rectangle: row and column sums stay fixed
        eps = 0.5 * min(X[0, 0], X[1, 1], 1.0)
        X[0, 0] -= eps
        X[1, 1] -= eps
        X[0, 1] += eps
        X[1, 0] += eps
        out = opt.apply_solution(m, X.reshape(-1, order="F"))
        np.testing.assert_allclose(out.asset_totals, m.asset_totals, rtol=1e-12)
        np.testing.assert_allclose(out.bank_totals, m.bank_totals, rtol=1e-12)

    def test_clamps_dust(self):
        m = make_market([[1e-13, 5.0], [4.0, 6.0]], [1.0, 1.0], depths=[10.0, 10.0])
        out = opt.apply_solution(m, m.holdings.reshape(-1, order="F"))
        assert out.holdings[0, 0] == 0.0
        assert out.holdings[1, 1] == 6.0

    def test_infeasible(self, rng):
        m, inst = _instance(rng, 2, 2)
        with pytest.raises(DomainError, match="totals"):
            opt.apply_solution(m, inst.y0 * 1.1)
        with pytest.raises(DomainError):
            opt.apply_solution(m, inst.y0[:-1])
