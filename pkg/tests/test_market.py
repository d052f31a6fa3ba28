import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from overlapnet.errors import DomainError
from overlapnet.market import (
    Asset,
    Bank,
    BipartiteMarket,
    check_market,
    economic_values,
    exposure_matrix,
    make_market,
    market_depth,
    price_impact,
    project_overlap,
    validate_market,
)

from .conftest import random_market


def triple_loop_exposure(V, D):
    K, N = V.shape
    w = np.zeros((N, N))
    for i in range(N):
        for j in range(N):
            w[i, j] = sum(V[k, i] * V[k, j] / D[k] for k in range(K))
    return w


class TestDepthAndImpact:
    def test_depth_examples(self):
        assert market_depth(1e6, 0.01, 0.4) == pytest.approx(4e7, rel=1e-15)
        assert market_depth(5e8, 0.02, 0.4) == pytest.approx(1e10, rel=1e-15)

    def test_depth_linear_in_c(self):
        assert market_depth(3.7e7, 0.013, 2.0) == 2.0 * market_depth(3.7e7, 0.013, 1.0)

    @pytest.mark.parametrize("field,args", [("adv", (0.0, 0.1, 0.4)), ("volatility", (1.0, -0.1, 0.4)), ("c", (1.0, 0.1, 0.0))])
    def test_depth_rejects_nonpositive(self, field, args):
        with pytest.raises(DomainError, match=field):
            market_depth(*args)

    def test_impact_examples(self):
        assert price_impact(1e6, 1e8) == pytest.approx(0.01, rel=1e-15)
        assert price_impact(0.0, 123.0) == 0.0
        D = 4.2e9
        assert price_impact(-D / 100, D) == pytest.approx(-0.01, rel=1e-15)

    def test_impact_rejects_bad_depth(self):
        with pytest.raises(DomainError):
            price_impact(1.0, 0.0)


class TestProjection:
    def test_k1_n2_example(self, toy_market):
        net = project_overlap(toy_market)
        np.testing.assert_allclose(net.exposure, [[10.0, 5.0], [5.0, 2.5]], rtol=1e-15)
        assert net.impact[0, 1] == 0.5
        assert net.impact[0, 0] == 1.0
        np.testing.assert_allclose(net.economic_value, [2 / 3, 1 / 3], rtol=1e-15)

    def test_zero_holdings(self):
        m = make_market(np.zeros((2, 3)), [1.0, 1.0, 1.0], depths=[10.0, 10.0])
        assert not exposure_matrix(m.holdings, m.depths).any()
        # economic values are undefined for an empty market, but the projection still works
        net = project_overlap(m)
        assert not net.impact.any()

    def test_matches_triple_loop(self, rng):
        for _ in range(50):
            m = random_market(rng, rng.integers(1, 6), rng.integers(1, 6))
            net = project_overlap(m)
            ref = triple_loop_exposure(m.holdings, m.depths)
            np.testing.assert_allclose(net.exposure, ref, rtol=1e-12)
            assert np.array_equal(net.exposure, net.exposure.T)

    def test_depth_scaling(self, rng):
        m = random_market(rng, 4, 5)
        lam = 8.0
        w1 = project_overlap(m).exposure
        w2 = project_overlap(m.scale_depths(lam)).exposure
        np.testing.assert_array_equal(w2, w1 / lam)

    def test_impact_cap(self, rng):
        m = random_market(rng, 3, 4)
        net = project_overlap(m)
        E = m.equities
        assert net.impact.min() >= 0 and net.impact.max() <= 1
        assert np.all(net.impact[net.exposure >= E[None, :]] == 1.0)

    @given(st.integers(0, 2**32 - 1))
    def test_economic_values_normalized(self, seed):
        m = random_market(np.random.default_rng(seed), 3, 4)
        assert abs(economic_values(m).sum() - 1.0) <= 1e-12

    def test_economic_values_examples(self):
        two = make_market([[1.0, 2.0], [2.0, 1.0]], [1, 1], depths=[1, 1])
        np.testing.assert_allclose(economic_values(two), [0.5, 0.5])
        one = make_market([[3.0], [4.0]], [1.0], depths=[1, 1])
        assert economic_values(one).tolist() == [1.0]
        m = make_market([[40.0, 100.0], [60.0, 200.0]], [1, 1], depths=[1, 1])
        np.testing.assert_allclose(economic_values(m), [0.25, 0.75], rtol=1e-15)

    def test_economic_values_zero_total(self):
        with pytest.raises(DomainError):
            economic_values(make_market(np.zeros((1, 2)), [1, 1], depths=[1]))

    def test_nonpositive_equity_rejected_by_validation(self):
        m = make_market([[1.0, 1.0]], [1.0, 0.0], depths=[10.0])
        with pytest.raises(DomainError, match="equity"):
            check_market(m)


class TestValidation:
    def test_valid(self, rng):
        assert validate_market(random_market(rng, 3, 6)) == []

    def test_single_negative_holding(self, rng):
        m = random_market(rng, 3, 6)
        V = np.array(m.holdings)
        V[2, 5] = -1.0
        report = validate_market(m.with_holdings(V))
        assert [(v.rule, v.k, v.i) for v in report] == [("holding_nonnegative", 2, 5)]

    def test_zero_equity(self):
        m = make_market(np.ones((2, 4)), [1.0, 1.0, 1.0, 0.0], depths=[1.0, 1.0])
        report = validate_market(m)
        assert [(v.rule, v.i) for v in report] == [("bank_equity", 3)]
        assert "B4" in report[0].message

    def test_duplicates_and_nan(self):
        assets = [Asset("X", 1.0, 0.1), Asset("X", 1.0, 0.1)]
        banks = [Bank("B", 1.0), Bank("C", 1.0)]
        m = BipartiteMarket(assets, banks, [[1.0, np.nan], [1.0, 1.0]])
        rules = sorted(v.rule for v in validate_market(m))
        assert rules == ["duplicate_asset_id", "holding_finite"]

    def test_shape_mismatch(self):
        with pytest.raises(DomainError, match="shape"):
            BipartiteMarket([Asset("X", 1.0, 0.1)], [Bank("B", 1.0)], np.ones((2, 1)))

    def test_depth_derived_from_adv(self):
        m = make_market([[1.0]], [1.0], adv=[1e6], volatility=[0.01], depth_scale=0.4)
        assert m.depths[0] == pytest.approx(4e7)
        assert m.with_depth_scale(0.8).depths[0] == pytest.approx(8e7)

    def test_explicit_depth_rescaled_by_c(self):
        m = make_market([[1.0]], [1.0], depths=[100.0], depth_scale=0.4)
        assert m.with_depth_scale(0.2).depths[0] == pytest.approx(50.0)
