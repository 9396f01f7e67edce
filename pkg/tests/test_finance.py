"""Option pricing and loss-set construction tests.

Greeks are checked against put-call parity, finite differences of the price,
and a hand-evaluated ATM case; the quadratic loss set is checked as a local
expansion of the actual one-period book P&L.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.stats import norm

from dris import DegenerateSetError
from dris.finance import (
    Greeks,
    OptionPosition,
    PortfolioSpec,
    aggregate_greeks,
    benchmark_portfolio,
    bs_greeks,
    build_loss_set,
)

ATM = dict(spot=100.0, strike=100.0, vol=0.3, rate=0.05, maturity=0.5)


def bs_price(kind: str, spot: float, strike: float, vol: float, rate: float, maturity: float) -> float:
    d1 = (math.log(spot / strike) + (rate + 0.5 * vol * vol) * maturity) / (vol * math.sqrt(maturity))
    d2 = d1 - vol * math.sqrt(maturity)
    if kind == "call":
        return spot * norm.cdf(d1) - strike * math.exp(-rate * maturity) * norm.cdf(d2)
    return strike * math.exp(-rate * maturity) * norm.cdf(-d2) - spot * norm.cdf(-d1)


class TestGreeks:
    def test_put_call_parity(self):
        call = bs_greeks("call", **ATM)
        put = bs_greeks("put", **ATM)
        forward = ATM["spot"] - ATM["strike"] * math.exp(-ATM["rate"] * ATM["maturity"])
        assert call.price - put.price == pytest.approx(forward, abs=1e-10)
        assert call.delta - put.delta == pytest.approx(1.0, abs=1e-12)
        assert call.gamma == pytest.approx(put.gamma, rel=1e-12)

    def test_atm_values_by_hand(self):
        # d1 = (0 + (0.05 + 0.045) * 0.5) / (0.3 sqrt(0.5)) = 0.2239...
        d1 = (0.05 + 0.5 * 0.09) * 0.5 / (0.3 * math.sqrt(0.5))
        call = bs_greeks("call", **ATM)
        assert call.delta == pytest.approx(float(norm.cdf(d1)), abs=1e-12)
        assert call.delta == pytest.approx(0.5885891, abs=5e-7)
        assert call.price == pytest.approx(9.6348766, abs=5e-6)
        assert bs_greeks("put", **ATM).price == pytest.approx(7.1658678, abs=5e-6)
        assert call.gamma == pytest.approx(0.0183407, abs=5e-7)

    @pytest.mark.parametrize("kind", ["call", "put"])
    def test_delta_gamma_theta_match_finite_differences(self, kind):
        eps = 1e-4
        g = bs_greeks(kind, **ATM)
        up = bs_price(kind, ATM["spot"] + eps, 100.0, 0.3, 0.05, 0.5)
        dn = bs_price(kind, ATM["spot"] - eps, 100.0, 0.3, 0.05, 0.5)
        mid = bs_price(kind, **ATM)
        assert g.delta == pytest.approx((up - dn) / (2 * eps), abs=1e-6)
        assert g.gamma == pytest.approx((up - 2 * mid + dn) / eps**2, abs=1e-4)
        # theta is the derivative along calendar time, i.e. minus the
        # maturity derivative
        later = bs_price(kind, 100.0, 100.0, 0.3, 0.05, 0.5 - eps)
        earlier = bs_price(kind, 100.0, 100.0, 0.3, 0.05, 0.5 + eps)
        assert g.theta == pytest.approx((later - earlier) / (2 * eps), abs=1e-5)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            bs_greeks("straddle", **ATM)
        with pytest.raises(ValueError):
            bs_greeks("call", spot=-1.0, strike=100.0, vol=0.3, rate=0.05, maturity=0.5)
        with pytest.raises(ValueError):
            bs_greeks("call", spot=100.0, strike=100.0, vol=0.3, rate=0.05, maturity=0.0)


class TestPortfolioSpec:
    def test_aggregate_is_quantity_weighted(self):
        spec = benchmark_portfolio()
        call = bs_greeks("call", **ATM)
        put = bs_greeks("put", **ATM)
        agg = aggregate_greeks(spec)
        assert agg.delta == pytest.approx(10 * call.delta + 5 * put.delta, rel=1e-12)
        assert agg.gamma == pytest.approx(15 * call.gamma, rel=1e-12)
        assert agg.theta == pytest.approx(10 * call.theta + 5 * put.theta, rel=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            OptionPosition(kind="call", strike=-5.0, maturity=0.5, quantity=1.0)
        with pytest.raises(ValueError):
            PortfolioSpec(
                n_assets=0,
                spot=100.0,
                vol=0.3,
                rate=0.05,
                dt=0.04,
                positions=(OptionPosition("call", 100.0, 0.5, 1.0),),
                loss_threshold=120.0,
            )
        with pytest.raises(ValueError):
            PortfolioSpec(
                n_assets=5,
                spot=100.0,
                vol=0.3,
                rate=0.05,
                dt=0.04,
                positions=(),
                loss_threshold=120.0,
            )


class TestLossSet:
    def test_quadratic_matches_pnl_expansion(self):
        # The set must encode loss >= threshold for the delta-gamma-theta
        # P&L of the book over one period. r_scale divides the shock, so a
        # point x of the r-level set corresponds to the spot moves
        # sigma_dt * S * x / r; rarity then grows with r as the same physical
        # event recedes in the standardized coordinates.
        spec = benchmark_portfolio()
        r = 3.0
        q = build_loss_set(spec, r_scale=r)
        g = aggregate_greeks(spec)
        sigma_dt = spec.vol * math.sqrt(spec.dt)
        rng = np.random.default_rng(8)
        for x in rng.normal(size=(20, spec.n_assets)):
            ds = sigma_dt * spec.spot * x / r
            pnl = g.theta * spec.dt * spec.n_assets + g.delta * ds.sum() + 0.5 * g.gamma * (ds**2).sum()
            loss = -pnl
            q_val = q.a + q.b @ x + q.c @ x**2
            assert q_val == pytest.approx(loss, rel=1e-12, abs=1e-9)

    def test_scale_moves_linear_and_quadratic_terms(self):
        spec = benchmark_portfolio()
        q1 = build_loss_set(spec, r_scale=1.0)
        q3 = build_loss_set(spec, r_scale=3.0)
        assert np.allclose(q3.b, q1.b / 3.0)
        assert np.allclose(q3.c, q1.c / 9.0)
        assert q3.a == q1.a
        assert q3.threshold == q1.threshold

    def test_long_gamma_book_coefficients_signs(self):
        q = build_loss_set(benchmark_portfolio(), r_scale=2.0)
        assert np.all(q.b < 0.0)  # long delta: losses need downward moves
        assert np.all(q.c < 0.0)  # long gamma: quadratic caps the loss

    def test_per_day_convention_rescales_horizon(self):
        spec = benchmark_portfolio()
        q_years = build_loss_set(spec, r_scale=2.0, convention="sqrt_dt")
        q_days = build_loss_set(spec, r_scale=2.0, convention="per_day")
        # dt = 0.04 read as days over 250 gives an effective 0.00016 years
        ratio = math.sqrt(spec.dt / spec.trading_days) / math.sqrt(spec.dt)
        assert np.allclose(q_days.b, q_years.b * ratio)
        assert np.allclose(q_days.c, q_years.c * ratio**2)

    def test_zero_gamma_book_collapses_to_halfspace_coeffs(self):
        # long one call, short one put: gamma cancels exactly, delta is 1
        spec = PortfolioSpec(
            n_assets=2,
            spot=100.0,
            vol=0.3,
            rate=0.05,
            dt=0.04,
            positions=(
                OptionPosition("call", 100.0, 0.5, 1.0),
                OptionPosition("put", 100.0, 0.5, -1.0),
            ),
            loss_threshold=20.0,
        )
        q = build_loss_set(spec, r_scale=1.0)
        assert np.allclose(q.c, 0.0)
        assert np.all(q.b < 0.0)

    def test_short_gamma_book_rejected(self):
        spec = PortfolioSpec(
            n_assets=2,
            spot=100.0,
            vol=0.3,
            rate=0.05,
            dt=0.04,
            positions=(OptionPosition("call", 100.0, 0.5, -1.0),),
            loss_threshold=5.0,
        )
        with pytest.raises(DegenerateSetError, match="short-gamma"):
            build_loss_set(spec, r_scale=1.0)

    def test_argument_validation(self):
        spec = benchmark_portfolio()
        with pytest.raises(ValueError):
            build_loss_set(spec, r_scale=0.0)
        with pytest.raises(ValueError):
            build_loss_set(spec, r_scale=1.0, convention="weekly")
