"""Delta-gamma loss sets for Black-Scholes option portfolios.

Builds the quadratic superlevel target ``{x : a + sum_i (b_i x_i + c_i x_i^2)
>= ell}`` describing "portfolio loss over one rebalancing interval exceeds
ell" for a book of vanilla options on independent assets.

Price moves over the interval are modeled as ``dS_i = sigma_dt * S_i * X_i``
with ``X_i`` standard normal and ``sigma_dt = vol * sqrt(dt)``, ``dt`` in
years. The loss is the negative of the second-order P&L expansion

    P&L = sum_assets (theta_a * dt + delta_a * dS_i + gamma_a * dS_i^2 / 2),

so ``a = -(sum_a theta_a) * dt``, ``b_i = -delta_a * sigma_dt * S_i`` and
``c_i = -gamma_a * sigma_dt^2 * S_i^2 / 2``. The risk factor is scaled by
``1/r_scale`` to sweep rarity, which divides ``b_i`` by r and ``c_i`` by r^2.
Long-gamma books give ``c_i <= 0``, the concavity the geometry layer
requires; short-gamma books are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr

from .errors import DegenerateSetError
from .geometry import QuadraticSuperlevel

_SQRT_2PI = math.sqrt(2.0 * math.pi)

_KINDS = ("call", "put")
_CONVENTIONS = ("sqrt_dt", "per_day")


class Greeks(NamedTuple):
    """Black-Scholes value and sensitivities for one unit of an option.

    ``theta`` is the calendar-time decay per year of a long position;
    ``gamma`` is identical for calls and puts at equal parameters.
    """

    price: float
    delta: float
    gamma: float
    theta: float


def bs_greeks(kind: str, spot: float, strike: float, vol: float, rate: float, maturity: float) -> Greeks:
    """Price, delta, gamma and per-year theta of a vanilla European option.

    ``kind`` is ``"call"`` or ``"put"``. Spot, strike, vol and maturity must
    be positive; the rate may take any sign. Put-call parity
    ``call - put = spot - strike * exp(-rate * maturity)`` holds to roundoff.
    """
    if kind not in _KINDS:
        raise ValueError(f"kind must be one of {_KINDS}, got {kind!r}")
    if not (spot > 0.0 and strike > 0.0 and vol > 0.0):
        raise ValueError("spot, strike and vol must be positive")
    if not maturity > 0.0:
        raise ValueError("maturity must be positive")

    sig_rt = vol * math.sqrt(maturity)
    d1 = (math.log(spot / strike) + (rate + 0.5 * vol * vol) * maturity) / sig_rt
    d2 = d1 - sig_rt
    pdf_d1 = math.exp(-0.5 * d1 * d1) / _SQRT_2PI
    disc_k = strike * math.exp(-rate * maturity)

    gamma = pdf_d1 / (spot * sig_rt)
    time_decay = -spot * pdf_d1 * vol / (2.0 * math.sqrt(maturity))
    if kind == "call":
        price = spot * float(ndtr(d1)) - disc_k * float(ndtr(d2))
        delta = float(ndtr(d1))
        theta = time_decay - rate * disc_k * float(ndtr(d2))
    else:
        price = disc_k * float(ndtr(-d2)) - spot * float(ndtr(-d1))
        delta = float(ndtr(d1)) - 1.0
        theta = time_decay + rate * disc_k * float(ndtr(-d2))
    return Greeks(price=price, delta=delta, gamma=gamma, theta=theta)


@dataclass(frozen=True)
class OptionPosition:
    """A signed quantity of one vanilla option series."""

    kind: str
    strike: float
    maturity: float
    quantity: float

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        if not (np.isfinite(self.strike) and self.strike > 0.0):
            raise ValueError("strike must be positive")
        if not (np.isfinite(self.maturity) and self.maturity > 0.0):
            raise ValueError("maturity must be positive")
        if not np.isfinite(self.quantity):
            raise ValueError("quantity must be finite")


@dataclass(frozen=True)
class PortfolioSpec:
    """An option book replicated across independent, identical assets.

    Every asset carries the same spot, volatility and position list, so the
    per-asset greeks are computed once. ``dt`` is the P&L horizon in years;
    ``loss_threshold`` is the loss level whose exceedance defines the target
    event.
    """

    n_assets: int
    spot: float
    vol: float
    rate: float
    dt: float
    positions: tuple[OptionPosition, ...]
    loss_threshold: float
    trading_days: int = 250

    def __post_init__(self):
        object.__setattr__(self, "positions", tuple(self.positions))
        if self.n_assets < 1:
            raise ValueError("n_assets must be at least 1")
        if not (self.spot > 0.0 and self.vol > 0.0 and self.dt > 0.0):
            raise ValueError("spot, vol and dt must be positive")
        if not np.isfinite(self.rate):
            raise ValueError("rate must be finite")
        if not self.loss_threshold > 0.0:
            raise ValueError("loss_threshold must be positive")
        if self.trading_days < 1:
            raise ValueError("trading_days must be at least 1")
        if not self.positions:
            raise ValueError("positions must be nonempty")


def aggregate_greeks(spec: PortfolioSpec) -> Greeks:
    """Quantity-weighted greeks of one asset's position list."""
    price = delta = gamma = theta = 0.0
    for pos in spec.positions:
        g = bs_greeks(pos.kind, spec.spot, pos.strike, spec.vol, spec.rate, pos.maturity)
        price += pos.quantity * g.price
        delta += pos.quantity * g.delta
        gamma += pos.quantity * g.gamma
        theta += pos.quantity * g.theta
    return Greeks(price=price, delta=delta, gamma=gamma, theta=theta)


def build_loss_set(spec: PortfolioSpec, r_scale: float, convention: str = "sqrt_dt") -> QuadraticSuperlevel:
    """Quadratic superlevel target for the event loss >= loss_threshold.

    ``convention`` selects the horizon units: ``"sqrt_dt"`` reads ``spec.dt``
    as years (per-interval vol ``vol * sqrt(dt)``), the ``"per_day"`` fallback
    reads it as a count of trading days and divides by ``trading_days``
    first. Raises ``DegenerateSetError`` when the book is short gamma, since
    that flips the loss quadratic convex and the set leaves the supported
    class.
    """
    if not r_scale > 0.0:
        raise ValueError("r_scale must be positive")
    if convention not in _CONVENTIONS:
        raise ValueError(f"convention must be one of {_CONVENTIONS}, got {convention!r}")

    g = aggregate_greeks(spec)
    if g.gamma < 0.0:
        raise DegenerateSetError(
            "short-gamma book: the loss quadratic is convex (c_i > 0), outside the supported target class"
        )

    eff_dt = spec.dt if convention == "sqrt_dt" else spec.dt / spec.trading_days
    sigma_dt = spec.vol * math.sqrt(eff_dt)
    a = -spec.n_assets * g.theta * eff_dt
    b_one = -g.delta * sigma_dt * spec.spot / r_scale
    c_one = -0.5 * g.gamma * sigma_dt**2 * spec.spot**2 / r_scale**2
    return QuadraticSuperlevel(
        a=a,
        b=np.full(spec.n_assets, b_one),
        c=np.full(spec.n_assets, c_one),
        threshold=spec.loss_threshold,
    )


def benchmark_portfolio(loss_threshold: float = 120.0) -> PortfolioSpec:
    """The benchmark book: five assets, ten ATM calls plus five ATM puts each."""
    return PortfolioSpec(
        n_assets=5,
        spot=100.0,
        vol=0.3,
        rate=0.05,
        dt=0.04,
        positions=(
            OptionPosition(kind="call", strike=100.0, maturity=0.5, quantity=10.0),
            OptionPosition(kind="put", strike=100.0, maturity=0.5, quantity=5.0),
        ),
        loss_threshold=loss_threshold,
    )
