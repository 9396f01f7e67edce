"""The three estimation pipelines: importance sampling, crude MC, twisting.

Each pipeline runs the same structure on one shared batch: bisect the
empirical cost curve h_N(u) for the dual radius u_hat solving h_N = delta^2,
then evaluate p_N(u_hat) on the same samples. They differ only in how the
batch is drawn and reweighted:

  DRIS        z_1 ~ Exp(1) pushed through f_u, likelihood L_u
  crude MC    x ~ N(0, I), likelihood 1 (distances computed once; they do
              not depend on u)
  twisting    x_1 ~ N(theta_u, 1) with theta_u = x1* - u, likelihood
              exp(-theta_u x_1 + theta_u^2 / 2)

The reported variance is the asymptotic one for the plug-in pair
(u_hat, p_hat): Var(P - H / u^2) / N, which accounts for the correlation
between the root-finding and evaluation stages sharing a batch.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .errors import BracketingError
from .geometry import (
    CanonicalFrame,
    ConvexTarget,
    _distance_points_capped,
    canonical_frame,
    distance_points,
)
from .sampler import (
    KernelValues,
    RngStream,
    SampleBatch,
    draw_batch,
    draw_gaussian_batch,
    eval_kernels,
)

_DEFAULT_LO_FRAC = 1e-6
_DEFAULT_HI_FRAC = 0.999
_TOL_FRAC = 1e-9
_MAX_ROOT_ITER = 200
_Z95 = 1.959963984540054  # two-sided 95% normal quantile


class MethodKind(Enum):
    DRIS = "DRIS"
    CRUDE_MC = "MC"
    EXP_TWIST = "ET"


@dataclass(frozen=True)
class RootBracket:
    """Search interval for the dual radius, inside (0, x1*)."""

    u_lo: float
    u_hi: float

    def __post_init__(self):
        if not (np.isfinite(self.u_lo) and np.isfinite(self.u_hi)):
            raise ValueError("bracket endpoints must be finite")
        if not 0.0 < self.u_lo < self.u_hi:
            raise ValueError("bracket must satisfy 0 < u_lo < u_hi")


@dataclass(frozen=True)
class DrisResult:
    """One pipeline run: point estimates, uncertainty, and run diagnostics.

    u_hat is the dual radius in distance units; crossing_jump records
    h_N(u_hi) - h_N(u_lo) over the final bisection bracket (the empirical
    curve is piecewise constant in u, so the root is a jump location).
    """

    method: MethodKind
    u_hat: float
    p_hat: float
    asym_var: float
    ci_halfwidth: float
    n_samples: int
    root_iterations: int
    wall_time: float
    crossing_jump: float


def empirical_h(
    batch: SampleBatch, u: float, frame: CanonicalFrame, target: ConvexTarget
) -> float:
    """Importance-sampled estimate of E[d^2; d <= u] at one u."""
    return float(eval_kernels(batch, u, frame, target).h_terms().mean())


def empirical_p(
    batch: SampleBatch, u: float, frame: CanonicalFrame, target: ConvexTarget
) -> float:
    """Importance-sampled estimate of P(d <= u) at one u."""
    return float(eval_kernels(batch, u, frame, target).p_terms().mean())


def estimate_asymptotic_variance(kernels: KernelValues, u_hat: float) -> float:
    """Sample variance of P_i - H_i / u_hat^2, the plug-in asymptotic variance."""
    if u_hat <= 0.0:
        raise ValueError("u_hat must be positive")
    n = kernels.dist.shape[0]
    if n < 2:
        raise ValueError("variance needs at least two samples")
    diff = kernels.p_terms() - kernels.h_terms() / (u_hat * u_hat)
    return float(diff.var(ddof=1))


def _bisect_inf(
    h_fn: Callable[[float], float],
    delta2: float,
    u_lo: float,
    u_hi: float,
    tol_u: float,
) -> tuple[float, int, float]:
    """Leftmost bracketed u where h_fn crosses above delta2.

    Maintains h(lo) <= delta2 < h(hi); returns the upper end of the final
    bracket (so h at the returned point exceeds delta2, matching the
    inf-of-exceedance definition), the iteration count, and the jump
    h(hi) - h(lo) across the final bracket.
    """
    h_lo = h_fn(u_lo)
    h_hi = h_fn(u_hi)
    shrink = 0
    while not np.isfinite(h_hi) and shrink < 60:
        u_hi = u_lo + 0.5 * (u_hi - u_lo)
        h_hi = h_fn(u_hi)
        shrink += 1
    diag = {"u_lo": u_lo, "u_hi": u_hi, "h_lo": float(h_lo), "h_hi": float(h_hi)}
    if not (np.isfinite(h_lo) and np.isfinite(h_hi)):
        raise BracketingError("empirical h is not finite on the bracket", diagnostics=diag)
    if h_lo > delta2:
        raise BracketingError(
            "empirical h already exceeds delta^2 at the lower bracket end", diagnostics=diag
        )
    if h_hi <= delta2:
        diag["no_hits"] = bool(h_hi == 0.0)
        raise BracketingError(
            "empirical h never exceeds delta^2 on the bracket"
            + (" (no samples hit the inflated set)" if diag["no_hits"] else ""),
            diagnostics=diag,
        )
    iters = 0
    while u_hi - u_lo > tol_u and iters < _MAX_ROOT_ITER:
        mid = 0.5 * (u_lo + u_hi)
        h_mid = h_fn(mid)
        if h_mid > delta2:
            u_hi, h_hi = mid, h_mid
        else:
            u_lo, h_lo = mid, h_mid
        iters += 1
    return u_hi, iters, float(h_hi - h_lo)


def find_root(
    batch: SampleBatch,
    delta: float,
    bracket: RootBracket,
    frame: CanonicalFrame,
    target: ConvexTarget,
) -> float:
    """Empirical dual radius: inf{u : h_N(u) > delta^2} on the given batch."""
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    if bracket.u_hi >= frame.x1_star:
        raise ValueError("bracket must stay below x1_star")
    u, _, _ = _bisect_inf(
        lambda u: empirical_h(batch, u, frame, target),
        delta * delta,
        bracket.u_lo,
        bracket.u_hi,
        _TOL_FRAC * frame.x1_star,
    )
    return u


def _run_pipeline(
    method: MethodKind,
    kernels_at: Callable[[float], KernelValues],
    x1_star: float,
    delta: float,
    n_samples: int,
    bracket: RootBracket | None,
    t_start: float,
) -> DrisResult:
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    if bracket is None:
        bracket = RootBracket(_DEFAULT_LO_FRAC * x1_star, _DEFAULT_HI_FRAC * x1_star)
    if bracket.u_hi >= x1_star:
        raise ValueError("bracket must stay below x1_star")
    u_hat, iters, jump = _bisect_inf(
        lambda u: float(kernels_at(u).h_terms().mean()),
        delta * delta,
        bracket.u_lo,
        bracket.u_hi,
        _TOL_FRAC * x1_star,
    )
    kv = kernels_at(u_hat)
    p_hat = float(kv.p_terms().mean())
    asym_var = estimate_asymptotic_variance(kv, u_hat)
    return DrisResult(
        method=method,
        u_hat=float(u_hat),
        p_hat=p_hat,
        asym_var=asym_var,
        ci_halfwidth=float(_Z95 * math.sqrt(asym_var / n_samples)),
        n_samples=n_samples,
        root_iterations=iters,
        wall_time=time.perf_counter() - t_start,
        crossing_jump=jump,
    )


def run_dris(
    target: ConvexTarget,
    delta: float,
    n_samples: int,
    rng: RngStream,
    bracket: RootBracket | None = None,
) -> DrisResult:
    """Importance-sampling pipeline on one shared exponential-normal batch."""
    t0 = time.perf_counter()
    frame = canonical_frame(target)
    batch = draw_batch(rng, n_samples, target.dim)
    return _run_pipeline(
        MethodKind.DRIS,
        lambda u: eval_kernels(batch, u, frame, target),
        frame.x1_star,
        delta,
        n_samples,
        bracket,
        t0,
    )


def run_crude_mc(
    target: ConvexTarget,
    delta: float,
    n_samples: int,
    rng: RngStream,
    bracket: RootBracket | None = None,
) -> DrisResult:
    """Crude Monte Carlo pipeline; distances are u-free and computed once."""
    t0 = time.perf_counter()
    frame = canonical_frame(target)
    x = draw_gaussian_batch(rng, n_samples, target.dim)
    dist = distance_points(target, x)
    ones = np.ones(n_samples)

    def kernels_at(u: float) -> KernelValues:
        return KernelValues(dist=dist, lik=ones, indicator=dist <= u)

    return _run_pipeline(
        MethodKind.CRUDE_MC, kernels_at, frame.x1_star, delta, n_samples, bracket, t0
    )


def run_exp_twist(
    target: ConvexTarget,
    delta: float,
    n_samples: int,
    rng: RngStream,
    bracket: RootBracket | None = None,
) -> DrisResult:
    """Mean-shift pipeline: x_1 tilted to the inflated-set boundary per u."""
    t0 = time.perf_counter()
    frame = canonical_frame(target)
    base = draw_gaussian_batch(rng, n_samples, target.dim)
    x1s = frame.x1_star

    def kernels_at(u: float) -> KernelValues:
        theta = x1s - u
        x = base.copy()
        x[:, 0] += theta
        dist = _distance_points_capped(target, frame.pullback(x), cap=u)
        with np.errstate(under="ignore"):
            lik = np.exp(-theta * x[:, 0] + 0.5 * theta * theta)
        return KernelValues(dist=dist, lik=lik, indicator=dist <= u)

    return _run_pipeline(
        MethodKind.EXP_TWIST, kernels_at, x1s, delta, n_samples, bracket, t0
    )
