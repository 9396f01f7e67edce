"""Random-variate generation and the importance-sampling change of measure.

The importance sampler draws Z = (Y, X_2, ..., X_n) with Y ~ Exp(1) and the
rest standard normal, then maps it through

    f_u(z) = (w + z_1 / w, z_2, ..., z_n),   w = x1* - u,

so the first coordinate follows a shifted exponential supported on [w, inf),
exactly the tail region containing the inflated target set. The likelihood
ratio back to the standard Gaussian is

    L_u(z) = exp(-z_1^2 / (2 w^2) - w^2 / 2) / (w sqrt(2 pi)) * 1{z_1 >= 0}.

Streams are counter-based (Philox) and keyed by (seed, stream_id), so any
worker can regenerate any batch bit-for-bit regardless of scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass
from hashlib import blake2b

import numpy as np

from .geometry import CanonicalFrame, ConvexTarget, _distance_points_capped

_SQRT_2PI = np.sqrt(2.0 * np.pi)
_TINY = float(np.finfo(np.float64).tiny)
_MASK64 = (1 << 64) - 1


def stream_id(label: str) -> int:
    """Stable 64-bit stream id for a text label (e.g. "dris|r=3|rep=7")."""
    return int.from_bytes(blake2b(label.encode(), digest_size=8).digest(), "little")


@dataclass(frozen=True)
class RngStream:
    """Key of one reproducible random stream.

    Distinct stream ids give statistically independent Philox sequences;
    identical (seed, stream_id) pairs reproduce identical draws bit-for-bit.
    """

    seed: int
    stream_id: int = 0

    @classmethod
    def for_label(cls, seed: int, label: str) -> "RngStream":
        return cls(seed=seed, stream_id=stream_id(label))

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & _MASK64, self.stream_id & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SampleBatch:
    """Matrix of raw draws: column 0 holds Y ~ Exp(1), the rest N(0,1)."""

    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim != 2 or z.shape[0] < 1 or z.shape[1] < 1:
            raise ValueError("batch must be a nonempty N x n matrix")
        if not np.all(z[:, 0] >= 0.0):
            raise ValueError("exponential column must be nonnegative")
        object.__setattr__(self, "z", z)

    @property
    def count(self) -> int:
        return self.z.shape[0]

    @property
    def dim(self) -> int:
        return self.z.shape[1]


@dataclass(frozen=True)
class KernelValues:
    """Per-sample ingredients of the h and p estimators at one u.

    dist is exact wherever indicator is True; screened-out rows hold a
    certified lower bound exceeding u, which pins the indicator without a
    full projection. lik carries L_u, zero where the support indicator fails.
    The estimator terms are H_i = dist_i^2 * indicator_i * lik_i and
    P_i = indicator_i * lik_i.
    """

    dist: np.ndarray
    lik: np.ndarray
    indicator: np.ndarray

    def h_terms(self) -> np.ndarray:
        return self.dist * self.dist * self.indicator * self.lik

    def p_terms(self) -> np.ndarray:
        return self.indicator * self.lik


def draw_batch(rng: RngStream, n_samples: int, dim: int) -> SampleBatch:
    """Draw Z: column 0 ~ Exp(1), columns 1..n-1 ~ N(0,1), in a fixed order."""
    if n_samples < 1 or dim < 1:
        raise ValueError("n_samples and dim must be >= 1")
    g = rng.generator()
    z = np.empty((n_samples, dim))
    z[:, 0] = g.standard_exponential(n_samples)
    if dim > 1:
        z[:, 1:] = g.standard_normal((n_samples, dim - 1))
    return SampleBatch(z)


def draw_gaussian_batch(rng: RngStream, n_samples: int, dim: int) -> np.ndarray:
    """Standard normal N x n draw shared by the crude-MC and twisting pipelines."""
    if n_samples < 1 or dim < 1:
        raise ValueError("n_samples and dim must be >= 1")
    return rng.generator().standard_normal((n_samples, dim))


def _check_u(u: float, x1_star: float):
    if not (np.isfinite(u) and np.isfinite(x1_star) and 0.0 < u < x1_star):
        raise ValueError(f"u must lie in (0, x1_star); got u={u}, x1_star={x1_star}")


def transform(z: np.ndarray, u: float, x1_star: float) -> np.ndarray:
    """Map raw draws through f_u; first coordinate lands in [x1_star - u, inf)."""
    _check_u(u, x1_star)
    w = x1_star - u
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    x = np.atleast_2d(z).copy()
    x[:, 0] = w + x[:, 0] / w
    return x[0] if single else x


def likelihood(z: np.ndarray, u: float, x1_star: float) -> np.ndarray:
    """L_u per sample; zero off the support z_1 >= 0, underflow flushed to zero."""
    _check_u(u, x1_star)
    w = x1_star - u
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z1 = np.atleast_2d(z)[:, 0]
    with np.errstate(under="ignore"):
        lik = np.exp(-z1 * z1 / (2.0 * w * w) - w * w / 2.0) / (w * _SQRT_2PI)
    lik = np.where((z1 >= 0.0) & (lik >= _TINY), lik, 0.0)
    return float(lik[0]) if single else lik


def eval_kernels(
    batch: SampleBatch, u: float, frame: CanonicalFrame, target: ConvexTarget
) -> KernelValues:
    """Distances, likelihoods and hit indicators for one u on a shared batch."""
    _check_u(u, frame.x1_star)
    if batch.dim != target.dim:
        raise ValueError(f"batch dimension {batch.dim} != target dimension {target.dim}")
    x = transform(batch.z, u, frame.x1_star)
    dist = _distance_points_capped(target, frame.pullback(x), cap=u)
    return KernelValues(
        dist=dist,
        lik=likelihood(batch.z, u, frame.x1_star),
        indicator=dist <= u,
    )
