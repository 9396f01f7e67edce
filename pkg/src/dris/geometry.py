"""Convex target sets and the distance/projection kernels built on them.

Provides:

* ``Halfspace``, ``Polyhedron``, ``QuadraticSuperlevel`` target families, all
  validated at construction (nonempty, origin excluded).
* ``ConvexTarget``: a base set with a similarity scale, so a family indexed by
  a rarity parameter r is just a rescaled copy of one base set.
* Euclidean ``project`` / ``distance`` queries, single point and batched.
* ``min_norm_point`` and the ``canonical_frame`` rotation that places the
  minimum-norm point on the positive first coordinate axis.
* ``inflate_membership``: membership in the set inflated by a ball of radius u.

Polyhedron projections are solved exactly by active-set enumeration for small
facet counts (each candidate active set gives a closed-form equality projection;
KKT dual nonnegativity plus primal feasibility select the right one) and by
Dykstra's alternating projections otherwise. Quadratic superlevel projections
reduce to a scalar dual root found by a safeguarded Newton iteration; see
``QuadraticSuperlevel``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import linprog

from .errors import DegenerateSetError, ProjectionError

_FEAS_TOL = 1e-9
_DUAL_TOL = 1e-9
_DYKSTRA_TOL = 1e-12
# near-parallel facet pairs give linear rates around 0.98, roughly 110
# sweeps per decade of movement, so the budget must cover several decades
_DYKSTRA_MAX_SWEEPS = 50_000
_DYKSTRA_CHUNK = 65_536
_NEWTON_TOL = 1e-12
_NEWTON_MAX_ITER = 100
_ENUM_MAX_FACETS = 6


def _as_matrix(x: np.ndarray, dim: int) -> tuple[np.ndarray, bool]:
    """Coerce a point or stack of points to float64 (N, dim); flag single input."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise ValueError(f"expected a point of dimension {dim}, got {arr.shape[0]}")
        return arr.reshape(1, dim), True
    if arr.ndim == 2 and arr.shape[1] == dim:
        return np.ascontiguousarray(arr), False
    raise ValueError(f"expected shape (n,) or (N, n) with n={dim}, got {arr.shape}")


@dataclass(frozen=True)
class Halfspace:
    """Closed halfspace ``{x : normal . x >= offset}``.

    The normal is unit-normalized at construction and the offset rescaled with
    it, so equal sets compare equal regardless of the input scaling.
    """

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        v = np.asarray(self.normal, dtype=float).reshape(-1)
        if v.size == 0 or not np.isfinite(v).all():
            raise DegenerateSetError("halfspace normal must be finite and nonempty")
        nrm = float(np.linalg.norm(v))
        if nrm == 0.0:
            raise DegenerateSetError("halfspace normal must be nonzero")
        off = float(self.offset)
        if not np.isfinite(off):
            raise DegenerateSetError("halfspace offset must be finite")
        v = v / nrm
        v.setflags(write=False)
        object.__setattr__(self, "normal", v)
        object.__setattr__(self, "offset", off / nrm)

    @property
    def dim(self) -> int:
        return self.normal.shape[0]


@dataclass(frozen=True)
class Polyhedron:
    """Intersection of finitely many halfspaces.

    Construction rejects empty intersections and sets containing the origin
    (the origin is inside exactly when every offset is <= 0, since normals are
    unit and the constraints read ``a_j . x >= b_j``).
    """

    halfspaces: tuple[Halfspace, ...]

    def __post_init__(self):
        hs = tuple(self.halfspaces)
        if not hs:
            raise DegenerateSetError("polyhedron needs at least one halfspace")
        dims = {h.dim for h in hs}
        if len(dims) != 1:
            raise DegenerateSetError(f"halfspace dimensions disagree: {sorted(dims)}")
        object.__setattr__(self, "halfspaces", hs)
        if self.offsets.max() <= 0.0:
            raise DegenerateSetError("polyhedron contains the origin")
        self._check_nonempty()

    def _check_nonempty(self):
        a, b = self.normals, self.offsets
        n = a.shape[1]
        res = linprog(
            c=np.zeros(n),
            A_ub=-a,
            b_ub=-b,
            bounds=[(None, None)] * n,
            method="highs",
        )
        if res.status == 2:
            raise DegenerateSetError("polyhedron is empty")
        if res.status not in (0, 3):  # optimal or unbounded both mean feasible
            raise DegenerateSetError(f"feasibility check failed: {res.message}")

    @property
    def dim(self) -> int:
        return self.halfspaces[0].dim

    @cached_property
    def normals(self) -> np.ndarray:
        a = np.stack([h.normal for h in self.halfspaces])
        a.setflags(write=False)
        return a

    @cached_property
    def offsets(self) -> np.ndarray:
        b = np.array([h.offset for h in self.halfspaces])
        b.setflags(write=False)
        return b

    @cached_property
    def _active_subsets(self) -> list[tuple[tuple[int, ...], np.ndarray, np.ndarray]]:
        """Candidate active sets for exact projection: (indices, A_S, G^{-1})."""
        a = self.normals
        m, n = a.shape
        out = []
        for k in range(1, min(m, n) + 1):
            for idx in itertools.combinations(range(m), k):
                a_s = a[list(idx)]
                gram = a_s @ a_s.T
                if np.linalg.cond(gram) > 1e12:
                    continue  # linearly dependent facet combo, skip
                out.append((idx, a_s, np.linalg.inv(gram)))
        return out

    def _contains_points(self, x: np.ndarray, tol: float = _FEAS_TOL) -> np.ndarray:
        return (x @ self.normals.T >= self.offsets - tol).all(axis=1)

    def _distance_points(self, x: np.ndarray, cap: float | None = None) -> np.ndarray:
        """Euclidean distances d(x_i, set).

        With ``cap`` set, rows whose single-facet violation (a valid lower
        bound on the distance) already exceeds the cap keep that lower bound
        instead of the exact value. Indicator tests of d <= cap and distance
        values at rows with d <= cap are unaffected.
        """
        viol = self.offsets - x @ self.normals.T
        np.maximum(viol, 0.0, out=viol)
        lb = viol.max(axis=1)
        if cap is None:
            work = lb > 0.0
        else:
            work = (lb > 0.0) & (lb <= cap)
        dist = lb  # rows not worked on keep the lower bound (0 for members)
        if work.any():
            xw = x[work] if not work.all() else x
            if len(self.halfspaces) <= _ENUM_MAX_FACETS:
                d2, _ = self._enum_project(xw, want_points=False)
            else:
                proj = self._dykstra(xw)
                d2 = ((xw - proj) ** 2).sum(axis=1)
            if work.all():
                dist = np.sqrt(d2)
            else:
                dist = lb.copy()
                dist[work] = np.sqrt(d2)
        return dist

    def _project_points(self, x: np.ndarray) -> np.ndarray:
        inside = self._contains_points(x, tol=0.0)
        if inside.all():
            return x.copy()
        if len(self.halfspaces) <= _ENUM_MAX_FACETS:
            _, proj = self._enum_project(x, want_points=True)
        else:
            proj = self._dykstra(x)
        proj[inside] = x[inside]
        return proj

    def _enum_project(self, x: np.ndarray, want_points: bool) -> tuple[np.ndarray, np.ndarray | None]:
        """Exact projection by KKT active-set enumeration.

        For each candidate active set S the equality-constrained projection is
        p = x + A_S^T G^{-1} (b_S - A_S x); it is the true projection iff the
        multipliers G^{-1}(b_S - A_S x) are nonnegative and p is feasible.
        The squared distance is lam . resid, no point needed.
        """
        a, b = self.normals, self.offsets
        n_pts = x.shape[0]
        inside = self._contains_points(x, tol=0.0)
        best_d2 = np.where(inside, 0.0, np.inf)
        best_p = x.copy() if want_points else None
        for idx, a_s, ginv in self._active_subsets:
            resid = b[list(idx)] - x @ a_s.T
            lam = resid @ ginv
            ok = (lam >= -_DUAL_TOL).all(axis=1)
            if not ok.any():
                continue
            p = x + lam @ a_s
            ok &= (p @ a.T >= b - _FEAS_TOL).all(axis=1)
            d2 = np.einsum("ij,ij->i", lam, resid)
            np.maximum(d2, 0.0, out=d2)
            take = ok & (d2 < best_d2)
            best_d2[take] = d2[take]
            if want_points:
                best_p[take] = p[take]
        bad = np.isinf(best_d2)
        if bad.any():
            # cond-skipped subsets can in principle leave rows unresolved
            proj = self._dykstra(x[bad])
            best_d2[bad] = ((x[bad] - proj) ** 2).sum(axis=1)
            if want_points:
                best_p[bad] = proj
        return best_d2, best_p

    def _dykstra(self, x: np.ndarray) -> np.ndarray:
        """Dykstra's alternating projections onto the halfspace intersection."""
        out = np.empty_like(x)
        for lo in range(0, x.shape[0], _DYKSTRA_CHUNK):
            out[lo : lo + _DYKSTRA_CHUNK] = self._dykstra_chunk(x[lo : lo + _DYKSTRA_CHUNK])
        return out

    def _dykstra_chunk(self, x: np.ndarray) -> np.ndarray:
        a, b = self.normals, self.offsets
        m = a.shape[0]
        cur = x.astype(float, copy=True)
        incs = np.zeros((m,) + x.shape)
        for _ in range(_DYKSTRA_MAX_SWEEPS):
            prev = cur.copy()
            for j in range(m):
                y = cur + incs[j]
                viol = b[j] - y @ a[j]
                np.maximum(viol, 0.0, out=viol)
                cur = y + viol[:, None] * a[j]
                incs[j] = y - cur
            movement = np.abs(cur - prev).max()
            if movement < _DYKSTRA_TOL:
                return cur
        raise ProjectionError(
            f"Dykstra did not converge in {_DYKSTRA_MAX_SWEEPS} sweeps",
            residual=float(movement),
        )


@dataclass(frozen=True)
class QuadraticSuperlevel:
    """Superlevel set ``{x : a + sum_i (b_i x_i + c_i x_i^2) >= threshold}``.

    Requires every ``c_i <= 0`` so the quadratic q is concave and the set is
    convex. Construction rejects empty sets (sup q < threshold) and sets
    containing the origin (a >= threshold).

    Projection of an outside point z solves the scalar dual: the KKT system
    gives coordinates x_i(lam) = (z_i + lam b_i) / (1 - 2 lam c_i) with a
    single multiplier lam >= 0 fixed by q(x(lam)) = threshold. The residual
    phi(lam) = q(x(lam)) - threshold is increasing and concave on lam >= 0,
    so a Newton iteration started at 0 converges monotonically from below;
    a bisection fallback guards the stragglers.
    """

    a: float
    b: np.ndarray
    c: np.ndarray
    threshold: float

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float).reshape(-1)
        c = np.asarray(self.c, dtype=float).reshape(-1)
        if b.shape != c.shape or b.size == 0:
            raise DegenerateSetError("b and c must be equal-length nonempty vectors")
        if not (np.isfinite(b).all() and np.isfinite(c).all()):
            raise DegenerateSetError("coefficients must be finite")
        if (c > 0.0).any():
            raise DegenerateSetError("every quadratic coefficient c_i must be <= 0")
        a = float(self.a)
        thr = float(self.threshold)
        if not (np.isfinite(a) and np.isfinite(thr)):
            raise DegenerateSetError("a and threshold must be finite")
        if a >= thr:
            raise DegenerateSetError("set contains the origin (a >= threshold)")
        b.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "threshold", thr)
        if self._sup_q() < thr:
            raise DegenerateSetError("quadratic superlevel set is empty (sup q < threshold)")

    def _sup_q(self) -> float:
        neg = self.c < 0.0
        if ((~neg) & (self.b != 0.0)).any():
            return np.inf  # a linear coordinate makes q unbounded above
        return self.a + float((-self.b[neg] ** 2 / (4.0 * self.c[neg])).sum())

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    @cached_property
    def _groups(self) -> list[tuple[float, float, int, np.ndarray]]:
        """Coordinates grouped by identical (b_i, c_i); group sums drive the dual."""
        pairs = np.stack([self.b, self.c], axis=1)
        uniq, inverse = np.unique(pairs, axis=0, return_inverse=True)
        out = []
        for g in range(uniq.shape[0]):
            idx = np.nonzero(inverse == g)[0]
            out.append((float(uniq[g, 0]), float(uniq[g, 1]), idx.size, idx))
        return out

    def _q_values(self, x: np.ndarray) -> np.ndarray:
        return self.a + x @ self.b + (x * x) @ self.c

    def _contains_points(self, x: np.ndarray, tol: float = _FEAS_TOL) -> np.ndarray:
        return self._q_values(x) >= self.threshold - tol

    def _resid_tol(self) -> float:
        return _NEWTON_TOL * max(1.0, abs(self.threshold), abs(self.a))

    def _group_sums(self, x: np.ndarray) -> list[tuple[float, float, int, np.ndarray, np.ndarray, np.ndarray]]:
        """Per group: (b, c, count, s1, s2, k) with k = sum (b + 2 c z_i)^2."""
        out = []
        for b, c, cnt, idx in self._groups:
            zg = x[:, idx]
            s1 = zg.sum(axis=1)
            s2 = np.einsum("ij,ij->i", zg, zg)
            k = cnt * b * b + 4.0 * b * c * s1 + 4.0 * c * c * s2
            out.append((b, c, cnt, s1, s2, k))
        return out

    @staticmethod
    def _phi(lam, a_minus_thr, sums):
        val = np.full_like(lam, a_minus_thr)
        for b, c, cnt, s1, s2, _ in sums:
            den = 1.0 - 2.0 * lam * c
            val += b * (s1 + cnt * lam * b) / den
            val += c * (s2 + 2.0 * lam * b * s1 + cnt * lam * lam * b * b) / (den * den)
        return val

    @staticmethod
    def _phi_prime(lam, sums):
        val = np.zeros_like(lam)
        for b, c, _, _, _, k in sums:
            den = 1.0 - 2.0 * lam * c
            val += k / (den * den * den)
        return val

    def _solve_dual(self, x: np.ndarray) -> np.ndarray:
        """Multiplier lam >= 0 with q(x(lam)) = threshold for infeasible rows."""
        sums = self._group_sums(x)
        shift = self.a - self.threshold
        lam = np.zeros(x.shape[0])
        phi = self._phi(lam, shift, sums)
        tol = self._resid_tol()
        for _ in range(_NEWTON_MAX_ITER):
            live = phi < -tol
            if not live.any():
                break
            slope = self._phi_prime(lam, sums)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.where(live & (slope > 0.0), -phi / slope, 0.0)
            lam = lam + step
            phi = self._phi(lam, shift, sums)
        else:
            live = phi < -tol
            if live.any():
                lam[live] = self._bisect_dual(x[live])
        return lam

    def _bisect_dual(self, x: np.ndarray) -> np.ndarray:
        sums = self._group_sums(x)
        shift = self.a - self.threshold
        lo = np.zeros(x.shape[0])
        hi = np.ones(x.shape[0])
        for _ in range(200):
            grow = self._phi(hi, shift, sums) < 0.0
            if not grow.any():
                break
            hi[grow] *= 4.0
        else:
            raise ProjectionError("scalar dual bracket did not close")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            neg = self._phi(mid, shift, sums) < 0.0
            lo = np.where(neg, mid, lo)
            hi = np.where(neg, hi, mid)
        return 0.5 * (lo + hi)

    def _distance_points(self, x: np.ndarray, cap: float | None = None) -> np.ndarray:
        """Distances to the set; see Polyhedron._distance_points for cap semantics.

        The screening bound uses concavity: for feasible y,
        threshold <= q(y) <= q(x) + ||grad q(x)|| * ||y - x||, hence
        d(x) >= (threshold - q(x)) / ||grad q(x)||.
        """
        qv = self._q_values(x)
        gap = self.threshold - qv
        outside = gap > 0.0
        dist = np.zeros(x.shape[0])
        if not outside.any():
            return dist
        if cap is not None:
            grad_sq = (
                float(self.b @ self.b)
                + x @ (4.0 * self.b * self.c)
                + (x * x) @ (4.0 * self.c * self.c)
            )
            with np.errstate(divide="ignore"):
                lower = np.where(grad_sq > 0.0, gap / np.sqrt(grad_sq), np.inf)
            work = outside & (lower <= cap)
            dist[outside] = lower[outside]  # screened rows keep the lower bound
        else:
            work = outside
        if work.any():
            xw = x[work]
            lam = self._solve_dual(xw)
            d2 = np.zeros(xw.shape[0])
            for b, c, _, _, _, k in self._group_sums(xw):
                den = 1.0 - 2.0 * lam * c
                d2 += k / (den * den)
            d2 *= lam * lam
            dist[work] = np.sqrt(d2)
        return dist

    def _project_points(self, x: np.ndarray) -> np.ndarray:
        proj = x.copy()
        outside = ~self._contains_points(x, tol=0.0)
        if outside.any():
            xw = x[outside]
            lam = self._solve_dual(xw)[:, None]
            proj[outside] = (xw + lam * self.b) / (1.0 - 2.0 * lam * self.c)
        return proj


@dataclass(frozen=True)
class ConvexTarget:
    """A base convex set with a similarity scale.

    Membership: ``x in target  <=>  x / scale in base``. Scaling by r/||x*||
    turns one base set into the rarity family used by the experiments.
    """

    base: Polyhedron | QuadraticSuperlevel
    scale: float = 1.0

    def __post_init__(self):
        s = float(self.scale)
        if not np.isfinite(s) or s <= 0.0:
            raise DegenerateSetError("scale must be a positive finite number")
        object.__setattr__(self, "scale", s)

    @property
    def dim(self) -> int:
        return self.base.dim


@dataclass(frozen=True)
class CanonicalFrame:
    """Rotation Q mapping the minimum-norm point onto ``||x*|| e_1``.

    ``rotation`` is orthogonal with ``Q x* = (x1_star, 0, ..., 0)`` and
    positive first coordinate. Samples generated in the rotated frame are
    pulled back through Q^T before any distance query.
    """

    rotation: np.ndarray
    x1_star: float
    identity: bool

    def pullback(self, x: np.ndarray) -> np.ndarray:
        """Map rotated-frame rows back to the original frame (rows times Q)."""
        if self.identity:
            return x
        return x @ self.rotation


def distance_points(target: ConvexTarget, x: np.ndarray) -> np.ndarray:
    """Euclidean distances from each row of x to the target set."""
    pts, _ = _as_matrix(x, target.dim)
    return _distance_points_capped(target, pts, cap=None)


def _distance_points_capped(target: ConvexTarget, pts: np.ndarray, cap: float | None) -> np.ndarray:
    # internal batched path: rows whose distance exceeds cap may carry a
    # lower bound instead of the exact value (screening; see ledger of the
    # base implementations)
    s = target.scale
    base_cap = None if cap is None else cap / s
    if s == 1.0:
        return target.base._distance_points(pts, cap=base_cap)
    return s * target.base._distance_points(pts / s, cap=base_cap)


def distance(target: ConvexTarget, x: np.ndarray) -> float:
    """Euclidean distance from a single point to the target set."""
    pts, _ = _as_matrix(x, target.dim)
    if pts.shape[0] != 1:
        raise ValueError("distance takes a single point; use distance_points for batches")
    return float(_distance_points_capped(target, pts, cap=None)[0])


def project(target: ConvexTarget, x: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the target set (single point or batch)."""
    pts, single = _as_matrix(x, target.dim)
    s = target.scale
    if s == 1.0:
        out = target.base._project_points(pts)
    else:
        out = s * target.base._project_points(pts / s)
    return out[0] if single else out


def min_norm_point(target: ConvexTarget) -> np.ndarray:
    """The point of the target set closest to the origin."""
    p = project(target, np.zeros(target.dim))
    if float(np.linalg.norm(p)) == 0.0:
        raise DegenerateSetError("target set contains the origin")
    return p


def canonical_frame(target: ConvexTarget) -> CanonicalFrame:
    """Householder frame aligning the minimum-norm point with +e_1."""
    xs = min_norm_point(target)
    x1 = float(np.linalg.norm(xs))
    n = xs.shape[0]
    xhat = xs / x1
    v = xhat.copy()
    v[0] -= 1.0
    vv = float(v @ v)
    if vv < 1e-30:
        q = np.eye(n)
        frame = CanonicalFrame(rotation=q, x1_star=x1, identity=True)
    else:
        q = np.eye(n) - (2.0 / vv) * np.outer(v, v)
        q.setflags(write=False)
        frame = CanonicalFrame(rotation=q, x1_star=x1, identity=False)
    image = frame.rotation @ xs
    image_err = float(np.abs(image - np.array([x1] + [0.0] * (n - 1))).max())
    ortho_err = float(np.abs(frame.rotation.T @ frame.rotation - np.eye(n)).max())
    if image_err > 1e-10 * max(1.0, x1) or ortho_err > 1e-12:
        raise ProjectionError(
            f"canonical frame failed validation (image err {image_err:.2e}, ortho err {ortho_err:.2e})",
            residual=max(image_err, ortho_err),
        )
    return frame


def inflate_membership(target: ConvexTarget, x: np.ndarray, u: float) -> bool:
    """Whether x lies within distance u of the target set."""
    u = float(u)
    if not np.isfinite(u) or u < 0.0:
        raise ValueError("inflation radius u must be finite and >= 0")
    return bool(distance(target, x) <= u)


def with_rarity(target: ConvexTarget, r: float) -> ConvexTarget:
    """Rescale the target so its minimum-norm point has norm r."""
    r = float(r)
    if not np.isfinite(r) or r <= 0.0:
        raise ValueError("rarity parameter r must be positive and finite")
    x1 = float(np.linalg.norm(min_norm_point(target)))
    return ConvexTarget(base=target.base, scale=target.scale * r / x1)
