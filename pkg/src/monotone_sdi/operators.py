"""Catalog of maximal monotone operators with exact resolvents.

Every operator kind in the catalog knows its domain geometry (an anchor
point plus generators of the subspace spanned by domain differences), an
exact resolvent, the minimal-norm selection, and its zero-set descriptor.
Set-valued evaluation is exposed only through membership predicates, graph
sampling and the minimal-norm element; tests and diagnostics never need
"the whole set".

All point-valued operations are batched: ``x`` may be a single vector of
shape ``(d,)`` or a stack ``(..., d)``; results preserve the leading shape.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import brentq

from .errors import (
    EmptyIntersection,
    EmptyZeroSet,
    NoPotential,
    OutsideDomain,
    UnsupportedKind,
)

#: absolute tolerance for affine-constraint membership tests
DOMAIN_TOL = 1e-9


def _as_batch(x, dim):
    """Flatten leading axes of x to (n, dim); return (batch, restore)."""
    arr = np.asarray(x, dtype=float)
    if arr.shape[-1:] != (dim,):
        raise ValueError(f"expected trailing dimension {dim}, got {arr.shape}")
    lead = arr.shape[:-1]

    def restore(out):
        out = np.asarray(out)
        if out.ndim == 2:
            return out.reshape(lead + out.shape[-1:]) if lead else out[0]
        return out.reshape(lead) if lead else out.reshape(())[()]

    return arr.reshape(-1, dim), restore


def _solve_many(A, rhs):
    """Solve A u = rhs row-wise for rhs of shape (n, d)."""
    return np.linalg.solve(A, rhs.T).T


class ZeroSet:
    """Descriptor of the solution set S = {x : 0 in A(x)}.

    kind is one of "point", "box", "affine", "empty".  "affine" carries a
    feasible point and an orthonormal basis (rows) of the slice directions.
    """

    def __init__(self, kind, point=None, lo=None, hi=None, basis=None):
        self.kind = kind
        self.point = None if point is None else np.asarray(point, dtype=float)
        self.lo = None if lo is None else np.asarray(lo, dtype=float)
        self.hi = None if hi is None else np.asarray(hi, dtype=float)
        self.basis = None if basis is None else np.asarray(basis, dtype=float)

    @property
    def is_empty(self):
        return self.kind == "empty"

    def project(self, x):
        """Projection onto S, batched over leading axes."""
        if self.kind == "empty":
            raise EmptyZeroSet("operator has no zeros")
        x = np.asarray(x, dtype=float)
        if self.kind == "point":
            return np.broadcast_to(self.point, x.shape).copy()
        if self.kind == "box":
            return np.clip(x, self.lo, self.hi)
        w = x - self.point
        return self.point + (w @ self.basis.T) @ self.basis


class PotentialDescriptor:
    """Convex potential attached to an operator declared as a subdifferential.

    ``error_bound``, when present, is a dict {"p": >=1, "gamma": >0,
    "level": > min_value} recording phi(x) - min phi >= gamma*d(x;S)^p on
    the sublevel set [phi <= level].
    """

    def __init__(self, evaluate, min_value, strong_convexity_modulus=0.0,
                 error_bound=None):
        self._evaluate = evaluate
        self.min_value = float(min_value)
        self.strong_convexity_modulus = float(strong_convexity_modulus)
        self.error_bound = error_bound

    def evaluate(self, x):
        """phi(x); +inf outside dom phi.  Batched over leading axes."""
        return self._evaluate(np.asarray(x, dtype=float))


def _zero_set_from_linear_system(Cmat, rhs):
    """Zero set {x : Cmat x = rhs} as a point/affine/empty descriptor."""
    Cmat = np.atleast_2d(np.asarray(Cmat, dtype=float))
    rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
    sol, *_ = np.linalg.lstsq(Cmat, rhs, rcond=None)
    if not np.allclose(Cmat @ sol, rhs, atol=1e-9):
        return ZeroSet("empty")
    ns = null_space(Cmat)
    if ns.shape[1] == 0:
        return ZeroSet("point", point=sol)
    return ZeroSet("affine", point=sol, basis=ns.T)


class OperatorSpec:
    """Base class for catalog operators.

    Subclasses set dim, zero_set, potential, the monotonicity moduli, and
    implement the resolvent, minimal-norm selection, membership predicates
    and domain geometry.  Instances are immutable after construction and
    safe to share across workers.
    """

    dim: int
    zero_set: ZeroSet
    potential: Optional[PotentialDescriptor] = None
    strong_monotonicity_modulus: float = 0.0
    lipschitz_constant: Optional[float] = None

    def resolvent(self, lam, x):
        raise NotImplementedError

    def minimal_norm(self, x):
        raise NotImplementedError

    def graph_membership(self, u, v, tol=DOMAIN_TOL):
        """True iff v is in A(u), to within tol."""
        raise NotImplementedError

    def domain_membership(self, x, tol=DOMAIN_TOL):
        """True iff x is in cl dom A, to within tol.  Batched."""
        raise NotImplementedError

    def domain_project(self, x):
        """Projection onto cl dom A.  Batched."""
        raise NotImplementedError

    def domain_geometry(self):
        """(anchor in dom A, generator rows spanning span(dom A - anchor))."""
        raise NotImplementedError

    def _normal_basis(self):
        """Orthonormal rows spanning A(u) - A0(u) directions; may be empty."""
        return np.zeros((0, self.dim))


# ---------------------------------------------------------------------------
# Linear: A(x) = Q x + b with Q + Q^T positive semidefinite.
# ---------------------------------------------------------------------------

class Linear(OperatorSpec):
    """Single-valued affine monotone operator on all of R^d."""

    def __init__(self, Q, b=None, as_subdifferential=False, error_bound=None):
        self.Q = np.atleast_2d(np.asarray(Q, dtype=float))
        self.dim = self.Q.shape[0]
        if self.Q.shape != (self.dim, self.dim):
            raise ValueError("Q must be square")
        self.b = (np.zeros(self.dim) if b is None
                  else np.asarray(b, dtype=float).reshape(self.dim))
        sym = 0.5 * (self.Q + self.Q.T)
        eigs = np.linalg.eigvalsh(sym)
        if eigs.min() < -1e-10:
            raise ValueError("Q + Q^T must be positive semidefinite")
        self.strong_monotonicity_modulus = max(float(eigs.min()), 0.0)
        self.lipschitz_constant = float(np.linalg.norm(self.Q, 2))
        self.zero_set = _zero_set_from_linear_system(self.Q, -self.b)
        self.potential = None
        if as_subdifferential:
            if not np.allclose(self.Q, self.Q.T, atol=1e-12):
                raise ValueError("potential requires symmetric Q")
            self.potential = self._build_potential(error_bound)

    def _build_potential(self, error_bound):
        Q, b = self.Q, self.b
        if self.zero_set.is_empty:
            min_value = -math.inf
        else:
            xs = self.zero_set.point
            min_value = 0.5 * xs @ Q @ xs + b @ xs

        def evaluate(x):
            quad = 0.5 * np.einsum("...i,ij,...j->...", x, Q, x)
            return quad + x @ b

        return PotentialDescriptor(
            evaluate, min_value,
            strong_convexity_modulus=self.strong_monotonicity_modulus,
            error_bound=error_bound)

    def resolvent(self, lam, x):
        xb, restore = _as_batch(x, self.dim)
        A = np.eye(self.dim) + lam * self.Q
        return restore(_solve_many(A, xb - lam * self.b))

    def minimal_norm(self, x):
        xb, restore = _as_batch(x, self.dim)
        return restore(xb @ self.Q.T + self.b)

    def graph_membership(self, u, v, tol=DOMAIN_TOL):
        u = np.asarray(u, dtype=float).reshape(self.dim)
        v = np.asarray(v, dtype=float).reshape(self.dim)
        return bool(np.max(np.abs(v - (self.Q @ u + self.b))) <= tol)

    def domain_membership(self, x, tol=DOMAIN_TOL):
        xb, restore = _as_batch(x, self.dim)
        return restore(np.ones(xb.shape[0], dtype=bool))

    def domain_project(self, x):
        return np.asarray(x, dtype=float)

    def domain_geometry(self):
        return np.zeros(self.dim), np.eye(self.dim)


# ---------------------------------------------------------------------------
# SeparablePLQ: subdifferential of a sum of 1-D convex piecewise
# linear-quadratic potentials.
# ---------------------------------------------------------------------------

class PLQCoordinate:
    """One coordinate of a separable PLQ potential.

    The potential is a*u^2 + c*u + e on each piece; pieces are delimited by
    the interior breakpoints, and the effective domain is [lo, hi].
    Convexity and continuity are validated at construction.
    """

    def __init__(self, breakpoints, coeffs, lo=-math.inf, hi=math.inf):
        self.breakpoints = np.asarray(breakpoints, dtype=float)
        self.coeffs = np.asarray(coeffs, dtype=float).reshape(-1, 3)
        self.lo = float(lo)
        self.hi = float(hi)
        if self.coeffs.shape[0] != self.breakpoints.size + 1:
            raise ValueError("need exactly one piece more than breakpoints")
        if self.breakpoints.size and np.any(np.diff(self.breakpoints) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if self.lo >= self.hi:
            raise ValueError("domain must have nonempty interior")
        if np.any(self.coeffs[:, 0] < -1e-12):
            raise ValueError("quadratic coefficients must be nonnegative")
        for j, t in enumerate(self.breakpoints):
            a0, c0, e0 = self.coeffs[j]
            a1, c1, e1 = self.coeffs[j + 1]
            if abs((a0 * t * t + c0 * t + e0) - (a1 * t * t + c1 * t + e1)) > 1e-9:
                raise ValueError("potential must be continuous at breakpoints")
            if (2 * a0 * t + c0) > (2 * a1 * t + c1) + 1e-12:
                raise ValueError("derivative must be nondecreasing (convexity)")

    def value(self, u):
        u = np.asarray(u, dtype=float)
        idx = np.searchsorted(self.breakpoints, u, side="left")
        a, c, e = (self.coeffs[idx, j] for j in range(3))
        out = a * u * u + c * u + e
        if self.lo > -math.inf or self.hi < math.inf:
            out = np.where((u < self.lo) | (u > self.hi), math.inf, out)
        return out

    def slopes(self, u):
        """(left, right) one-sided derivative of the potential at u, batched.

        At the domain endpoints the outward slope is infinite.
        """
        u = np.asarray(u, dtype=float)
        ir = np.searchsorted(self.breakpoints, u, side="right")
        il = np.searchsorted(self.breakpoints, u, side="left")
        right = 2 * self.coeffs[ir, 0] * u + self.coeffs[ir, 1]
        left = 2 * self.coeffs[il, 0] * u + self.coeffs[il, 1]
        left = np.where(u <= self.lo, -math.inf, left)
        right = np.where(u >= self.hi, math.inf, right)
        return left, right

    def prox(self, lam, x):
        """argmin_u phi(u) + (u - x)^2 / (2 lam), exact and batched."""
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, np.nan)
        edges_lo = np.concatenate(([self.lo], self.breakpoints))
        edges_hi = np.concatenate((self.breakpoints, [self.hi]))
        for j in range(self.coeffs.shape[0]):
            a, c, _ = self.coeffs[j]
            u = (x - lam * c) / (1.0 + 2.0 * lam * a)
            ok = (u >= edges_lo[j]) & (u <= edges_hi[j]) & np.isnan(out)
            out[ok] = u[ok]
        for t in self.breakpoints:
            sl, sr = self.slopes(np.array(t))
            ok = (x >= t + lam * sl) & (x <= t + lam * sr) & np.isnan(out)
            out[ok] = t
        if self.lo > -math.inf:
            _, sr = self.slopes(np.array(self.lo))
            ok = (x <= self.lo + lam * sr) & np.isnan(out)
            out[ok] = self.lo
        if self.hi < math.inf:
            sl, _ = self.slopes(np.array(self.hi))
            ok = (x >= self.hi + lam * sl) & np.isnan(out)
            out[ok] = self.hi
        if np.any(np.isnan(out)):
            out = self._prox_bisect(lam, np.atleast_1d(x), np.atleast_1d(out))
            out = out if np.ndim(x) else out[0]
        return out

    def _prox_bisect(self, lam, x, out):
        # guarded fallback; only reachable for malformed descriptors where
        # the exact piecewise scan left gaps
        for i in np.nonzero(np.isnan(out))[0]:
            xi = x[i]
            lo = self.lo if self.lo > -math.inf else xi - 1.0 - abs(xi)
            hi = self.hi if self.hi < math.inf else xi + 1.0 + abs(xi)

            def g(u):
                sl, sr = self.slopes(np.array(u))
                slope = np.clip(0.0, sl, sr) if sl <= 0 <= sr else \
                    (sr if u < xi else sl)
                slope = float(np.clip(slope, -1e100, 1e100))
                return u + lam * slope - xi

            try:
                out[i] = brentq(g, lo, hi, xtol=1e-13)
            except ValueError as exc:
                raise UnsupportedKind(
                    f"PLQ prox solver failed to converge at x={xi}") from exc
        return out

    def zero_interval(self):
        """Interval of points where 0 is a subgradient, or None."""
        cands = []
        edges_lo = np.concatenate(([self.lo], self.breakpoints))
        edges_hi = np.concatenate((self.breakpoints, [self.hi]))
        for j in range(self.coeffs.shape[0]):
            a, c, _ = self.coeffs[j]
            plo = max(edges_lo[j], self.lo)
            phi_ = min(edges_hi[j], self.hi)
            if a > 0:
                u = -c / (2 * a)
                if plo <= u <= phi_:
                    cands.append(u)
            elif abs(c) < 1e-15:
                cands.extend([plo, phi_])
        bps = list(self.breakpoints) + [v for v in (self.lo, self.hi)
                                        if np.isfinite(v)]
        for t in bps:
            sl, sr = self.slopes(np.array(t))
            if sl <= 0 <= sr:
                cands.append(float(t))
        if not cands:
            return None
        return min(cands), max(cands)


def abs_coordinate():
    """phi(u) = |u|."""
    return PLQCoordinate([0.0], [[0, -1, 0], [0, 1, 0]])


def hinge_coordinate(margin=1.0):
    """phi(u) = max(|u| - margin, 0)."""
    m = float(margin)
    return PLQCoordinate([-m, m], [[0, -1, -m], [0, 0, 0], [0, 1, -m]])


def quadratic_coordinate(curvature=1.0):
    """phi(u) = (curvature/2) u^2."""
    return PLQCoordinate([], [[0.5 * curvature, 0, 0]])


class SeparablePLQ(OperatorSpec):
    """Subdifferential of phi(x) = sum_i phi_i(x_i) for convex PLQ phi_i."""

    def __init__(self, coordinates: Sequence[PLQCoordinate], error_bound=None):
        self.coordinates = list(coordinates)
        self.dim = len(self.coordinates)
        if self.dim == 0:
            raise ValueError("need at least one coordinate")
        intervals = [c.zero_interval() for c in self.coordinates]
        if any(iv is None for iv in intervals):
            self.zero_set = ZeroSet("empty")
        else:
            lo = np.array([iv[0] for iv in intervals])
            hi = np.array([iv[1] for iv in intervals])
            if np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) \
                    and np.allclose(lo, hi):
                self.zero_set = ZeroSet("point", point=lo)
            else:
                self.zero_set = ZeroSet("box", lo=lo, hi=hi)
        mu = min(2.0 * float(np.min(c.coeffs[:, 0])) for c in self.coordinates)
        self.strong_monotonicity_modulus = max(mu, 0.0)
        self.lipschitz_constant = self._lipschitz()
        if self.zero_set.is_empty:
            min_value = -math.inf
        else:
            zpt = (self.zero_set.point if self.zero_set.kind == "point"
                   else np.where(np.isfinite(self.zero_set.lo),
                                 self.zero_set.lo, self.zero_set.hi))
            min_value = float(sum(c.value(np.array(z))
                                  for c, z in zip(self.coordinates, zpt)))
        self.potential = PotentialDescriptor(
            self._phi, min_value,
            strong_convexity_modulus=self.strong_monotonicity_modulus,
            error_bound=error_bound)

    def _lipschitz(self):
        # single-valued Lipschitz iff derivative continuous and domain unbounded
        L = 0.0
        for c in self.coordinates:
            if np.isfinite(c.lo) or np.isfinite(c.hi):
                return None
            for t in c.breakpoints:
                sl, sr = c.slopes(np.array(t))
                if sr - sl > 1e-12:
                    return None
            L = max(L, 2.0 * float(np.max(c.coeffs[:, 0])))
        return L

    def _phi(self, x):
        xb, restore = _as_batch(x, self.dim)
        total = np.zeros(xb.shape[0])
        for i, c in enumerate(self.coordinates):
            total = total + c.value(xb[:, i])
        return restore(total)

    def resolvent(self, lam, x):
        xb, restore = _as_batch(x, self.dim)
        u = np.empty_like(xb)
        for i, c in enumerate(self.coordinates):
            u[:, i] = c.prox(lam, xb[:, i])
        return restore(u)

    def minimal_norm(self, x):
        xb, restore = _as_batch(x, self.dim)
        v = np.empty_like(xb)
        for i, c in enumerate(self.coordinates):
            sl, sr = c.slopes(xb[:, i])
            v[:, i] = np.clip(0.0, sl, sr)
        return restore(v)

    def subdifferential_interval(self, x):
        """Per-coordinate (left, right) slope arrays at a single point x."""
        x = np.asarray(x, dtype=float).reshape(self.dim)
        lows = np.empty(self.dim)
        highs = np.empty(self.dim)
        for i, c in enumerate(self.coordinates):
            sl, sr = c.slopes(np.array(x[i]))
            lows[i], highs[i] = sl, sr
        return lows, highs

    def graph_membership(self, u, v, tol=DOMAIN_TOL):
        u = np.asarray(u, dtype=float).reshape(self.dim)
        v = np.asarray(v, dtype=float).reshape(self.dim)
        for i, c in enumerate(self.coordinates):
            if not (c.lo - tol <= u[i] <= c.hi + tol):
                return False
            # widen by tol in u so points numerically at kinks pass
            sl, _ = c.slopes(np.array(max(u[i] - tol, min(u[i], c.lo))))
            _, sr = c.slopes(np.array(min(u[i] + tol, max(u[i], c.hi))))
            if not (sl - tol <= v[i] <= sr + tol):
                return False
        return True

    def domain_membership(self, x, tol=DOMAIN_TOL):
        xb, restore = _as_batch(x, self.dim)
        lo = np.array([c.lo for c in self.coordinates])
        hi = np.array([c.hi for c in self.coordinates])
        return restore(np.all((xb >= lo - tol) & (xb <= hi + tol), axis=1))

    def domain_project(self, x):
        xb, restore = _as_batch(x, self.dim)
        lo = np.array([c.lo for c in self.coordinates])
        hi = np.array([c.hi for c in self.coordinates])
        return restore(np.clip(xb, lo, hi))

    def domain_geometry(self):
        anchor = self.domain_project(np.zeros(self.dim))
        return np.asarray(anchor, dtype=float), np.eye(self.dim)


# ---------------------------------------------------------------------------
# Operators whose domain is an affine set {x : C x = d_vec}.
# ---------------------------------------------------------------------------

class _AffineDomainOperator(OperatorSpec):
    """Shared machinery: A(x) = H x + g + range(C^T) on {x : C x = d_vec}."""

    def __init__(self, C, d_vec, H=None, g=None):
        self.C = np.atleast_2d(np.asarray(C, dtype=float))
        self.d_vec = np.atleast_1d(np.asarray(d_vec, dtype=float))
        self.dim = self.C.shape[1]
        if self.d_vec.shape[0] != self.C.shape[0]:
            raise ValueError("C and d_vec shapes disagree")
        self.H = np.zeros((self.dim, self.dim)) if H is None else \
            np.atleast_2d(np.asarray(H, dtype=float))
        self.g = np.zeros(self.dim) if g is None else \
            np.asarray(g, dtype=float).reshape(self.dim)
        anchor, *_ = np.linalg.lstsq(self.C, self.d_vec, rcond=None)
        if not np.allclose(self.C @ anchor, self.d_vec, atol=1e-9):
            raise ValueError("constraint C x = d_vec is infeasible")
        self.anchor = anchor
        self.basis = null_space(self.C).T  # orthonormal rows spanning null(C)
        self.proj = self.basis.T @ self.basis
        sym = 0.5 * (self.H + self.H.T)
        red = self.basis @ sym @ self.basis.T
        eigs = np.linalg.eigvalsh(red) if red.size else np.array([0.0])
        if eigs.min() < -1e-10:
            raise ValueError("H must be monotone on the constraint nullspace")
        self.strong_monotonicity_modulus = max(float(eigs.min()), 0.0)
        self.lipschitz_constant = None
        # zeros: C x = d and the tangential part of H x + g vanishes
        stacked = np.vstack([self.C, self.basis @ self.H])
        rhs = np.concatenate([self.d_vec, -self.basis @ self.g])
        self.zero_set = _zero_set_from_linear_system(stacked, rhs)
        self.potential = None

    def resolvent(self, lam, x):
        # solved in reduced coordinates so the output satisfies the
        # constraint exactly
        xb, restore = _as_batch(x, self.dim)
        B = self.basis
        k = B.shape[0]
        if k == 0:
            return restore(np.broadcast_to(self.anchor, xb.shape).copy())
        rhs = (xb - self.anchor - lam * (self.H @ self.anchor + self.g)) @ B.T
        M = np.eye(k) + lam * (B @ self.H @ B.T)
        z = _solve_many(M, rhs)
        return restore(self.anchor + z @ B)

    def minimal_norm(self, x):
        xb, restore = _as_batch(x, self.dim)
        return restore((xb @ self.H.T + self.g) @ self.proj)

    def graph_membership(self, u, v, tol=DOMAIN_TOL):
        u = np.asarray(u, dtype=float).reshape(self.dim)
        v = np.asarray(v, dtype=float).reshape(self.dim)
        if np.max(np.abs(self.C @ u - self.d_vec)) > tol:
            return False
        if self.basis.shape[0] == 0:
            return True
        resid = v - (self.H @ u + self.g)
        return bool(np.max(np.abs(self.basis @ resid)) <= tol)

    def domain_membership(self, x, tol=DOMAIN_TOL):
        xb, restore = _as_batch(x, self.dim)
        return restore(np.max(np.abs(xb @ self.C.T - self.d_vec), axis=1) <= tol)

    def domain_project(self, x):
        xb, restore = _as_batch(x, self.dim)
        return restore(self.anchor + (xb - self.anchor) @ self.proj)

    def domain_geometry(self):
        return self.anchor.copy(), self.basis.copy()

    def _normal_basis(self):
        if self.basis.shape[0] == 0:
            return np.eye(self.dim)
        if self.basis.shape[0] == self.dim:
            return np.zeros((0, self.dim))
        return null_space(self.basis).T


class AffineNormalCone(_AffineDomainOperator):
    """Normal cone of the affine set {x : C x = d_vec}.

    Subdifferential of the set indicator, so the attached potential is 0 on
    the set and +inf off it.
    """

    def __init__(self, C, d_vec):
        super().__init__(C, d_vec)

        def indicator(x):
            xb, restore = _as_batch(x, self.dim)
            ok = np.max(np.abs(xb @ self.C.T - self.d_vec), axis=1) <= DOMAIN_TOL
            return restore(np.where(ok, 0.0, math.inf))

        self.potential = PotentialDescriptor(indicator, 0.0)


class RestrictedQuadratic(_AffineDomainOperator):
    """Subdifferential of a symmetric PSD quadratic restricted to an affine set.

    phi(x) = x.H x / 2 + g.x on {C x = d_vec}, +inf elsewhere.
    """

    def __init__(self, C, d_vec, H, g=None, error_bound=None):
        super().__init__(C, d_vec, H=H, g=g)
        if not np.allclose(self.H, self.H.T, atol=1e-12):
            raise ValueError("potential requires symmetric H")
        if self.zero_set.is_empty:
            min_value = -math.inf
        else:
            xs = self.zero_set.point
            min_value = 0.5 * xs @ self.H @ xs + self.g @ xs
        H, g = self.H, self.g

        def evaluate(x):
            xb, restore = _as_batch(x, self.dim)
            vals = 0.5 * np.einsum("ni,ij,nj->n", xb, H, xb) + xb @ g
            ok = np.max(np.abs(xb @ self.C.T - self.d_vec), axis=1) <= DOMAIN_TOL
            return restore(np.where(ok, vals, math.inf))

        self.potential = PotentialDescriptor(
            evaluate, min_value,
            strong_convexity_modulus=self.strong_monotonicity_modulus,
            error_bound=error_bound)


class Sum(_AffineDomainOperator):
    """Linear part plus the normal cone of an affine set (compatible domains)."""

    def __init__(self, linear: Linear, cone: AffineNormalCone):
        if linear.dim != cone.dim:
            raise ValueError("summands live in different dimensions")
        super().__init__(cone.C, cone.d_vec, H=linear.Q, g=linear.b)


def section3_example_operator():
    """The plane operator A(x, y) = {x} x R on the line y = 0."""
    return RestrictedQuadratic(C=[[0.0, 1.0]], d_vec=[0.0],
                               H=[[1.0, 0.0], [0.0, 0.0]])


# ---------------------------------------------------------------------------
# Wrappers.
# ---------------------------------------------------------------------------

class Shifted(OperatorSpec):
    """A(x) = inner(x - u0): the graph translated by u0 in the point argument."""

    def __init__(self, inner: OperatorSpec, translation):
        self.inner = inner
        self.u0 = np.asarray(translation, dtype=float).reshape(inner.dim)
        self.dim = inner.dim
        self.strong_monotonicity_modulus = inner.strong_monotonicity_modulus
        self.lipschitz_constant = inner.lipschitz_constant
        zs = inner.zero_set
        if zs.is_empty:
            self.zero_set = ZeroSet("empty")
        elif zs.kind == "point":
            self.zero_set = ZeroSet("point", point=zs.point + self.u0)
        elif zs.kind == "box":
            self.zero_set = ZeroSet("box", lo=zs.lo + self.u0, hi=zs.hi + self.u0)
        else:
            self.zero_set = ZeroSet("affine", point=zs.point + self.u0,
                                    basis=zs.basis)
        self.potential = None
        if inner.potential is not None:
            pot = inner.potential
            u0 = self.u0
            self.potential = PotentialDescriptor(
                lambda x: pot.evaluate(np.asarray(x, dtype=float) - u0),
                pot.min_value, pot.strong_convexity_modulus, pot.error_bound)

    def resolvent(self, lam, x):
        return self.u0 + self.inner.resolvent(lam, np.asarray(x, dtype=float) - self.u0)

    def minimal_norm(self, x):
        return self.inner.minimal_norm(np.asarray(x, dtype=float) - self.u0)

    def graph_membership(self, u, v, tol=DOMAIN_TOL):
        return self.inner.graph_membership(np.asarray(u, dtype=float) - self.u0, v, tol)

    def domain_membership(self, x, tol=DOMAIN_TOL):
        return self.inner.domain_membership(np.asarray(x, dtype=float) - self.u0, tol)

    def domain_project(self, x):
        return self.u0 + self.inner.domain_project(np.asarray(x, dtype=float) - self.u0)

    def domain_geometry(self):
        anchor, gens = self.inner.domain_geometry()
        return anchor + self.u0, gens

    def _normal_basis(self):
        return self.inner._normal_basis()


class Scaled(OperatorSpec):
    """A(x) = factor * inner(x) with factor > 0."""

    def __init__(self, inner: OperatorSpec, factor):
        if factor <= 0:
            raise ValueError("factor must be positive")
        self.inner = inner
        self.factor = float(factor)
        self.dim = inner.dim
        self.strong_monotonicity_modulus = self.factor * inner.strong_monotonicity_modulus
        self.lipschitz_constant = (None if inner.lipschitz_constant is None
                                   else self.factor * inner.lipschitz_constant)
        self.zero_set = inner.zero_set
        self.potential = None
        if inner.potential is not None:
            pot = inner.potential
            rho = self.factor
            self.potential = PotentialDescriptor(
                lambda x: rho * pot.evaluate(x),
                rho * pot.min_value, rho * pot.strong_convexity_modulus,
                pot.error_bound)

    def resolvent(self, lam, x):
        return self.inner.resolvent(lam * self.factor, x)

    def minimal_norm(self, x):
        return self.factor * self.inner.minimal_norm(x)

    def graph_membership(self, u, v, tol=DOMAIN_TOL):
        return self.inner.graph_membership(
            u, np.asarray(v, dtype=float) / self.factor, tol)

    def domain_membership(self, x, tol=DOMAIN_TOL):
        return self.inner.domain_membership(x, tol)

    def domain_project(self, x):
        return self.inner.domain_project(x)

    def domain_geometry(self):
        return self.inner.domain_geometry()

    def _normal_basis(self):
        return self.inner._normal_basis()


# ---------------------------------------------------------------------------
# Spec-level operations (thin functional API over the catalog methods).
# ---------------------------------------------------------------------------

def resolvent(op: OperatorSpec, lam: float, x):
    """J_{lam A}(x) = (Id + lam A)^{-1}(x); unique, firmly nonexpansive."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    return op.resolvent(lam, x)


def minimal_norm_element(op: OperatorSpec, x):
    """The element of A(x) with minimal norm; raises OutsideDomain off dom A."""
    if not np.all(op.domain_membership(x)):
        raise OutsideDomain("x not in dom A")
    return op.minimal_norm(x)


def potential_value(op: OperatorSpec, x):
    """phi(x) for operators declared as subdifferentials (possibly +inf)."""
    if op.potential is None:
        raise NoPotential("operator was not declared as a subdifferential")
    return op.potential.evaluate(x)


def zero_set_project(op: OperatorSpec, x):
    """(projection of x onto S, distance to S)."""
    if op.zero_set.is_empty:
        raise EmptyZeroSet("operator has no zeros")
    x = np.asarray(x, dtype=float)
    point = op.zero_set.project(x)
    dist = np.linalg.norm(x - point, axis=-1)
    return point, (float(dist) if np.ndim(dist) == 0 else dist)


def tikhonov_point(op: OperatorSpec, eta: float):
    """x_eta = J_{(1/eta) A}(0), the regularization-curve point."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    return op.resolvent(1.0 / eta, np.zeros(op.dim))


# ---------------------------------------------------------------------------
# Gap function and graph sampling.
# ---------------------------------------------------------------------------

class GapRegion(NamedTuple):
    """Compact localization for the gap function.

    kind "box" uses lows/highs; kind "ball" uses center/radius.  v_lows and
    v_highs bound the sampled operator values for kinds with unbounded
    graphs (default: the region's own bounding box).
    """

    kind: str
    lows: Optional[np.ndarray] = None
    highs: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    radius: Optional[float] = None
    v_lows: Optional[np.ndarray] = None
    v_highs: Optional[np.ndarray] = None


def box_region(lows, highs, v_lows=None, v_highs=None):
    return GapRegion(
        "box", lows=np.asarray(lows, dtype=float),
        highs=np.asarray(highs, dtype=float),
        v_lows=None if v_lows is None else np.asarray(v_lows, dtype=float),
        v_highs=None if v_highs is None else np.asarray(v_highs, dtype=float))


def ball_region(center, radius, v_lows=None, v_highs=None):
    return GapRegion(
        "ball", center=np.asarray(center, dtype=float), radius=float(radius),
        v_lows=None if v_lows is None else np.asarray(v_lows, dtype=float),
        v_highs=None if v_highs is None else np.asarray(v_highs, dtype=float))


def _region_bbox(region: GapRegion):
    if region.kind == "box":
        return region.lows, region.highs
    r = region.radius
    return region.center - r, region.center + r


def _region_contains(region: GapRegion, pts):
    if region.kind == "box":
        return np.all((pts >= region.lows - 1e-12) & (pts <= region.highs + 1e-12),
                      axis=-1)
    return np.linalg.norm(pts - region.center, axis=-1) <= region.radius + 1e-12


def _unwrap_affine(op):
    """Effective (Q, b) when op is Linear up to shift/scale wrappers, else None."""
    if isinstance(op, Linear):
        return op.Q, op.b
    if isinstance(op, Scaled):
        inner = _unwrap_affine(op.inner)
        if inner is not None:
            return op.factor * inner[0], op.factor * inner[1]
    if isinstance(op, Shifted):
        inner = _unwrap_affine(op.inner)
        if inner is not None:
            Q, b = inner
            return Q, b - Q @ op.u0
    return None


def _max_concave_quadratic_ball(S, g, const, center, radius):
    """max of -u.S u/2 + g.u + const over ||u - center|| <= radius (S PSD)."""
    w_lin = g - S @ center

    def value(w):
        u = center + w
        return float(-0.5 * u @ S @ u + g @ u + const)

    if np.max(np.abs(S)) <= 1e-14:
        # linear objective: boundary point along the gradient
        return float(g @ center + radius * np.linalg.norm(g) + const)
    eigs = np.linalg.eigvalsh(0.5 * (S + S.T))
    if eigs.min() > 1e-12:
        w0 = np.linalg.solve(S, w_lin)
        if np.linalg.norm(w0) <= radius:
            return value(w0)
    if np.linalg.norm(w_lin) < 1e-15:
        return value(np.zeros_like(w_lin))

    def radius_gap(nu):
        w = np.linalg.solve(S + nu * np.eye(S.shape[0]), w_lin)
        return np.linalg.norm(w) - radius

    nu_lo = 1e-14
    if radius_gap(nu_lo) <= 0:
        w = np.linalg.solve(S + nu_lo * np.eye(S.shape[0]), w_lin)
        return value(w)
    nu_hi = np.linalg.norm(w_lin) / radius + 1.0
    while radius_gap(nu_hi) > 0:
        nu_hi *= 2.0
    nu = brentq(radius_gap, nu_lo, nu_hi, xtol=1e-14, rtol=1e-14)
    w = np.linalg.solve(S + nu * np.eye(S.shape[0]), w_lin)
    return value(w)


def gap_function(op: OperatorSpec, x, region: GapRegion, y=None, n_grid=101):
    """Localized gap sup{<x-u, v-y> : u in dom A ∩ K, v in A(u)}.

    Exact (closed-form inner maximization) for Linear kinds over balls and
    over boxes with separable symmetric part; a deterministic grid-search
    lower approximation otherwise, monotone nondecreasing in n_grid.
    """
    x = np.asarray(x, dtype=float).reshape(op.dim)
    y = np.zeros(op.dim) if y is None else np.asarray(y, dtype=float).reshape(op.dim)
    if n_grid < 2:
        raise ValueError("n_grid must be at least 2 per dimension")
    affine = _unwrap_affine(op)
    if affine is not None:
        Q, b = affine
        # f(u) = <x - u, Q u + b - y> = -u.S u/2 + g.u + const with S = Q + Q^T
        S = Q + Q.T
        g = Q.T @ x - (b - y)
        const = float(x @ (b - y))
        if region.kind == "ball":
            return _max_concave_quadratic_ball(S, g, const, region.center,
                                               region.radius)
        if np.max(np.abs(S - np.diag(np.diag(S)))) <= 1e-14:
            s = np.diag(S)
            best = const
            for i in range(op.dim):
                lo, hi = region.lows[i], region.highs[i]
                cands = [lo, hi]
                if s[i] > 0:
                    cands.append(float(np.clip(g[i] / s[i], lo, hi)))
                best += max(-0.5 * s[i] * c * c + g[i] * c for c in cands)
            return float(best)
    return _gap_grid(op, x, region, y, n_grid)


def gap_is_exact(op: OperatorSpec, region: GapRegion):
    """True when gap_function solves the inner maximization in closed form."""
    affine = _unwrap_affine(op)
    if affine is None:
        return False
    if region.kind == "ball":
        return True
    Q, _ = affine
    S = Q + Q.T
    return bool(np.max(np.abs(S - np.diag(np.diag(S)))) <= 1e-14)


def _grid_points(lows, highs, n):
    axes = [np.linspace(lo, hi, n) if hi > lo else np.array([lo])
            for lo, hi in zip(lows, highs)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _domain_box(op):
    if isinstance(op, SeparablePLQ):
        return (np.array([c.lo for c in op.coordinates]),
                np.array([c.hi for c in op.coordinates]))
    if isinstance(op, Shifted):
        lo, hi = _domain_box(op.inner)
        return lo + op.u0, hi + op.u0
    if isinstance(op, Scaled):
        return _domain_box(op.inner)
    return np.full(op.dim, -math.inf), np.full(op.dim, math.inf)


def _plq_core(op):
    if isinstance(op, SeparablePLQ):
        return op
    if isinstance(op, (Shifted, Scaled)):
        return _plq_core(op.inner)
    return None


def _gap_grid(op, x, region, y, n_grid):
    lows, highs = _region_bbox(region)
    v_lows = region.v_lows if region.v_lows is not None else lows
    v_highs = region.v_highs if region.v_highs is not None else highs
    anchor, gens = op.domain_geometry()
    full_domain = gens.shape[0] == op.dim and np.allclose(gens, np.eye(op.dim))
    if full_domain:
        dlo, dhi = _domain_box(op)
        glo = np.maximum(lows, dlo)
        ghi = np.minimum(highs, dhi)
        if np.any(glo > ghi):
            raise EmptyIntersection("dom A does not meet the region")
        U = _grid_points(glo, ghi, n_grid)
    else:
        # exact interval bounds of the reduced coordinates over the bbox
        B = gens
        span_lo = B * (lows - anchor)
        span_hi = B * (highs - anchor)
        zlo = np.minimum(span_lo, span_hi).sum(axis=1)
        zhi = np.maximum(span_lo, span_hi).sum(axis=1)
        Z = _grid_points(zlo, zhi, n_grid)
        U = anchor + Z @ B
    U = U[_region_contains(region, U)]
    if U.shape[0]:
        U = U[np.asarray(op.domain_membership(U)).reshape(-1)]
    if U.shape[0] == 0:
        raise EmptyIntersection("dom A does not meet the region")
    plq = _plq_core(op)
    if plq is not None:
        # linear in v for fixed u: the optimum sits at a subdifferential
        # endpoint, so only the u grid is approximate
        shift = op.u0 if isinstance(op, Shifted) else np.zeros(op.dim)
        scale = op.factor if isinstance(op, Scaled) else 1.0
        total = np.zeros(U.shape[0])
        for i, c in enumerate(plq.coordinates):
            sl, sr = c.slopes(U[:, i] - shift[i])
            sl = np.maximum(scale * sl, v_lows[i])
            sr = np.minimum(scale * sr, v_highs[i])
            diff = x[i] - U[:, i]
            total += np.maximum(diff * (sl - y[i]), diff * (sr - y[i]))
        return float(total.max())
    best = -math.inf
    N = op._normal_basis()
    vmax = float(np.max(np.abs(np.concatenate([v_lows, v_highs]))))
    for u in U:
        v0 = np.asarray(op.minimal_norm(u), dtype=float)
        if N.shape[0] == 0:
            best = max(best, float((x - u) @ (v0 - y)))
            continue
        S = _grid_points(np.full(N.shape[0], -vmax * math.sqrt(op.dim)),
                         np.full(N.shape[0], vmax * math.sqrt(op.dim)), n_grid)
        V = v0 + S @ N
        keep = np.all((V >= v_lows - 1e-12) & (V <= v_highs + 1e-12), axis=1)
        if not keep.any():
            continue
        best = max(best, float(((V[keep] - y) @ (x - u)).max()))
    if best == -math.inf:
        raise EmptyIntersection("no graph values inside the clip box")
    return best


def graph_sample(op: OperatorSpec, region_lows, region_highs, n, rng):
    """Draw n graph pairs (u, v) with u in the region box, v in A(u).

    Deterministic given the rng seed.  For operators with unbounded normal
    directions the multiplier is bounded so v stays inside the region box.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    lows = np.asarray(region_lows, dtype=float).reshape(op.dim)
    highs = np.asarray(region_highs, dtype=float).reshape(op.dim)
    dlo, dhi = _domain_box(op)
    dlo, dhi = np.maximum(lows, dlo), np.minimum(highs, dhi)
    anchor, gens = op.domain_geometry()
    full_domain = gens.shape[0] == op.dim and np.allclose(gens, np.eye(op.dim))
    if full_domain and np.any(dlo > dhi):
        raise EmptyIntersection("region misses dom A")
    plq = _plq_core(op)
    N = op._normal_basis()
    vscale = float(np.max(np.abs(np.concatenate([lows, highs]))))
    pairs = []
    tries = 0
    while len(pairs) < n:
        tries += 1
        if tries > 200 * n + 200:
            raise EmptyIntersection("could not sample region ∩ dom A")
        if full_domain:
            u = rng.uniform(dlo, dhi)
        else:
            u = np.asarray(op.domain_project(rng.uniform(lows, highs)), dtype=float)
            if np.any(u < lows - 1e-12) or np.any(u > highs + 1e-12):
                continue
        if plq is not None:
            shift = op.u0 if isinstance(op, Shifted) else np.zeros(op.dim)
            scale = op.factor if isinstance(op, Scaled) else 1.0
            sl, sr = plq.subdifferential_interval(np.asarray(u) - shift)
            sl, sr = scale * sl, scale * sr
            # only the infinite interval ends (domain boundary) are bounded
            sl = np.where(np.isneginf(sl), np.minimum(-vscale - 1.0, sr), sl)
            sr = np.where(np.isposinf(sr), np.maximum(vscale + 1.0, sl), sr)
            v = rng.uniform(sl, sr)
        else:
            v = np.asarray(op.minimal_norm(u), dtype=float)
            if N.shape[0]:
                s = rng.uniform(-vscale, vscale, size=N.shape[0])
                v = v + s @ N
                if np.any(v < lows - 1e-12) or np.any(v > highs + 1e-12):
                    continue
        pairs.append((np.asarray(u, dtype=float), v))
    return pairs
