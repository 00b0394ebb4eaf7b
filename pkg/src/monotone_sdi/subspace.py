"""Reduction of an operator to the span of its domain differences.

For operators whose domain has empty interior (affine-set domains), the
dynamics live on L = span(dom A - dom A).  This module computes an anchor
point, an orthonormal basis of L, the associated projector, and the reduced
operator acting on basis coordinates, which has a domain with nonempty
interior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import operators as ops
from .errors import ReductionUnsupported


@dataclass(frozen=True)
class SubspaceInfo:
    """Anchor u0 in dom A plus an orthonormal row basis of span(dom A - u0)."""

    anchor: np.ndarray
    basis: np.ndarray  # (dim_L, d) with orthonormal rows
    dim_L: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float))
        object.__setattr__(self, "basis", np.asarray(self.basis, dtype=float))
        object.__setattr__(self, "dim_L", self.basis.shape[0])

    @property
    def dim(self):
        return self.anchor.shape[0]

    @property
    def projector(self):
        """d x d orthogonal projector onto L."""
        return self.basis.T @ self.basis

    @property
    def is_full(self):
        return self.dim_L == self.dim

    def to_reduced(self, x):
        """Basis coordinates of x - anchor; batched."""
        return (np.asarray(x, dtype=float) - self.anchor) @ self.basis.T

    def to_ambient(self, z):
        """Lift reduced coordinates back: anchor + basis^T z; batched."""
        return self.anchor + np.asarray(z, dtype=float) @ self.basis


def _orthonormalize(gens):
    gens = np.atleast_2d(np.asarray(gens, dtype=float))
    if gens.shape[0] == 0:
        return gens
    q, r = np.linalg.qr(gens.T)
    keep = np.abs(np.diag(r)) > 1e-12
    return np.ascontiguousarray(q.T[keep])


def domain_subspace(op: ops.OperatorSpec) -> SubspaceInfo:
    """Anchor and orthonormal basis of span(dom A - anchor).

    Domain geometry is declared by the catalog kind, never probed
    numerically, so the basis is exact for every catalog operator.  Full
    domain kinds get the standard basis; the anchor is normalized to the
    origin whenever the domain contains it, so translation is a no-op for
    the common kinds.
    """
    anchor, gens = op.domain_geometry()
    if bool(np.all(np.asarray(op.domain_membership(np.zeros(op.dim))))):
        anchor = np.zeros(op.dim)
    if gens.shape[0] == op.dim and np.allclose(gens, np.eye(op.dim)):
        return SubspaceInfo(anchor=anchor, basis=np.eye(op.dim))
    return SubspaceInfo(anchor=anchor, basis=_orthonormalize(gens))


def _reduced_linear_data(op, info):
    """(H, g) such that the reduced operator is z -> B H B^T z + B(H u0 + g)."""
    if isinstance(op, (ops.AffineNormalCone, ops.RestrictedQuadratic, ops.Sum)):
        return op.H, op.g
    return None


def reduce_operator(op: ops.OperatorSpec, info: SubspaceInfo) -> ops.OperatorSpec:
    """The operator T(z) = P* A(anchor + P z) on R^{dim_L}.

    The resolvent of T matches the basis-projected resolvent of A:
    basis (J_{lam A}(u0 + basis^T z) - u0) = J_{lam T}(z).
    """
    if info.is_full:
        if np.allclose(info.anchor, 0.0):
            return op
        # full span but the domain misses the origin: translate the graph
        return ops.Shifted(op, -info.anchor)
    if isinstance(op, ops.Shifted):
        inner_info = SubspaceInfo(anchor=info.anchor - op.u0, basis=info.basis)
        return reduce_operator(op.inner, inner_info)
    if isinstance(op, ops.Scaled):
        inner = reduce_operator(op.inner, info)
        return ops.Scaled(inner, op.factor)
    data = _reduced_linear_data(op, info)
    if data is None:
        raise ReductionUnsupported(
            f"no reduced form for kind {type(op).__name__}")
    H, g = data
    B = info.basis
    if not np.all(np.asarray(op.domain_membership(info.anchor))):
        raise ReductionUnsupported("declared anchor violates the domain")
    Q_red = B @ H @ B.T
    b_red = B @ (H @ info.anchor + g)
    sym = Q_red + Q_red.T
    if np.linalg.eigvalsh(0.5 * sym).min() < -1e-10:
        raise ReductionUnsupported("reduced operator is not monotone; "
                                   "inconsistent domain geometry")
    as_subdiff = isinstance(op, (ops.AffineNormalCone, ops.RestrictedQuadratic)) \
        and np.allclose(Q_red, Q_red.T, atol=1e-12)
    return ops.Linear(Q_red, b_red, as_subdifferential=as_subdiff)
