import numpy as np
import pytest

from monotone_sdi import operators as ops
from monotone_sdi.subspace import SubspaceInfo, domain_subspace, reduce_operator

from conftest import catalog_ops


class TestDomainSubspace:
    def test_section3(self, section3_op):
        info = domain_subspace(section3_op)
        assert np.allclose(info.anchor, [0.0, 0.0], atol=1e-12)
        assert info.dim_L == 1
        assert np.allclose(np.abs(info.basis), [[1.0, 0.0]], atol=1e-12)

    def test_full_domain_linear(self):
        op = ops.Linear(np.eye(3))
        info = domain_subspace(op)
        assert info.dim_L == 3
        assert np.allclose(info.basis, np.eye(3))

    def test_affine_cone_line(self, cone_op):
        info = domain_subspace(cone_op)
        assert np.allclose(cone_op.C @ info.anchor, cone_op.d_vec, atol=1e-12)
        assert info.dim_L == 1
        direction = info.basis[0]
        assert np.allclose(np.abs(direction), [1 / np.sqrt(2)] * 2, atol=1e-12)

    def test_invariants_all_catalog(self):
        for op in catalog_ops():
            info = domain_subspace(op)
            gram = info.basis @ info.basis.T
            assert np.allclose(gram, np.eye(info.dim_L), atol=1e-12)
            Pi = info.projector
            assert np.allclose(Pi, Pi.T, atol=1e-12)
            assert np.allclose(Pi @ Pi, Pi, atol=1e-12)
            anchor, gens = op.domain_geometry()
            # every declared generator lies in span(basis)
            for g in gens:
                assert np.linalg.norm(g - g @ Pi) <= 1e-10
            assert np.all(np.asarray(op.domain_membership(info.anchor)))


class TestReduceOperator:
    def test_section3_reduces_to_identity(self, section3_op):
        info = domain_subspace(section3_op)
        red = reduce_operator(section3_op, info)
        assert isinstance(red, ops.Linear)
        assert red.Q[0, 0] == pytest.approx(1.0)
        assert red.b[0] == pytest.approx(0.0, abs=1e-14)
        # T(2) = 2
        assert red.minimal_norm(np.array([2.0]))[0] == pytest.approx(2.0)

    def test_full_domain_unchanged(self):
        op = ops.Linear([[2.0, 0.0], [0.0, 1.0]])
        info = domain_subspace(op)
        assert reduce_operator(op, info) is op

    def test_cone_reduces_to_zero(self, cone_op):
        info = domain_subspace(cone_op)
        red = reduce_operator(cone_op, info)
        assert isinstance(red, ops.Linear)
        assert np.allclose(red.Q, 0.0, atol=1e-14)
        assert np.allclose(red.b, 0.0, atol=1e-14)

    def test_resolvent_commutation_200_random(self):
        rng = np.random.default_rng(314)
        for op in catalog_ops():
            info = domain_subspace(op)
            red = reduce_operator(op, info)
            for _ in range(200):
                lam = 10.0 ** rng.uniform(-2, 1)
                z = rng.uniform(-3, 3, size=info.dim_L)
                x = info.to_ambient(z)
                lhs = info.to_reduced(np.asarray(op.resolvent(lam, x)))
                rhs = np.asarray(red.resolvent(lam, z))
                assert np.linalg.norm(lhs - rhs) <= 1e-8

    def test_reduced_potential_for_subdifferentials(self, section3_op):
        info = domain_subspace(section3_op)
        red = reduce_operator(section3_op, info)
        assert red.potential is not None
        z = np.array([2.0])
        assert float(red.potential.evaluate(z)) == pytest.approx(
            float(section3_op.potential.evaluate(info.to_ambient(z))))
