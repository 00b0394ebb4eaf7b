import numpy as np
import pytest

from monotone_sdi import operators as ops


@pytest.fixture
def identity_op():
    return ops.Linear([[1.0]], as_subdifferential=True)


@pytest.fixture
def shifted_identity():
    # A(x) = x - 1, zero at 1
    return ops.Linear([[1.0]], [-1.0])


@pytest.fixture
def skew_op():
    return ops.Linear([[0.0, -1.0], [1.0, 0.0]])


@pytest.fixture
def abs_op():
    return ops.SeparablePLQ([ops.abs_coordinate()])


@pytest.fixture
def hinge_op():
    return ops.SeparablePLQ([ops.hinge_coordinate(1.0)],
                            error_bound={"p": 1.0, "gamma": 1.0, "level": 0.5})


@pytest.fixture
def section3_op():
    return ops.section3_example_operator()


@pytest.fixture
def cone_op():
    # normal cone of the line x1 + x2 = 1
    return ops.AffineNormalCone([[1.0, 1.0]], [1.0])


def catalog_ops():
    return [
        ops.Linear([[1.0]], as_subdifferential=True),
        ops.Linear([[1.0]], [-1.0]),
        ops.Linear([[2.0, 0.0], [0.0, 1.0]], [-2.0, 0.0],
                   as_subdifferential=True),
        ops.Linear([[0.0, -1.0], [1.0, 0.0]]),
        ops.SeparablePLQ([ops.abs_coordinate()]),
        ops.SeparablePLQ([ops.hinge_coordinate(1.0)]),
        ops.SeparablePLQ([ops.quadratic_coordinate(2.0), ops.abs_coordinate()]),
        ops.AffineNormalCone([[1.0, 1.0]], [1.0]),
        ops.section3_example_operator(),
        ops.Sum(ops.Linear([[0.0, -1.0], [1.0, 0.0]]),
                ops.AffineNormalCone([[0.0, 1.0]], [0.0])),
        ops.Shifted(ops.SeparablePLQ([ops.abs_coordinate()]), [0.5]),
        ops.Scaled(ops.Linear([[1.0]]), 2.0),
    ]


@pytest.fixture(params=range(12), ids=lambda i: f"op{i}")
def catalog_op(request):
    return catalog_ops()[request.param]


def random_domain_points(op, n, rng):
    """Points in cl dom A for sampling-based invariants."""
    pts = rng.uniform(-2.0, 2.0, size=(n, op.dim))
    return np.asarray(op.domain_project(pts))
