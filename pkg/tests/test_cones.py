import pytest
import sys
import os

import numpy as np

# Add project root to path
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from conemv.models.cones import (
    FullSpace,
    LinearSpan,
    NonnegativeOrthant,
    Polyhedral,
    Product,
    Ray,
    ZeroCone,
    cone_from_spec,
    contains,
    polar_project,
    project,
)
from conemv.utils.exceptions import ConfigError, DimensionMismatch, OutOfRange

SQRT2 = np.sqrt(2.0)


def sample_cones():
    return [
        FullSpace(3),
        ZeroCone(3),
        NonnegativeOrthant(3),
        Ray(np.array([1.0, 2.0, -1.0])),
        LinearSpan.from_vectors([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]], 3),
        Polyhedral.from_generators(np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, -1.0]])),
        Product((NonnegativeOrthant(1), LinearSpan.from_vectors([[1.0, 1.0]], 2))),
    ]


def test_contains_examples():
    """Test membership on simple cones"""
    assert contains(NonnegativeOrthant(2), [1.0, 0.0], 1e-9)
    assert not contains(NonnegativeOrthant(2), [1.0, -1.0], 1e-9)
    assert contains(Ray(np.array([1.0, 1.0]) / SQRT2), [2.0, 2.0], 1e-9)
    assert not contains(Ray(np.array([1.0, 1.0])), [-2.0, -2.0], 1e-9)


def test_project_examples():
    np.testing.assert_array_equal(project(NonnegativeOrthant(2), [1.0, -2.0]), [1.0, 0.0])
    np.testing.assert_allclose(project(Ray(np.array([1.0, 1.0]) / SQRT2), [2.0, 0.0]), [1.0, 1.0])
    np.testing.assert_allclose(project(Ray(np.array([1.0, 1.0])), [-2.0, 0.0]), [0.0, 0.0])
    np.testing.assert_array_equal(project(ZeroCone(2), [3.0, 4.0]), [0.0, 0.0])


def test_members_are_fixed():
    rng = np.random.default_rng(0)
    for cone in sample_cones():
        for _ in range(10):
            member = cone.project(rng.normal(size=3))
            np.testing.assert_allclose(cone.project(member), member, atol=1e-12)


def test_zero_is_member_and_conic_convex():
    """Test the cone axioms on sampled points"""
    rng = np.random.default_rng(1)
    for cone in sample_cones():
        assert cone.contains(np.zeros(3))
        for _ in range(10):
            x = cone.project(rng.normal(size=3))
            y = cone.project(rng.normal(size=3))
            alpha = float(rng.uniform(0.0, 10.0))
            assert cone.contains(alpha * x)
            assert cone.contains(x + y)


def test_idempotent_and_nonexpansive():
    rng = np.random.default_rng(2)
    for cone in sample_cones():
        for _ in range(20):
            x, y = rng.normal(size=3) * 3.0, rng.normal(size=3) * 3.0
            px, py = cone.project(x), cone.project(y)
            np.testing.assert_allclose(cone.project(px), px, atol=1e-12)
            assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-12


def test_polyhedral_identity_generators_match_orthant():
    rng = np.random.default_rng(3)
    cone = Polyhedral.from_generators(np.eye(4))
    for _ in range(10):
        x = rng.normal(size=4)
        np.testing.assert_allclose(cone.project(x), np.maximum(x, 0.0), atol=1e-12)


def test_span_projection():
    cone = LinearSpan.from_vectors([[1.0, 1.0, 0.0], [2.0, 2.0, 0.0]], 3)
    assert cone.basis.shape == (3, 1)
    np.testing.assert_allclose(cone.project([2.0, 0.0, 5.0]), [1.0, 1.0, 0.0])


def test_product_projects_blockwise():
    cone = Product((NonnegativeOrthant(2), FullSpace(1)))
    assert cone.dim == 3
    np.testing.assert_array_equal(cone.project([-1.0, 2.0, -3.0]), [0.0, 2.0, -3.0])
    gens = Product((NonnegativeOrthant(1), Ray(np.array([1.0])))).generators()
    np.testing.assert_array_equal(gens, np.eye(2))
    assert cone.generators() is None


def test_polar_projection_moreau():
    """Test x = P_K x + P_K° x with orthogonal parts"""
    rng = np.random.default_rng(4)
    for cone in sample_cones():
        x = rng.normal(size=3)
        px, qx = cone.project(x), polar_project(cone, x)
        np.testing.assert_allclose(px + qx, x, atol=1e-12)
        assert abs(float(px @ qx)) <= 1e-10


def test_symmetry():
    assert FullSpace(2).is_symmetric
    assert ZeroCone(2).is_symmetric
    assert LinearSpan.from_vectors([[1.0, 0.0]], 2).is_symmetric
    assert Product((FullSpace(1), ZeroCone(1))).is_symmetric
    assert not NonnegativeOrthant(2).is_symmetric
    assert not Ray(np.array([1.0, 0.0])).is_symmetric


def test_linear_image():
    sigma_t = np.array([[2.0, 1.0], [0.0, 3.0]])
    image = NonnegativeOrthant(2).linear_image(sigma_t)
    assert image.contains(sigma_t @ np.array([1.0, 2.0]))
    assert not image.contains(sigma_t @ np.array([1.0, -2.0]))
    span = FullSpace(2).linear_image(np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert span.basis.shape == (2, 1)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        NonnegativeOrthant(2).project([1.0, 2.0, 3.0])
    with pytest.raises(DimensionMismatch):
        NonnegativeOrthant(2).contains([1.0])


def test_zero_ray_rejected():
    with pytest.raises(OutOfRange):
        Ray(np.zeros(2))


def test_cone_from_spec():
    """Test building each cone variant from its JSON form"""
    assert isinstance(cone_from_spec({"type": "full"}, dim=2), FullSpace)
    assert cone_from_spec({"type": "orthant", "data": 3}).dim == 3
    assert isinstance(cone_from_spec({"type": "zero"}, dim=1), ZeroCone)
    ray = cone_from_spec({"type": "ray", "data": [3.0, 4.0]}, dim=2)
    np.testing.assert_allclose(ray.direction, [0.6, 0.8])
    span = cone_from_spec({"type": "span", "data": [[1.0, 0.0, 0.0]]}, dim=3)
    assert span.basis.shape == (3, 1)
    poly = cone_from_spec({"type": "polyhedral", "data": [[1.0, 0.0], [1.0, 1.0]]}, dim=2)
    assert poly.generators().shape == (2, 2)
    product = cone_from_spec({"type": "product", "data": [{"type": "orthant", "data": 1},
                                                           {"type": "full", "data": 2}]}, dim=3)
    assert isinstance(product, Product)


def test_cone_from_spec_errors():
    with pytest.raises(DimensionMismatch):
        cone_from_spec({"type": "orthant", "data": 2}, dim=3)
    with pytest.raises(ConfigError):
        cone_from_spec({"type": "full"})
    with pytest.raises(ConfigError) as exc:
        cone_from_spec({"type": "sphere"})
    assert exc.value.field == "cone.type"


@pytest.mark.parametrize("spec", [
    {"type": "span"},
    {"type": "ray", "data": "abc"},
    {"type": "ray", "data": [[1.0, 0.0]]},
    {"type": "ray", "data": [1.0, float("nan")]},
    {"type": "span", "data": []},
    {"type": "polyhedral", "data": [[1.0], [1.0, 2.0]]},
    {"type": "polyhedral", "data": {"x": 1}},
])
def test_malformed_cone_data(spec):
    with pytest.raises(ConfigError) as exc:
        cone_from_spec(spec)
    assert exc.value.field == "cone.data"
