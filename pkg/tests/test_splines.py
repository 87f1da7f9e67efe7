import numpy as np
import pytest
from hypothesis import given, settings as hypothesis_settings, strategies as st
from scipy.integrate import trapezoid

from vcam.errors import NumericsError, SplineDomainError, SplineSpecError
from vcam.splines import KnotPlacement, SplineSpec, build_basis, spline_l2_norm


def uniform(order, interior_count, domain=(0.0, 1.0)):
    return build_basis(SplineSpec(order=order, interior_count=interior_count, domain=domain))


def test_piecewise_constant_without_knots():
    """
    Order 1 without interior knots is the single constant function.
    """
    basis = uniform(1, 0)
    np.testing.assert_array_equal(basis.knots, [0.0, 1.0])
    assert basis.dimension == 1
    np.testing.assert_allclose(basis.eval_raw(np.array([0.0, 0.4, 1.0])), np.ones((3, 1)))


def test_uniform_interior_knots():
    basis = uniform(3, 4)
    np.testing.assert_allclose(basis.knots[3:-3], [0.2, 0.4, 0.6, 0.8])
    assert basis.dimension == 7


def test_clamped_knot_vector():
    basis = uniform(4, 3)
    np.testing.assert_allclose(basis.knots, [0, 0, 0, 0, 0.25, 0.5, 0.75, 1, 1, 1, 1])
    assert basis.dimension == 7


def test_invalid_specs_raise():
    """
    Orders below 1, negative knot counts and empty domains are rejected.
    """
    with pytest.raises(SplineSpecError):
        uniform(0, 2)
    with pytest.raises(SplineSpecError):
        uniform(3, -1)
    with pytest.raises(SplineSpecError):
        uniform(3, 2, domain=(1.0, 1.0))


def test_indicator_and_hat_values():
    np.testing.assert_allclose(uniform(1, 1).eval_raw(0.25), [1.0, 0.0])
    np.testing.assert_allclose(uniform(2, 0).eval_raw(0.3), [0.7, 0.3])


def test_right_endpoint_belongs_to_last_span():
    """
    The last basis function equals 1 at the right end of the domain.
    """
    basis = uniform(3, 2)
    values = basis.eval_raw(1.0)
    assert values[-1] == pytest.approx(1.0)
    assert values[:-1] == pytest.approx(np.zeros(basis.dimension - 1))


def test_scaled_and_centered_values():
    """
    Scaled values carry sqrt(J); centering subtracts the anchor row.
    """
    np.testing.assert_allclose(uniform(2, 0).eval_scaled(0.3), np.sqrt(2) * np.array([0.7, 0.3]))
    np.testing.assert_allclose(
        uniform(1, 1).eval_scaled(0.75, centered_at=0.25), np.sqrt(2) * np.array([-1.0, 1.0])
    )
    basis = uniform(3, 3)
    np.testing.assert_array_equal(basis.centered_design(0.37, 0.37), np.zeros(basis.dimension))


def test_outside_domain_raises():
    basis = uniform(3, 2)
    with pytest.raises(SplineDomainError):
        basis.eval_raw(1.0001)
    with pytest.raises(SplineDomainError):
        basis.eval_raw(np.array([0.5, -0.1]))
    with pytest.raises(SplineDomainError):
        basis.eval_raw(np.nan)


@given(
    order=st.integers(min_value=1, max_value=4),
    interior_count=st.integers(min_value=0, max_value=8),
    seed=st.integers(min_value=0, max_value=2 ** 32 - 1),
)
@hypothesis_settings(max_examples=40, deadline=None)
def test_partition_of_unity_and_local_support(order, interior_count, seed):
    """
    Raw basis values are nonnegative, sum to one and at most `order` of them
    are nonzero at any point.
    """
    basis = uniform(order, interior_count, domain=(-1.5, 2.0))
    x = np.random.default_rng(seed).uniform(-1.5, 2.0, size=1000)
    values = basis.eval_raw(x)
    assert np.all(values >= 0.0)
    np.testing.assert_allclose(values.sum(axis=1), 1.0, atol=1e-12)
    assert np.max(np.count_nonzero(values > 0.0, axis=1)) <= order


def test_quantile_knots_follow_the_sample():
    """
    Quantile placement puts the interior knots at equally spaced empirical
    quantiles of the sample.
    """
    sample = np.linspace(0.0, 1.0, 1001) ** 2
    spec = SplineSpec(order=3, interior_count=3, domain=(0.0, 1.0), placement=KnotPlacement.QUANTILE, sample=sample)
    basis = build_basis(spec)
    np.testing.assert_allclose(basis.knots[3:-3], np.quantile(sample, [0.25, 0.5, 0.75]))
    assert basis.mesh_ratio <= 10.0


def test_quantile_knots_fall_back_to_uniform_on_extreme_mesh():
    """
    A sample concentrated at one end would give a mesh ratio above 10; the
    uniform knots are used instead.
    """
    sample = np.concatenate([np.linspace(0.0, 0.01, 500), [1.0]])
    spec = SplineSpec(order=3, interior_count=3, placement=KnotPlacement.QUANTILE, sample=sample)
    basis = build_basis(spec)
    np.testing.assert_allclose(basis.knots[3:-3], [0.25, 0.5, 0.75])


def test_quantile_knots_need_distinct_values():
    spec = SplineSpec(order=3, interior_count=4, placement=KnotPlacement.QUANTILE, sample=np.array([0.0, 0.5, 1.0]))
    with pytest.raises(SplineSpecError):
        build_basis(spec)


def test_hat_gram_matrix():
    gram = uniform(2, 0).derivative_gram(0, scaled=False)
    np.testing.assert_allclose(gram.values, [[1 / 3, 1 / 6], [1 / 6, 1 / 3]], atol=1e-14)


def test_gram_vanishes_above_degree():
    """
    Derivatives of order >= m vanish, so the Gram matrix is zero.
    """
    assert not np.any(uniform(1, 3).derivative_gram(1).values)
    assert not np.any(uniform(2, 3).derivative_gram(2).values)


@pytest.mark.parametrize('order,interior_count,d', [(2, 3, 0), (3, 4, 1), (4, 5, 2), (3, 0, 0)])
def test_gram_matches_dense_trapezoid(order, interior_count, d):
    """
    Gauss-Legendre Gram matrices agree with a dense composite-trapezoid
    integral and are symmetric positive semidefinite.
    """
    basis = uniform(order, interior_count)
    gram = basis.derivative_gram(d, scaled=False)
    x = np.linspace(0.0, 1.0, 10001)
    D = basis.derivative_values(x, d)
    oracle = trapezoid(D[:, :, np.newaxis] * D[:, np.newaxis, :], x, axis=0)
    np.testing.assert_allclose(gram.values, oracle, rtol=1e-6, atol=1e-6 * np.abs(oracle).max())
    np.testing.assert_array_equal(gram.values, gram.values.T)
    assert gram.min_eigenvalue >= -1e-10


def test_gram_is_cached_and_read_only():
    basis = uniform(3, 2)
    first = basis.derivative_gram(1)
    assert basis.derivative_gram(1) is first
    with pytest.raises(ValueError):
        first.values[0, 0] = 1.0


@pytest.mark.parametrize('order,interior_count', [(1, 0), (2, 3), (3, 5), (4, 2)])
def test_l2_norm_of_constant_one(order, interior_count):
    """
    Constant 1 has unit norm and a zero derivative norm in every basis.
    """
    basis = uniform(order, interior_count)
    coeffs = np.full(basis.dimension, 1.0 / np.sqrt(basis.dimension))
    assert spline_l2_norm(coeffs, basis) == pytest.approx(1.0, abs=1e-12)
    assert spline_l2_norm(np.zeros(basis.dimension), basis) == 0.0
    if order > 1:
        assert spline_l2_norm(coeffs, basis, 1) == pytest.approx(0.0, abs=1e-5)


def test_l2_norm_is_homogeneous():
    basis = uniform(3, 4)
    rng = np.random.default_rng(3)
    coeffs = rng.normal(size=basis.dimension)
    for t in rng.normal(size=5):
        assert spline_l2_norm(t * coeffs, basis, 1) == pytest.approx(abs(t) * spline_l2_norm(coeffs, basis, 1), rel=1e-12)


def test_l2_norm_length_mismatch():
    with pytest.raises(NumericsError):
        spline_l2_norm(np.ones(3), uniform(3, 2))


@pytest.mark.parametrize('order', [1, 2, 3, 4])
def test_polynomials_below_order_are_reproduced(order):
    """
    Least-squares projection reproduces any polynomial of degree < m.
    """
    basis = uniform(order, 4, domain=(-1.0, 2.0))
    x = np.linspace(-1.0, 2.0, 201)
    target = np.polynomial.polynomial.polyval(x, np.arange(1.0, order + 1.0))
    B = basis.eval_raw(x)
    coeffs = np.linalg.lstsq(B, target, rcond=None)[0]
    assert np.max(np.abs(B @ coeffs - target)) < 1e-9


def test_integrals_and_greville():
    """
    Exact basis integrals sum to the domain length; Greville coefficients
    reproduce lines.
    """
    basis = uniform(3, 4, domain=(-1.0, 3.0))
    assert basis.integrals(scaled=False).sum() == pytest.approx(4.0)
    x = np.linspace(-1.0, 3.0, 17)
    np.testing.assert_allclose(basis.eval_raw(x) @ (2.0 - 0.5 * basis.greville()), 2.0 - 0.5 * x, atol=1e-12)
