import math

import jax.numpy as jnp
import numpy as np
import pytest

from finslerlab import metric as M
from finslerlab.errors import (DegenerateDirectionError, InvalidInputError, MetricViolationError)
from oracles import brute_dual, fd_gradient, fd_hessian, randers_F, randers_dual

B = np.array([0.3, 0.0])


def test_euclidean_norm():
    assert M.norm(M.euclidean(2), [0.4, -1.0], [3.0, 4.0]) == pytest.approx(5.0, abs=1e-14)


def test_randers_norm_direct(randers03):
    assert M.norm(randers03, [1.0, 2.0], [1.0, 0.0]) == pytest.approx(1.3, abs=1e-14)
    assert M.norm(randers03, [1.0, 2.0], [-1.0, 0.0]) == pytest.approx(0.7, abs=1e-14)


def test_norm_zero_only_at_zero(randers03):
    assert M.norm(randers03, [0, 0], [0, 0]) == 0.0
    assert M.norm(randers03, [0, 0], [1e-300, 0]) > 0


def test_norm_homogeneous(randers03):
    y = np.array([0.2, -0.7])
    assert M.norm(randers03, [0, 1], 2 * y) == pytest.approx(2 * M.norm(randers03, [0, 1], y), rel=1e-14)


def test_nonfinite_input_rejected(randers03):
    with pytest.raises(InvalidInputError):
        M.norm(randers03, [0, 0], [np.nan, 1.0])
    with pytest.raises(InvalidInputError):
        M.norm(randers03, [np.inf, 0], [1.0, 1.0])


def test_randers_violation():
    with pytest.raises(MetricViolationError):
        M.randers([0.6, 0.8])
    with pytest.raises(MetricViolationError):
        M.randers(lambda x: jnp.array([0.5 + 0.6 * jnp.sin(x[0]), 0.0]), n=2)


def test_riemannian_not_spd():
    with pytest.raises(MetricViolationError):
        M.riemannian([[1.0, 2.0], [2.0, 1.0]])


def test_fundamental_tensor_euclidean_identity():
    g = M.fundamental_tensor(M.euclidean(3), [0, 0, 0], [0.3, -2.0, 1.0]).g
    np.testing.assert_allclose(g, np.eye(3), atol=1e-14)


def test_fundamental_tensor_riemannian_is_a():
    def a(x):
        return jnp.array([[2 + jnp.sin(x[0]), 0.3], [0.3, 1 + x[1] ** 2]])

    met = M.riemannian(a, n=2)
    x = np.array([0.4, -0.5])
    for y in ([1.0, 0.0], [0.3, -2.0]):
        np.testing.assert_allclose(M.fundamental_tensor(met, x, y).g, np.asarray(a(x)), atol=1e-13)


def test_fundamental_tensor_randers_fd(randers03):
    y = np.array([1.0, 0.0])
    ref = fd_hessian(lambda v: 0.5 * randers_F(v, B) ** 2, y)
    g = M.fundamental_tensor(randers03, [0, 0], y).g
    np.testing.assert_allclose(g, ref, atol=1e-7)


def test_fundamental_tensor_zero_direction(randers03):
    with pytest.raises(DegenerateDirectionError):
        M.fundamental_tensor(randers03, [0, 0], [0, 0])


def test_indefinite_custom_metric():
    # a norm whose unit ball is not convex near y2 = 0
    bad = M.custom(lambda x, y: (jnp.abs(y[0]) ** 0.5 + jnp.abs(y[1]) ** 0.5) ** 2, 2)
    with pytest.raises(MetricViolationError):
        M.fundamental_tensor(bad, [0, 0], [1.0, 1.0])


def test_cartan_riemannian_zero():
    met = M.riemannian([[2.0, 0.5], [0.5, 1.0]])
    np.testing.assert_allclose(M.cartan_tensor(met, [0, 0], [1.0, 2.0]).C, 0.0, atol=1e-14)


def test_cartan_randers_fd(randers03):
    y = np.array([0.0, 1.0])

    def g_fd(v):
        return fd_hessian(lambda w: 0.5 * randers_F(w, B) ** 2, v)

    dg = fd_gradient(g_fd, y)  # dg[k] = d g / d y^k
    ref = 0.5 * np.transpose(dg, (1, 2, 0))
    ct = M.cartan_tensor(randers03, [0, 0], y)
    np.testing.assert_allclose(ct.C, ref, atol=1e-6)
    np.testing.assert_allclose(ct.A, M.norm(randers03, [0, 0], y) * ct.C, atol=1e-15)


def test_cartan_symmetry_and_contraction(randers03):
    y = np.array([0.4, -1.3])
    C = M.cartan_tensor(randers03, [0, 0], y).C
    for p in [(1, 0, 2), (0, 2, 1), (2, 1, 0)]:
        np.testing.assert_allclose(C, np.transpose(C, p), atol=1e-14)
    assert np.max(np.abs(C @ y)) <= 1e-9 * np.max(np.abs(C))


def test_dual_norm_euclidean():
    assert M.dual_norm(M.euclidean(2), [0, 0], [3.0, 4.0]) == pytest.approx(5.0, rel=1e-12)


def test_dual_norm_zero(randers03):
    assert M.dual_norm(randers03, [0, 0], [0.0, 0.0]) == 0.0
    np.testing.assert_array_equal(M.legendre_inverse(randers03, [0, 0], [0.0, 0.0]), 0.0)


def test_dual_norm_nonfinite(randers03):
    with pytest.raises(InvalidInputError):
        M.dual_norm(randers03, [0, 0], [np.nan, 0.0])


def test_dual_norm_of_legendre_image_is_one(randers03):
    y = np.array([0.6, 0.8])
    y = y / M.norm(randers03, [0, 0], y)
    xi = M.fundamental_tensor(randers03, [0, 0], y).g @ y
    assert M.dual_norm(randers03, [0, 0], xi) == pytest.approx(1.0, abs=1e-12)


def test_dual_norm_brute_force(randers03):
    xi = np.array([1.0, 0.0])
    sup, _ = brute_dual(lambda Y: np.linalg.norm(Y, axis=1) + Y @ B, xi)
    val = M.dual_norm(randers03, [0, 0], xi)
    assert val == pytest.approx(sup, abs=1e-4)
    assert val == pytest.approx(randers_dual(xi, B), abs=1e-12)


def test_legendre_euclidean_identity():
    xi = np.array([0.3, -1.2])
    np.testing.assert_allclose(M.legendre_inverse(M.euclidean(2), [1, 1], xi), xi, atol=1e-13)


def test_legendre_brute_force(randers03):
    xi = np.array([0.0, 1.0])
    sup, arg = brute_dual(lambda Y: np.linalg.norm(Y, axis=1) + Y @ B, xi)
    y = M.legendre_inverse(randers03, [0, 0], xi)
    np.testing.assert_allclose(y, sup * arg, atol=1e-4)
    g = M.fundamental_tensor(randers03, [0, 0], y).g
    np.testing.assert_allclose(g @ y, xi, atol=1e-10)


def test_legendre_homogeneity(randers03):
    xi = np.array([0.5, -0.2])
    a = 3.7
    np.testing.assert_allclose(M.legendre_inverse(randers03, [0, 0], a * xi),
                               a * M.legendre_inverse(randers03, [0, 0], xi), rtol=1e-10)
    assert M.dual_norm(randers03, [0, 0], a * xi) == pytest.approx(a * M.dual_norm(randers03, [0, 0], xi),
                                                                  rel=1e-10)


def test_covector_wrapper(randers03):
    xi = M.Covector(np.array([1.0, 2.0]), np.zeros(2))
    assert M.dual_norm(randers03, [0, 0], xi) == pytest.approx(randers_dual([1.0, 2.0], B), rel=1e-12)


def test_scaled_metric(randers03):
    s = M.scaled(randers03, 2.5)
    y = np.array([0.3, 0.9])
    assert M.norm(s, [0, 0], y) == pytest.approx(2.5 * M.norm(randers03, [0, 0], y), rel=1e-14)
    np.testing.assert_allclose(M.fundamental_tensor(s, [0, 0], y).g,
                               6.25 * M.fundamental_tensor(randers03, [0, 0], y).g, rtol=1e-13)
    assert M.dual_norm(s, [0, 0], [1.0, 0.0]) == pytest.approx(randers_dual([1.0, 0.0], B) / 2.5, rel=1e-10)


def test_randers_field_alpha_norm():
    met = M.randers(lambda x: jnp.array([0.3 * jnp.cos(x[1]), 0.2]), n=2)
    assert M.randers_alpha_norm(met, [0.0, 0.0]) == pytest.approx(math.hypot(0.3, 0.2), rel=1e-14)
