"""
Tests for truncated Taylor jet arithmetic
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from krf_lab._jets import (
    JetArray,
    dz,
    dzbar,
    get_basis,
    jet_det,
    jet_einsum,
    jet_inv,
    jexp,
    jlog,
    jpow,
)


def _vars(point, order):
    basis = get_basis(len(point), order)
    return [JetArray.variable(i, x0, basis) for i, x0 in enumerate(point)]


class TestJetBasis:
    """Test monomial bookkeeping"""

    def test_monomial_count(self):
        """Test number of monomials is binom(nvar + order, order)"""
        basis = get_basis(3, 4)
        assert basis.nmon == math.comb(7, 4)

    def test_graded_prefix(self):
        """Test lower-order monomials form a prefix"""
        basis = get_basis(2, 3)
        assert basis.sizes == (1, 3, 6, 10)
        assert np.all(np.diff(basis.degrees) >= 0)

    def test_index_outside_basis(self):
        """Test index_of rejects monomials of too high degree"""
        with pytest.raises(KeyError):
            get_basis(2, 2).index_of([2, 1])

    def test_basis_cached(self):
        """Test get_basis returns the cached instance"""
        assert get_basis(2, 3) is get_basis(2, 3)


class TestJetArithmetic:
    """Test exact derivatives through arithmetic"""

    def test_polynomial_partials(self):
        """Test partials of x^3 y are exact"""
        x, y = _vars([0.5, -1.5], 4)
        f = x**3 * y
        assert f.partial([3, 1]) == pytest.approx(6.0)
        assert f.partial([2, 0]) == pytest.approx(6.0 * 0.5 * -1.5)
        assert f.value == pytest.approx(0.125 * -1.5)

    def test_product_rule(self):
        """Test d(fg) = f'g + fg'"""
        x, y = _vars([0.3, 0.7], 4)
        f = jexp(x * y) + y
        g = 1.0 / (2.0 + x * x)
        lhs = (f * g).diff(0)
        rhs = f.diff(0) * g + f * g.diff(0)
        np.testing.assert_allclose(lhs.coeffs, rhs.coeffs, atol=1e-12)

    def test_exp_log_inverse(self):
        """Test exp(log f) recovers f"""
        x, y = _vars([0.2, -0.4], 5)
        f = 2.0 + x + y * y
        np.testing.assert_allclose(jexp(jlog(f)).coeffs, f.coeffs, atol=1e-12)

    def test_power_matches_repeated_product(self):
        """Test jpow with an integral exponent matches multiplication"""
        (x,) = _vars([1.3], 6)
        f = 1.0 + x
        np.testing.assert_allclose(jpow(f, 3.0).coeffs, (f * f * f).coeffs, atol=1e-12)

    def test_division(self):
        """Test (f / g) * g recovers f"""
        x, y = _vars([0.1, 0.2], 4)
        f = x + 3.0
        g = 1.5 + y * x
        np.testing.assert_allclose(((f / g) * g).coeffs, f.coeffs, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(x0=st.floats(min_value=-2.0, max_value=2.0), k=st.integers(min_value=0, max_value=5))
    def test_exp_derivatives(self, x0, k):
        """Test every derivative of exp(x) equals exp(x0)"""
        (x,) = _vars([x0], 5)
        assert jexp(x).partial([k]) == pytest.approx(math.exp(x0), rel=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(x0=st.floats(min_value=0.5, max_value=3.0))
    def test_log_second_derivative(self, x0):
        """Test d^2 log(x) = -1/x^2"""
        (x,) = _vars([x0], 3)
        assert jlog(x).partial([2]) == pytest.approx(-1.0 / x0**2, rel=1e-12)


class TestJetLinearAlgebra:
    """Test matrix operations on jets"""

    def _matrix(self):
        x, y = _vars([0.4, -0.3], 3)
        return JetArray.stack(
            [JetArray.stack([2.0 + x, y * x], 0), JetArray.stack([y * x, 3.0 + y * y], 0)], 0
        )

    def test_inverse(self):
        """Test M^-1 M = I as jets"""
        mat = self._matrix()
        prod = jet_einsum("ij,jk->ik", jet_inv(mat), mat)
        identity = np.zeros_like(prod.coeffs)
        identity[0, 0, 0] = identity[1, 1, 0] = 1.0
        np.testing.assert_allclose(prod.coeffs, identity, atol=1e-12)

    def test_determinant_value(self):
        """Test jet_det value matches numpy"""
        mat = self._matrix()
        assert jet_det(mat).value == pytest.approx(np.linalg.det(mat.value))

    def test_determinant_rejects_large(self):
        """Test jet_det refuses 3x3 matrices"""
        basis = get_basis(1, 1)
        with pytest.raises(ValueError):
            jet_det(JetArray.constant(np.eye(3), basis))


class TestWirtinger:
    """Test complex derivatives"""

    def test_dz_of_abs2(self):
        """Test d/dz |z|^2 = conj(z) and d/dzbar |z|^2 = z"""
        x, y = _vars([0.6, -0.8], 2)
        f = x * x + y * y
        assert dz(f, 0).value == pytest.approx(0.6 + 0.8j)
        assert dzbar(f, 0).value == pytest.approx(0.6 - 0.8j)

    def test_laplacian_of_abs2(self):
        """Test d^2/dz dzbar |z|^2 = 1"""
        x, y = _vars([1.1, 0.2], 3)
        f = x * x + y * y
        assert dzbar(dz(f, 0), 0).value == pytest.approx(1.0)
