from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import BSpline

from fhdgm.basis import BasisSpec, BasisTriple, basis_count, basis_matrix, clamped_knots, eval_basis
from fhdgm.errors import DomainError

HATS = BasisSpec.bspline(2, (50, 487.5, 925))


def test_fourier_values():
    f = BasisSpec.fourier(3, (0, 24))
    np.testing.assert_allclose(eval_basis(f, 0.0), [1, 0, 1], atol=1e-15)
    np.testing.assert_allclose(eval_basis(f, 6.0), [1, 1, 0], atol=1e-15)


def test_linear_hats():
    assert HATS.p == 3
    np.testing.assert_allclose(eval_basis(HATS, 487.5), [0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(eval_basis(HATS, 268.75), [0.5, 0.5, 0], atol=1e-15)
    np.testing.assert_allclose(basis_matrix(HATS, [50, 925]), [[1, 0, 0], [0, 0, 1]], atol=1e-15)


def test_constant_basis():
    np.testing.assert_array_equal(basis_matrix(BasisSpec.constant((0, 1)), [0, 0.2, 0.5, 1]), np.ones((4, 1)))


def test_cubic_partition_of_unity_and_scipy_oracle():
    spec = BasisSpec.bspline_equal(4, 5, (50, 925))
    assert spec.p == 7
    h = np.linspace(50, 925, 301)
    B = basis_matrix(spec, h)
    np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)
    ref = BSpline.design_matrix(h, clamped_knots(spec), 3).toarray()
    np.testing.assert_allclose(B, ref, atol=1e-12)


def test_counts():
    assert basis_count(BasisSpec.bspline_equal(2, 5, (0, 1))) == 5
    assert basis_count(BasisSpec.fourier(7, (0, 24))) == 7
    with pytest.raises(DomainError, match="odd"):
        BasisSpec.fourier(4, (0, 24))


def test_out_of_range_and_bad_knots():
    with pytest.raises(DomainError):
        basis_matrix(HATS, [49.0])
    with pytest.raises(DomainError):
        BasisSpec.bspline(2, (0, 2, 1))
    with pytest.raises(DomainError):
        BasisSpec.fourier(3, (1, 1))


def test_triple_constructors():
    bt = BasisTriple.bspline((0, 1), 2, p_z=3, p_beta=1, p_sigma=2)
    assert (bt.z.p, bt.beta.p, bt.sigma.p) == (3, 1, 2)
    bt = BasisTriple.fourier((0, 24), 5, 5, 7)
    assert (bt.z.p, bt.beta.p, bt.sigma.p) == (5, 5, 7)


@settings(max_examples=50, deadline=None)
@given(order=st.integers(1, 5), n_knots=st.integers(2, 8),
       h=st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_bspline_nonnegative_partition_of_unity(order, n_knots, h):
    B = basis_matrix(BasisSpec.bspline_equal(order, n_knots, (0.0, 1.0)), h)
    assert np.all(B >= -1e-14)
    np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(k=st.integers(0, 4), h=st.floats(0, 24))
def test_fourier_periodic(k, h):
    spec = BasisSpec.fourier(2 * k + 1, (0, 24))
    np.testing.assert_allclose(eval_basis(spec, 0.0), eval_basis(spec, 24.0), atol=1e-12)
    assert abs(eval_basis(spec, h)[0] - 1.0) == 0.0
