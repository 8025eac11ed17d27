from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fhdgm.errors import DegeneracyError, DomainError, UnitError
from fhdgm.ingest import Coordinate
from fhdgm.spatial import (
    SpatialParams, basis_major_to_site_major, distance, distance_matrix, exp_correlation,
    full_innovation_covariance, innovation_covariance,
)


def _slc_deg(a, b):
    """Spherical law of cosines, independent of the haversine form."""
    la1, lo1, la2, lo2 = np.radians([a[0], a[1], b[0], b[1]])
    c = np.sin(la1) * np.sin(la2) + np.cos(la1) * np.cos(la2) * np.cos(lo2 - lo1)
    return float(np.degrees(np.arccos(np.clip(c, -1, 1))))


def test_distances():
    assert distance(Coordinate(0, 0), Coordinate(0, 90)) == pytest.approx(90, abs=1e-12)
    assert distance(Coordinate(90, 0), Coordinate(-90, 0)) == pytest.approx(180, abs=1e-12)
    assert distance(Coordinate(0, 0, "km"), Coordinate(3, 4, "km")) == 5.0
    d = distance(Coordinate(40, 116), Coordinate(39.4, 115.4))
    assert abs(d - _slc_deg((40, 116), (39.4, 115.4))) <= 1e-9


def test_unit_mismatch():
    with pytest.raises(UnitError):
        distance(Coordinate(0, 0, "km"), Coordinate(0, 0, "deg"))


def test_exp_correlation():
    assert exp_correlation(0.0, 2.0) == 1.0
    assert exp_correlation(2.0, 2.0) == pytest.approx(0.367879, abs=1e-6)
    assert exp_correlation(6.0, 2.0) == pytest.approx(0.049787, abs=1e-6)


def test_innovation_covariance_small():
    sp = SpatialParams([3.0, 4.0], [1.0, 2.0])
    out = innovation_covariance(np.zeros((1, 1)), sp)
    assert [m.tolist() for m in out] == [[[3.0]], [[4.0]]]
    D = np.array([[0.0, 2.0], [2.0, 0.0]])
    out = innovation_covariance(D, SpatialParams([10.0], [2.0]))
    np.testing.assert_allclose(out[0], [[10, 10 * np.exp(-1)], [10 * np.exp(-1), 10]])


def test_positive_definite_random_sites():
    rng = np.random.default_rng(4)
    xy = rng.uniform(0, 10, (4, 2))
    for m in innovation_covariance(distance_matrix(xy, "km"), SpatialParams([1.0, 2.5], [0.5, 7.0])):
        # scipy's symmetric eigensolver as an independent check
        from scipy.linalg import eigh
        assert eigh(m, eigvals_only=True).min() > 0


def test_degenerate_sites():
    with pytest.raises(DegeneracyError):
        innovation_covariance(distance_matrix(np.array([[0, 0], [0, 0.0]]), "km"), SpatialParams([1.0], [1.0]))


def test_param_validation():
    with pytest.raises(DomainError):
        SpatialParams([0.0], [1.0])
    with pytest.raises(DomainError):
        SpatialParams([1.0], [-1.0])


def test_full_covariance_layout():
    D = distance_matrix(np.array([[0, 0], [1, 0], [0, 2.0]]), "km")
    sp = SpatialParams([1.0, 2.0], [1.0, 3.0])
    F = full_innovation_covariance(D, sp)
    np.testing.assert_allclose(F[3:, 3:], innovation_covariance(D, sp)[1])
    assert np.all(F[:3, 3:] == 0)
    perm = basis_major_to_site_major(3, 2)
    assert perm.tolist() == [0, 3, 1, 4, 2, 5]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-80, 80), st.floats(-179, 179)), min_size=3, max_size=3))
def test_haversine_metric(pts):
    D = distance_matrix(np.array(pts), "deg")
    assert np.all(D >= 0) and np.all(D <= 180 + 1e-9)
    np.testing.assert_array_equal(D, D.T)
    assert D[0, 2] <= D[0, 1] + D[1, 2] + 1e-9
