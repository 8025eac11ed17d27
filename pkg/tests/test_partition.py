from __future__ import annotations

import numpy as np
import pytest

from fhdgm.errors import DomainError
from fhdgm.estimation import make_layout
from fhdgm.partition import Partitioning, fit_kmeans, from_assignment, objective, partition_dataset
from oracles import exhaustive_two_means


def test_objective_examples():
    assert objective(np.array([[1.0, 2.0]]), [0], np.array([[1.0, 2.0]]), 0.0, "km") == 0.0
    pts = np.array([[0, 0], [1, 0], [10, 0], [11, 0.0]])
    C = np.array([[0.5, 0], [10.5, 0]])
    assert objective(pts, [0, 0, 1, 1], C, 0.0, "km") == pytest.approx(2.0, abs=1e-15)
    assert objective(pts, [0, 0, 1, 1], C, 5000.0, "km") == pytest.approx(2.0, abs=1e-15)
    assert objective(pts, [0, 0, 0, 1], C, 1.0, "km") > 2.0


def test_two_far_pairs():
    pts = np.array([[0, 0], [0, 1], [50, 0], [50, 1.0]])
    part = fit_kmeans(pts, 2, 0.0, trials=3, seed=1, unit="km")
    assert sorted(part.sizes.tolist()) == [2, 2]
    assert part.objective == pytest.approx(2.0, abs=1e-9)
    assert part.objective == pytest.approx(
        objective(pts, part.assignment, part.centroids, 0.0, "km"), abs=1e-12)


def test_balance_beats_geography():
    rng = np.random.default_rng(0)
    pts = np.vstack([rng.normal(0, 0.1, (5, 2)), [[30.0, 30.0]]])
    part = fit_kmeans(pts, 2, 1e6, trials=5, seed=2, unit="km")
    assert part.sizes.tolist() == [3, 3]
    assert part.objective == pytest.approx(exhaustive_two_means(pts, 1e6), rel=1e-7, abs=1e-7)


def test_k_equals_n():
    pts = np.random.default_rng(1).uniform(0, 5, (6, 2))
    part = fit_kmeans(pts, 6, 0.0, seed=0, unit="km")
    assert part.sizes.tolist() == [1] * 6
    assert part.objective == pytest.approx(0.0, abs=1e-12)


def test_bad_arguments():
    pts = np.zeros((3, 2)) + np.arange(3)[:, None]
    with pytest.raises(DomainError):
        fit_kmeans(pts, 4, 0.0, unit="km")
    with pytest.raises(DomainError):
        fit_kmeans(pts, 2, -1.0, unit="km")


def test_sweeps_never_increase():
    pts = np.random.default_rng(5).uniform(0, 10, (40, 2))
    part = fit_kmeans(pts, 4, 3.0, seed=0, unit="km")
    tr = np.array(part.sweep_objectives)
    assert np.all(np.diff(tr) <= 1e-9 * np.maximum(1, np.abs(tr[1:])))


def test_spherical_units():
    pts = np.array([[45.0, 9.0], [45.1, 9.1], [-30.0, 150.0], [-30.2, 150.1]])
    part = fit_kmeans(pts, 2, 0.0, trials=2, seed=0, unit="deg")
    assert part.assignment[0] == part.assignment[1] != part.assignment[2] == part.assignment[3]


def test_partition_dataset():
    ds = make_layout(4, 3, [0.0, 1.0], seed=0)
    single = Partitioning.single(ds.coords(), ds.unit)
    (only,) = partition_dataset(ds, single)
    assert only.n == 4 and len(only.records) == len(ds.records)
    part = from_assignment(ds.coords(), [0, 1, 1, 0], ds.unit)
    subs = partition_dataset(ds, part)
    assert [s.n for s in subs] == [2, 2]
    assert sum(len(s.records) for s in subs) == len(ds.records)
    assert subs[0].origin == (0, 3) and subs[1].origin == (1, 2)


def test_deterministic_for_seed_and_workers():
    pts = np.random.default_rng(3).uniform(0, 10, (30, 2))
    a = fit_kmeans(pts, 3, 1.0, trials=4, seed=11, unit="km")
    b = fit_kmeans(pts, 3, 1.0, trials=4, seed=11, unit="km", workers=3)
    np.testing.assert_array_equal(a.assignment, b.assignment)
    assert a.objective == b.objective
