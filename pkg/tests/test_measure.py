import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from birkhoff_girsanov.banach import Space
from birkhoff_girsanov.measure import (DiscreteMeasureSpace, Partition, TaggedPartition,
                                       VectorMeasure, is_finer, measure_of, partition_from_json,
                                       partition_to_json, refine)


def cells(p):
    return sorted(sorted(c) for c in p.as_lists())


def test_discrete_space_flags():
    assert DiscreteMeasureSpace.uniform(4).is_probability
    assert not DiscreteMeasureSpace(np.array([0.5, 0.2])).is_probability
    with pytest.raises(ValueError):
        DiscreteMeasureSpace(np.array([0.5, -0.1]))
    with pytest.raises(ValueError):
        DiscreteMeasureSpace(np.array([]))


def test_partition_validation():
    with pytest.raises(ValueError):
        Partition.from_cells([[0, 1], [1, 2]], 3)
    with pytest.raises(ValueError):
        Partition.from_cells([[0, 1]], 3)


def test_refine_examples():
    p = Partition.from_cells([[0, 1], [2, 3]])
    q = Partition.from_cells([[0, 2], [1, 3]])
    assert cells(refine(p, q)) == [[0], [1], [2], [3]]
    assert refine(p, p) == p
    assert refine(Partition.trivial(4), q) == q


def test_is_finer_examples():
    p = Partition.from_cells([[0, 1], [2]])
    assert is_finer(Partition.atoms(3), p)
    assert is_finer(p, p)
    assert not is_finer(p, Partition.atoms(3))


def test_refine_space_mismatch():
    with pytest.raises(ValueError):
        refine(Partition.trivial(3), Partition.trivial(4))


def test_canonical_cell_order():
    p = Partition.from_labels([5, 5, 2, 9, 2])
    assert p.as_lists() == [[0, 1], [2, 4], [3]]


def test_tagged_partition_membership(rng):
    p = Partition.from_cells([[0, 3], [1, 2]])
    with pytest.raises(ValueError):
        TaggedPartition(p, np.array([1, 2]))
    t = TaggedPartition.random(p, rng)
    assert t.tags[0] in (0, 3) and t.tags[1] in (1, 2)


def test_measure_examples():
    w = np.array([0.1, 0.2, 0.3, 0.4])
    N = VectorMeasure.from_density(DiscreteMeasureSpace(w), Space.finite(4), np.eye(4))
    np.testing.assert_allclose(measure_of(N, np.arange(4)).coords, w, rtol=1e-15)
    assert measure_of(N, []) == Space.finite(4).zero()
    a, b = [0, 2], [1]
    np.testing.assert_allclose(N([0, 1, 2]).coords, (N(a) + N(b)).coords, atol=1e-15)


def test_one_hot_matches_dense(rng):
    n, d = 40, 5
    slots = rng.integers(d, size=n)
    sw = rng.random(n)
    space = DiscreteMeasureSpace.uniform(n)
    oh = VectorMeasure.one_hot(space, Space.samples(d), slots, sw)
    dense = VectorMeasure.tabulated(space, Space.samples(d), oh.increments)
    labels = rng.integers(3, size=n)
    phi = rng.normal(size=n)
    np.testing.assert_allclose(oh.cell_sums(labels, 3, phi), dense.cell_sums(labels, 3, phi),
                               atol=1e-14)
    np.testing.assert_allclose(oh.integrate(phi).coords, dense.integrate(phi).coords, atol=1e-14)
    np.testing.assert_allclose(oh.atom_norms(), dense.atom_norms(), rtol=1e-14)


def test_partition_json_roundtrip():
    p = Partition.from_cells([[2, 0], [1, 3]])
    text = json.dumps(partition_to_json(p))
    assert partition_from_json(json.loads(text)) == p


@st.composite
def measures(draw):
    n = draw(st.integers(1, 40))
    seed = draw(st.integers(0, 2**32 - 1))
    r = np.random.default_rng(seed)
    w = r.random(n)
    w[r.random(n) < 0.2] = 0.0
    space = DiscreteMeasureSpace(w)
    target = [Space.real(), Space.finite(3), Space.grid_functions([0.0, 1.0]),
              Space.samples(4)][draw(st.integers(0, 3))]
    if draw(st.booleans()):
        N = VectorMeasure.from_density(space, target, r.normal(size=(n, target.dim)))
    else:
        N = VectorMeasure.tabulated(space, target, r.normal(size=(n, target.dim)))
    return N, r


@settings(max_examples=100, deadline=None)
@given(measures())
def test_additivity(Nr):
    N, r = Nr
    n = N.atom_count
    lab = r.integers(3, size=n)
    A, B = np.flatnonzero(lab == 0), np.flatnonzero(lab == 1)
    gap = N(np.union1d(A, B)) - N(A) - N(B)
    assert gap.norm() <= 1e-12


@settings(max_examples=100, deadline=None)
@given(measures())
def test_refinement_stability(Nr):
    N, r = Nr
    p = Partition.from_labels(r.integers(1 + r.integers(5), size=N.atom_count))
    total = N.target.zero()
    for c in p.cells:
        total = total + N(c)
    assert (total - N(np.arange(N.atom_count))).norm() <= 1e-12
