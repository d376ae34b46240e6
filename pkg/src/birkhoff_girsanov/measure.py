"""Finite measure spaces, partitions, and Banach-valued measures on them.

Everything lives on atoms ``0 .. n-1``.  A partition is stored as a label
array (atom -> cell id) with cells numbered in order of their smallest atom,
so two partitions with the same cells compare equal regardless of how they
were built.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .banach import BanachValue, Space, SpaceMismatch, as_rows
from . import kernels


@dataclass(frozen=True, eq=False)
class DiscreteMeasureSpace:
    """Atoms with nonnegative weights."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size < 1:
            raise ValueError("a measure space needs at least one atom")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("atom weights must be finite and nonnegative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, n: int) -> "DiscreteMeasureSpace":
        return cls(np.full(n, 1.0 / n))

    @property
    def atom_count(self) -> int:
        return self.weights.shape[0]

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    @property
    def is_probability(self) -> bool:
        return abs(self.total - 1.0) <= 1e-12

    def mass(self, atoms) -> float:
        return float(self.weights[_atom_index(atoms, self.atom_count)].sum())


def _atom_index(atoms, n: int) -> np.ndarray:
    a = np.asarray(atoms)
    if a.dtype == bool:
        if a.shape != (n,):
            raise ValueError("boolean atom mask has the wrong length")
        return np.flatnonzero(a)
    a = np.asarray(a, dtype=np.int64).reshape(-1)
    if a.size and (a.min() < 0 or a.max() >= n):
        raise IndexError("atom index outside the space")
    return a


def _canonical_labels(raw: np.ndarray) -> np.ndarray:
    """Renumber labels so cells are ordered by their smallest atom."""
    _, first, inverse = np.unique(raw, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    return rank[inverse.reshape(-1)]


@dataclass(frozen=True, eq=False)
class Partition:
    """Disjoint nonempty cells covering all atoms."""

    labels: np.ndarray

    def __post_init__(self):
        lab = _canonical_labels(np.asarray(self.labels).reshape(-1))
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        return cls(np.asarray(labels))

    @classmethod
    def from_cells(cls, cells: Iterable[Iterable[int]], n: int | None = None) -> "Partition":
        cells = [np.asarray(sorted(c), dtype=np.int64) for c in cells]
        if any(c.size == 0 for c in cells):
            raise ValueError("partition cells must be nonempty")
        allatoms = np.concatenate(cells) if cells else np.empty(0, dtype=np.int64)
        n = int(allatoms.max()) + 1 if n is None else n
        labels = np.full(n, -1, dtype=np.int64)
        for k, c in enumerate(cells):
            if np.any(labels[c] >= 0):
                raise ValueError("partition cells overlap")
            labels[c] = k
        if np.any(labels < 0):
            raise ValueError("partition cells do not cover every atom")
        return cls(labels)

    @classmethod
    def trivial(cls, n: int) -> "Partition":
        return cls(np.zeros(n, dtype=np.int64))

    @classmethod
    def atoms(cls, n: int) -> "Partition":
        return cls(np.arange(n, dtype=np.int64))

    @property
    def atom_count(self) -> int:
        return self.labels.shape[0]

    @cached_property
    def cell_count(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @cached_property
    def cells(self) -> tuple[np.ndarray, ...]:
        order = np.argsort(self.labels, kind="stable")
        bounds = np.cumsum(np.bincount(self.labels, minlength=self.cell_count))[:-1]
        return tuple(np.split(order, bounds))

    def as_lists(self) -> list[list[int]]:
        return [c.tolist() for c in self.cells]

    def __eq__(self, other) -> bool:
        return isinstance(other, Partition) and np.array_equal(self.labels, other.labels)

    def __hash__(self):
        return hash(self.labels.tobytes())

    def __len__(self) -> int:
        return self.cell_count

    def __repr__(self) -> str:
        if self.atom_count <= 16:
            return f"Partition({self.as_lists()})"
        return f"Partition({self.cell_count} cells over {self.atom_count} atoms)"


def _check_same_space(p: Partition, q: Partition):
    if p.atom_count != q.atom_count:
        raise SpaceMismatch(f"partitions on {p.atom_count} and {q.atom_count} atoms")


def refine(p: Partition, q: Partition) -> Partition:
    """Common refinement: nonempty intersections of a p-cell and a q-cell."""
    _check_same_space(p, q)
    return Partition(p.labels * q.cell_count + q.labels)


def is_finer(p: Partition, q: Partition) -> bool:
    """True iff every cell of ``p`` lies inside some cell of ``q``."""
    _check_same_space(p, q)
    joint = np.unique(p.labels * q.cell_count + q.labels)
    return joint.size == p.cell_count


@dataclass(frozen=True, eq=False)
class TaggedPartition:
    partition: Partition
    tags: np.ndarray

    def __post_init__(self):
        tags = np.asarray(self.tags, dtype=np.int64).reshape(-1)
        if tags.size != self.partition.cell_count:
            raise ValueError("one tag per cell is required")
        if np.any(self.partition.labels[tags] != np.arange(tags.size)):
            raise ValueError("every tag must lie in its own cell")
        object.__setattr__(self, "tags", tags)

    @classmethod
    def random(cls, partition: Partition, rng: np.random.Generator) -> "TaggedPartition":
        tags = [int(c[rng.integers(c.size)]) for c in partition.cells]
        return cls(partition, np.asarray(tags, dtype=np.int64))


class VectorMeasure:
    """A finitely additive X-valued set function on a finite atom space.

    Two realizations share one storage: ``tabulated`` keeps the atom
    increments directly, ``density`` stores a density against the base
    weights and forms ``increment(w) = density(w) * weight(w)``.

    Increments may also be stored in *one-hot* form (``slots`` plus scalar
    ``slot_weights``), meaning ``increment(w) = slot_weights[w] * e_{slots[w]}``.
    This is how conditional measures on product ensembles are kept without
    materializing an atoms-by-slots matrix.
    """

    def __init__(self, space: DiscreteMeasureSpace, target: Space, *,
                 increments=None, density=None, slots=None, slot_weights=None):
        self.space = space
        self.target = target
        self.density = None
        self.slots = None
        self.slot_weights = None
        self._increments = None
        n = space.atom_count
        given = sum(x is not None for x in (increments, density, slots))
        if given != 1:
            raise ValueError("give exactly one of increments, density, slots")
        if density is not None:
            self.realization = "density"
            self.density = as_rows(target, density)
            if self.density.shape[0] != n:
                raise ValueError("density needs one row per atom")
            self._increments = np.ascontiguousarray(self.density * space.weights[:, None])
        elif increments is not None:
            self.realization = "tabulated"
            self._increments = as_rows(target, increments)
            if self._increments.shape[0] != n:
                raise ValueError("increments need one row per atom")
        else:
            self.realization = "tabulated"
            self.slots = np.ascontiguousarray(slots, dtype=np.int64).reshape(-1)
            self.slot_weights = np.ascontiguousarray(slot_weights, dtype=float).reshape(-1)
            if self.slots.shape[0] != n or self.slot_weights.shape[0] != n:
                raise ValueError("one slot and one slot weight per atom")
            if self.slots.min() < 0 or self.slots.max() >= target.dim:
                raise IndexError("slot index outside the target dimension")

    @classmethod
    def tabulated(cls, space, target, increments) -> "VectorMeasure":
        return cls(space, target, increments=increments)

    @classmethod
    def from_density(cls, space, target, density) -> "VectorMeasure":
        return cls(space, target, density=density)

    @classmethod
    def one_hot(cls, space, target, slots, slot_weights) -> "VectorMeasure":
        return cls(space, target, slots=slots, slot_weights=slot_weights)

    @classmethod
    def scalar(cls, space: DiscreteMeasureSpace) -> "VectorMeasure":
        """The base weights viewed as a real-valued vector measure."""
        return cls(space, Space.real(), density=np.ones((space.atom_count, 1)))

    @property
    def atom_count(self) -> int:
        return self.space.atom_count

    @property
    def is_one_hot(self) -> bool:
        return self.slots is not None

    @property
    def increments(self) -> np.ndarray:
        """Dense (n, dim) increments; materialized on demand for one-hot storage."""
        if self._increments is None:
            dense = np.zeros((self.atom_count, self.target.dim))
            dense[np.arange(self.atom_count), self.slots] = self.slot_weights
            return dense
        return self._increments

    def atom_norms(self) -> np.ndarray:
        """``||increment(w)||`` for every atom."""
        if self.is_one_hot:
            return np.abs(self.slot_weights) * _unit_norm(self.target)
        return self.target.norms(self._increments)

    def integrate(self, phi=None, atoms=None) -> BanachValue:
        """Exact sum ``sum_{w in atoms} phi(w) increment(w)``."""
        n = self.atom_count
        idx = np.arange(n) if atoms is None else _atom_index(atoms, n)
        f = np.ones(idx.size) if phi is None else np.asarray(phi, dtype=float).reshape(-1)[idx]
        if self.is_one_hot:
            coords = np.bincount(self.slots[idx], weights=f * self.slot_weights[idx],
                                 minlength=self.target.dim)
        else:
            coords = f @ self._increments[idx]
        return BanachValue(self.target, coords)

    def cell_sums(self, labels: np.ndarray, n_cells: int, phi=None) -> np.ndarray:
        """``(n_cells, dim)`` array of ``sum_{w in cell} phi(w) increment(w)``."""
        counts, sums, _ = self.cell_moments(labels, n_cells, phi)
        return sums

    def cell_moments(self, labels: np.ndarray, n_cells: int, phi=None):
        """Per cell and coordinate: atom count, sum and sum of squares of the
        summands ``phi(w) * increment(w)`` over atoms carrying that coordinate.

        For dense increments every atom of a cell counts toward every
        coordinate; for one-hot storage only atoms in the matching slot do,
        so counts come back with shape ``(n_cells, dim)``.
        """
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        f = (np.ones(self.atom_count) if phi is None
             else np.ascontiguousarray(phi, dtype=float).reshape(-1))
        d = self.target.dim
        if self.is_one_hot:
            key = labels * d + self.slots
            counts, sums, sq = kernels.group_moments(
                key, f * self.slot_weights, np.ones((self.atom_count, 1)), n_cells * d)
            return counts.reshape(n_cells, d), sums.reshape(n_cells, d), sq.reshape(n_cells, d)
        counts, sums, sq = kernels.group_moments(labels, f, self._increments, n_cells)
        return np.repeat(counts[:, None], d, axis=1), sums, sq

    def scaled(self, y) -> "VectorMeasure":
        """Tabulated measure with ``increment(w) = y(w) increment(w)``."""
        y = np.asarray(y, dtype=float).reshape(-1)
        if self.is_one_hot:
            return VectorMeasure.one_hot(self.space, self.target, self.slots, y * self.slot_weights)
        return VectorMeasure.tabulated(self.space, self.target, y[:, None] * self._increments)

    def __call__(self, atoms) -> BanachValue:
        return measure_of(self, atoms)

    def __repr__(self) -> str:
        return (f"VectorMeasure({self.realization}, {self.atom_count} atoms -> "
                f"{self.target.describe()})")


def _unit_norm(target: Space) -> float:
    """Norm of a standard basis vector of the target."""
    e = np.zeros((1, target.dim))
    e[0, 0] = 1.0
    return float(target.norms(e)[0])


def measure_of(N: VectorMeasure, atoms) -> BanachValue:
    """``N(A)`` for an atom set given as indices or a boolean mask."""
    return N.integrate(atoms=atoms)


def partition_values(N: VectorMeasure, p: Partition) -> list[BanachValue]:
    """``N(cell)`` for each cell of ``p`` in canonical order."""
    sums = N.cell_sums(p.labels, p.cell_count)
    return [BanachValue(N.target, row) for row in sums]


def partition_to_json(p: Partition) -> list[list[int]]:
    return p.as_lists()


def partition_from_json(cells: Sequence[Sequence[int]], n: int | None = None) -> Partition:
    return Partition.from_cells(cells, n)
