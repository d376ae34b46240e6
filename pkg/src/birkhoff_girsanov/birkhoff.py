"""First- and second-type Birkhoff integrals on finite atom spaces.

On a finite space both integrals equal plain atom sums.  What the routines
here add is the *certificate*: a partition together with an oscillation bound
``eps`` such that every tagged Riemann sum over that partition (or any finer
one) lies within ``eps`` of the value.  Partitions are grown greedily from
the trivial one by splitting the cell that contributes most to the bound.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .banach import BanachValue, Space, as_rows
from .measure import (DiscreteMeasureSpace, Partition, TaggedPartition, VectorMeasure,
                      is_finer)


class BinRangeError(ValueError):
    """A value falls outside the supplied bin edges."""


@dataclass
class BirkhoffResult:
    """Value of a Birkhoff integral with its tag-robustness certificate.

    ``kind`` is ``"bi1"`` (vector function against scalar weights) or
    ``"bi2"`` (scalar function against a vector measure).  ``trace`` records
    the oscillation bound after every split, starting from the trivial
    partition.
    """

    value: BanachValue
    oscillation: float
    partition_used: Partition
    kind: str
    trace: list = field(default_factory=list, repr=False)
    # tagged-sum ingredients: per-atom function values and per-cell masses
    _tag_values: np.ndarray = field(default=None, repr=False)
    _cell_mass: np.ndarray = field(default=None, repr=False)

    def tagged_sum(self, tags: TaggedPartition | Sequence[int]) -> BanachValue:
        """Riemann sum over ``partition_used`` with the given tag atoms."""
        if isinstance(tags, TaggedPartition):
            if tags.partition != self.partition_used:
                raise ValueError("tags belong to a different partition")
            tags = tags.tags
        else:
            tags = TaggedPartition(self.partition_used, tags).tags
        space = self.value.space
        if self.kind == "bi1":
            coords = self._cell_mass @ self._tag_values[tags]
        else:
            coords = self._tag_values[tags] @ self._cell_mass
        return BanachValue(space, coords)

    def max_tag_deviation(self, rng: np.random.Generator, draws: int = 100) -> float:
        """Largest ``||tagged sum - value||`` over ``draws`` random tag choices."""
        p = self.partition_used
        order = np.argsort(p.labels, kind="stable")
        counts = np.bincount(p.labels, minlength=p.cell_count)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        pick = (rng.random((draws, p.cell_count)) * counts).astype(np.int64)
        tags = order[starts + pick]
        if self.kind == "bi1":
            sums = np.einsum("c,dcj->dj", self._cell_mass, self._tag_values[tags])
        else:
            sums = self._tag_values[tags] @ self._cell_mass
        space = self.value.space
        return float(space.norms(sums - self.value.coords).max())

    def certificate_holds(self, rng: np.random.Generator, draws: int = 100,
                          rtol: float = 1e-12) -> bool:
        """Random tag draws stay within the oscillation bound.

        ``rtol * (1 + ||value||)`` absorbs rounding: tagged sums and the value
        are reduced in different orders, which matters when the bound is 0.
        """
        slack = rtol * (1.0 + self.value.norm())
        return self.max_tag_deviation(rng, draws) <= self.oscillation + slack

    def trace_is_monotone(self, slack: float = 1e-12) -> bool:
        tr = np.asarray(self.trace)
        return bool(np.all(np.diff(tr) <= slack * (1.0 + np.abs(tr[:-1]))))


def _cell_mass(weights: np.ndarray, p: Partition) -> np.ndarray:
    return np.bincount(p.labels, weights=weights, minlength=p.cell_count)


def oscillation_bound(values, weights, partition: Partition, space: Space | None = None) -> float:
    """``sum over cells of diam(values on cell) * weight(cell)``.

    Nonincreasing under refinement.  ``values`` is (n, dim) coordinates in
    ``space`` (scalar arrays are read as real-valued).
    """
    space = space or Space.real()
    v = as_rows(space, values)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if v.shape[0] != w.shape[0] or w.shape[0] != partition.atom_count:
        raise ValueError("values, weights and partition disagree on the atom count")
    mass = _cell_mass(w, partition)
    total = []
    for k, members in enumerate(partition.cells):
        if mass[k] == 0.0 or members.size < 2:
            continue
        total.append(kernels.cell_diameter(v, members, space.norm_code) * mass[k])
    return math.fsum(total)


def _split_scalar(v: np.ndarray, members: np.ndarray):
    x = v[members, 0]
    med = np.median(x)
    left = x <= med
    if left.all():
        left = x < x.max()
    return members[left], members[~left]


def _split_vector(v: np.ndarray, members: np.ndarray, space: Space):
    sub = v[members]
    centre = sub.mean(axis=0)
    a = int(np.argmax(space.norms(sub - centre)))
    da = space.norms(sub - sub[a])
    b = int(np.argmax(da))
    db = space.norms(sub - sub[b])
    to_b = db < da
    return members[~to_b], members[to_b]


def _greedy_partition(v: np.ndarray, w: np.ndarray, space: Space, tol: float,
                      max_cells: int | None = None):
    """Split the worst cell until the oscillation bound drops to ``tol``."""
    n = v.shape[0]
    code = space.norm_code
    scalar = v.shape[1] == 1

    def contribution(members):
        mass = float(w[members].sum())
        if mass == 0.0 or members.size < 2:
            return 0.0
        return kernels.cell_diameter(v, members, code) * mass

    cells = {0: np.arange(n, dtype=np.int64)}
    contrib = {0: contribution(cells[0])}
    heap = [(-contrib[0], 0)]
    next_id = 1
    trace = [contrib[0]]
    total = contrib[0]
    while total > tol and heap:
        if max_cells is not None and len(cells) >= max_cells:
            break
        negc, cid = heapq.heappop(heap)
        if -negc == 0.0:
            break
        members = cells.pop(cid)
        del contrib[cid]
        parts = _split_scalar(v, members) if scalar else _split_vector(v, members, space)
        for part in parts:
            cells[next_id] = part
            contrib[next_id] = contribution(part)
            if contrib[next_id] > 0.0:
                heapq.heappush(heap, (-contrib[next_id], next_id))
            next_id += 1
        total = math.fsum(contrib.values())
        trace.append(total)
    labels = np.empty(n, dtype=np.int64)
    for cid, members in cells.items():
        labels[members] = cid
    return Partition(labels), total, trace


def _check_tol(tol: float):
    if not tol > 0:
        raise ValueError(f"tolerance must be positive, got {tol}")


def _exact_sum(rows: np.ndarray, p: Partition) -> np.ndarray:
    """Atom sum reduced cell by cell in canonical cell order."""
    _, sums, _ = kernels.group_moments(p.labels, np.ones(p.atom_count),
                                       np.ascontiguousarray(rows), p.cell_count)
    out = np.zeros(rows.shape[1])
    for row in sums:
        out += row
    return out


def bi1_integrate(integrand, weights, tol: float, space: Space | None = None) -> BirkhoffResult:
    """First-type integral of an X-valued function against scalar weights.

    ``integrand`` is a sequence of :class:`BanachValue` or an (n, dim)
    coordinate array in ``space``.
    """
    _check_tol(tol)
    space, v = _coerce_integrand(integrand, space)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape[0] != v.shape[0]:
        raise ValueError("one weight per atom is required")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    part, osc, trace = _greedy_partition(v, w, space, tol)
    value = BanachValue(space, _exact_sum(v * w[:, None], part))
    return BirkhoffResult(value, osc, part, "bi1", trace, v, _cell_mass(w, part))


def bi2_integrate(phi, N: VectorMeasure, tol: float) -> BirkhoffResult:
    """Second-type integral of a scalar function against a vector measure.

    The spread of a cell is ``diam(phi on cell) * sum ||increment||`` over the
    cell, which bounds ``||phi(tag) N(cell) - sum phi increment||``.
    """
    _check_tol(tol)
    f = np.asarray(phi, dtype=float).reshape(-1)
    if f.shape[0] != N.atom_count:
        raise ValueError("phi needs one value per atom")
    scale = N.atom_norms()
    part, osc, trace = _greedy_partition(f[:, None], scale, Space.real(), tol)
    sums = N.cell_sums(part.labels, part.cell_count, f)
    coords = np.zeros(N.target.dim)
    for row in sums:
        coords += row
    cell_vals = N.cell_sums(part.labels, part.cell_count)
    return BirkhoffResult(BanachValue(N.target, coords), osc, part, "bi2", trace, f, cell_vals)


def _coerce_integrand(integrand, space):
    if isinstance(integrand, np.ndarray) or space is not None:
        space = space or Space.real()
        return space, as_rows(space, integrand)
    items = list(integrand)
    if not items or not isinstance(items[0], BanachValue):
        return Space.real(), as_rows(Space.real(), np.asarray(items, dtype=float))
    space = items[0].space
    return space, as_rows(space, np.stack([x.coords for x in items if x.space == space]))


def quantile_edges(values, bins: int = 64) -> np.ndarray:
    """Sorted distinct quantile edges spanning the range of ``values``."""
    x = np.asarray(values, dtype=float).reshape(-1)
    edges = np.unique(np.quantile(x, np.linspace(0.0, 1.0, bins + 1)))
    if edges.size == 1:
        edges = np.array([edges[0], edges[0] + 1.0])
    return edges


def bin_index(values, edges) -> np.ndarray:
    """Bin of each value for half-open bins ``[e_i, e_{i+1})``, last bin closed."""
    x = np.asarray(values, dtype=float).reshape(-1)
    e = np.asarray(edges, dtype=float)
    if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
        raise ValueError("bin edges must be strictly increasing with at least two entries")
    idx = np.searchsorted(e, x, side="right") - 1
    idx[x == e[-1]] = e.size - 2
    bad = (idx < 0) | (idx > e.size - 2) | np.isnan(x)
    if bad.any():
        raise BinRangeError(
            f"{int(bad.sum())} value(s) outside [{e[0]:g}, {e[-1]:g}], e.g. {x[bad][0]:g}")
    return idx.astype(np.int64)


def induced_measure(N: VectorMeasure, phi, bins) -> VectorMeasure:
    """Image measure ``B -> N(phi^{-1}(B))`` on the bin atoms.

    The returned measure lives on one atom per bin, with unit (counting)
    weights; bin ``b`` carries ``N(phi in bin b)``.
    """
    edges = np.asarray(bins, dtype=float)
    idx = bin_index(phi, edges)
    nb = edges.size - 1
    sums = N.cell_sums(idx, nb)
    return VectorMeasure.tabulated(DiscreteMeasureSpace(np.ones(nb)), N.target, sums)


@dataclass
class IdentityReport:
    """Two sides of an integral identity and the distance between them."""

    lhs: BanachValue
    rhs: BanachValue
    gap: float
    oscillation: float
    cells: list = field(default_factory=list, repr=False)
    extra: dict = field(default_factory=dict)
    results: tuple = field(default=(), repr=False)

    @property
    def relative_gap(self) -> float:
        return self.gap / (1.0 + self.lhs.norm())

    def passed(self, rtol: float = 1e-12) -> bool:
        return self.relative_gap <= rtol

    def to_json(self) -> dict:
        return {
            "lhs_coords": self.lhs.coords.tolist(),
            "rhs_coords": self.rhs.coords.tolist(),
            "gap": self.gap,
            "oscillation": self.oscillation,
            "cells": self.cells,
            **self.extra,
        }


def check_duality(phi, Phi, weights, tol: float, space: Space | None = None) -> IdentityReport:
    """Compare ``Bi1 int phi*Phi dnu`` with ``Bi2 int phi dN`` where
    ``N(A) = Bi1 int_A Phi dnu``."""
    space, v = _coerce_integrand(Phi, space)
    f = np.asarray(phi, dtype=float).reshape(-1)
    w = np.asarray(weights, dtype=float).reshape(-1)
    N = VectorMeasure.from_density(DiscreteMeasureSpace(w), space, v)
    left = bi1_integrate(f[:, None] * v, w, tol, space)
    right = bi2_integrate(f, N, tol)
    return IdentityReport(left.value, right.value, (left.value - right.value).norm(),
                          max(left.oscillation, right.oscillation),
                          left.partition_used.as_lists(), {}, (left, right))


def check_substitution(psi: Callable[[np.ndarray], np.ndarray], phi, N: VectorMeasure,
                       bins=None, tol: float = 1e-9) -> IdentityReport:
    """Compare ``Bi2 int psi(phi) dN`` with ``Bi2 int psi dN_phi``.

    Each bin is represented by the phi value it contains.  When a bin holds
    several distinct values their mean stands in, and the report's
    ``binning_modulus`` bounds the resulting error.
    """
    f = np.asarray(phi, dtype=float).reshape(-1)
    edges = quantile_edges(f) if bins is None else np.asarray(bins, dtype=float)
    idx = bin_index(f, edges)
    nb = edges.size - 1
    image = induced_measure(N, f, edges)
    reps = 0.5 * (edges[:-1] + edges[1:])
    reps = np.where(np.isfinite(reps), reps, np.where(np.isfinite(edges[:-1]), edges[:-1], edges[1:]))
    exact = True
    modulus = 0.0
    atom_scale = N.atom_norms()
    for b in range(nb):
        inside = idx == b
        if not inside.any():
            continue
        distinct = np.unique(f[inside])
        reps[b] = distinct.mean() if distinct.size > 1 else distinct[0]
        if distinct.size > 1:
            exact = False
            spread = np.abs(np.asarray(psi(distinct), dtype=float) - float(psi(np.array([reps[b]]))[0]))
            modulus += float(spread.max() * atom_scale[inside].sum())
    left = bi2_integrate(np.asarray(psi(f), dtype=float), N, tol)
    right = bi2_integrate(np.asarray(psi(reps), dtype=float), image, tol)
    return IdentityReport(left.value, right.value, (left.value - right.value).norm(),
                          max(left.oscillation, right.oscillation),
                          left.partition_used.as_lists(),
                          {"exact_binning": exact, "binning_modulus": modulus},
                          (left, right))


def integral_measure(phi, N: VectorMeasure) -> Callable[[np.ndarray], BanachValue]:
    """``A -> Bi2 int_A phi dN`` as a set function."""
    f = np.asarray(phi, dtype=float).reshape(-1)
    return lambda atoms: N.integrate(f, atoms)


def refinement_is_monotone(values, weights, p: Partition, q: Partition,
                           space: Space | None = None, slack: float = 1e-12) -> bool:
    """``oscillation(q) <= oscillation(p)`` whenever ``q`` refines ``p``."""
    if not is_finer(q, p):
        raise ValueError("second partition must refine the first")
    a = oscillation_bound(values, weights, p, space)
    b = oscillation_bound(values, weights, q, space)
    return b <= a + slack * (1.0 + a)
