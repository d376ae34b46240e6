"""Conditional expectation on partition-generated sigma-algebras, filtrations,
and the cell-wise martingale test.

The martingale test checks, for pairs ``s < t`` of grid indices and every
cell ``E`` of the partition at ``s``, that

    Bi2 int_E x_t dN  ==  Bi2 int_E x_s dN

up to Monte Carlo noise.  Both sides are exact atom sums, so the residual is
``|| sum_{w in E} (x_t - x_s)(w) increment(w) ||``; its tolerance is a
Bonferroni-corrected normal quantile times the estimated standard deviation
of that sum.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Sequence

import numpy as np

from . import kernels
from .banach import Space, as_rows
from .birkhoff import bin_index, quantile_edges
from .measure import DiscreteMeasureSpace, Partition, VectorMeasure, is_finer
from .process import Process

EXACT_FLOOR = 1e-10


class PreconditionError(ValueError):
    """An input violates a stated precondition (e.g. measurability)."""


def sigma_of(phi, bins) -> Partition:
    """Partition into the nonempty preimages ``phi^{-1}(bin)``."""
    return Partition(bin_index(phi, bins))


def _cell_average(rows: np.ndarray, weights: np.ndarray, p: Partition) -> np.ndarray:
    _, sums, _ = kernels.group_moments(p.labels, weights, rows, p.cell_count)
    mass = np.bincount(p.labels, weights=weights, minlength=p.cell_count)
    avg = np.zeros_like(sums)
    pos = mass > 0
    avg[pos] = sums[pos] / mass[pos, None]
    return avg


def conditional_expectation(Phi, weights, F: Partition, space: Space | None = None) -> np.ndarray:
    """``E(Phi | F)`` as an (n, dim) array; zero on null cells."""
    space = space or Space.real()
    rows = as_rows(space, Phi)
    w = np.ascontiguousarray(weights, dtype=float).reshape(-1)
    if rows.shape[0] != F.atom_count or w.shape[0] != F.atom_count:
        raise ValueError("Phi, weights and partition disagree on the atom count")
    return _cell_average(rows, w, F)[F.labels]


def defining_identity_gap(Phi, weights, F: Partition, space: Space | None = None) -> float:
    """Largest ``|| int_E E(Phi|F) dnu - int_E Phi dnu ||`` over cells ``E``."""
    space = space or Space.real()
    rows = as_rows(space, Phi)
    w = np.ascontiguousarray(weights, dtype=float).reshape(-1)
    cond = conditional_expectation(rows, w, F, space)
    _, a, _ = kernels.group_moments(F.labels, w, rows, F.cell_count)
    _, b, _ = kernels.group_moments(F.labels, w, np.ascontiguousarray(cond), F.cell_count)
    return float(space.norms(a - b).max())


def check_tower(Phi, weights, F: Partition, G: Partition, space: Space | None = None) -> float:
    """``max || E(Phi|F) - E(E(Phi|G)|F) ||`` for ``G`` finer than ``F``."""
    if not is_finer(G, F):
        raise PreconditionError("the inner partition G must refine F")
    space = space or Space.real()
    rows = as_rows(space, Phi)
    outer = conditional_expectation(rows, weights, F, space)
    inner = conditional_expectation(conditional_expectation(rows, weights, G, space),
                                    weights, F, space)
    return float(space.norms(outer - inner).max())


def check_pullout(Phi, phi, weights, F: Partition, space: Space | None = None) -> float:
    """``max || E(phi Phi|F) - phi E(Phi|F) ||`` for F-measurable ``phi``."""
    space = space or Space.real()
    rows = as_rows(space, Phi)
    f = np.asarray(phi, dtype=float).reshape(-1)
    lo = np.full(F.cell_count, np.inf)
    hi = np.full(F.cell_count, -np.inf)
    np.minimum.at(lo, F.labels, f)
    np.maximum.at(hi, F.labels, f)
    if np.any(hi > lo):
        raise PreconditionError("phi is not constant on the cells of F")
    left = conditional_expectation(f[:, None] * rows, weights, F, space)
    right = f[:, None] * conditional_expectation(rows, weights, F, space)
    return float(space.norms(left - right).max())


class Filtration:
    """Nested partitions indexed by grid time indices."""

    nested = True

    def __init__(self, time_indices: Sequence[int], partitions: Sequence[Partition]):
        self.time_indices = tuple(int(k) for k in time_indices)
        self.partitions = tuple(partitions)
        if not self.time_indices:
            raise ValueError("a filtration needs at least one time index")
        if len(self.partitions) != len(self.time_indices):
            raise ValueError("one partition per time index")
        if any(b <= a for a, b in zip(self.time_indices, self.time_indices[1:])):
            raise ValueError("time indices must increase")
        for a, b in zip(self.partitions, self.partitions[1:]):
            if not is_finer(b, a):
                raise PreconditionError("filtration partitions must refine over time")
        self._pos = {k: i for i, k in enumerate(self.time_indices)}

    def partition(self, k: int) -> Partition:
        return self.partitions[self._pos[k]]

    def labels(self, k: int) -> np.ndarray:
        return self.partition(k).labels


class BinnedFiltration:
    """Cells of ``sigma(z_k)`` from quantile bins of a Markov process.

    Stands in for the natural filtration: for Markov processes the martingale
    identity restricted to events of ``sigma(z_s)`` is the testable part.  The
    partitions are generally not nested, so ``nested`` is False.
    """

    nested = False

    def __init__(self, process: Process, time_indices: Sequence[int] | None = None,
                 bins: int = 32):
        self.process = process
        if time_indices is None:
            time_indices = range(process.n_times)
        self.time_indices = tuple(int(k) for k in time_indices)
        if not self.time_indices:
            raise ValueError("a filtration needs at least one time index")
        self.bins = int(bins)
        self._dtype = np.int16 if self.bins < 2 ** 15 else np.int64
        self._cache: dict[int, np.ndarray] = {}

    def labels(self, k: int) -> np.ndarray:
        # kept compact so several tests over one filtration bin each time once
        lab = self._cache.get(k)
        if lab is None:
            x = self.process(k)
            lab = bin_index(x, quantile_edges(x, self.bins)).astype(self._dtype)
            self._cache[k] = lab
        return lab.astype(np.int64)

    def partition(self, k: int) -> Partition:
        return Partition(self.labels(k))


@dataclass
class MartingaleReport:
    """Per-(pair, cell) residuals and tolerances of a martingale test."""

    name: str
    s: np.ndarray
    t: np.ndarray
    cell: np.ndarray
    residual: np.ndarray
    tolerance: np.ndarray
    z: float
    confidence: float
    meta: dict = field(default_factory=dict)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        seen = dict.fromkeys(zip(self.s.tolist(), self.t.tolist()))
        return list(seen)

    @property
    def cell_pass(self) -> np.ndarray:
        return self.residual <= self.tolerance

    @property
    def passed(self) -> bool:
        return bool(np.all(self.cell_pass))

    @property
    def worst_residual(self) -> float:
        return float(self.residual.max()) if self.residual.size else 0.0

    @property
    def worst_ratio(self) -> float:
        if not self.residual.size:
            return 0.0
        return float((self.residual / self.tolerance).max())

    @property
    def worst_index(self) -> int:
        return int(np.argmax(self.residual / self.tolerance)) if self.residual.size else -1

    @property
    def failures(self) -> int:
        return int((~self.cell_pass).sum())

    def summary(self) -> dict:
        i = self.worst_index
        return {
            "name": self.name,
            "pass": self.passed,
            "worst_residual": float(self.residual[i]) if i >= 0 else 0.0,
            "tolerance": float(self.tolerance[i]) if i >= 0 else EXACT_FLOOR,
            "max_residual": self.worst_residual,
            "worst_ratio": self.worst_ratio,
            "failing_cells": self.failures,
            "tests": int(self.residual.size),
            "z": self.z,
        }

    def rows(self):
        for s, t, c, r, tol in zip(self.s, self.t, self.cell, self.residual, self.tolerance):
            yield int(s), int(t), int(c), float(r), float(tol), bool(r <= tol)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s", "t", "cell", "residual", "tolerance", "pass"])
            for s, t, c, r, tol, ok in self.rows():
                w.writerow([s, t, c, repr(r), repr(tol), int(ok)])

    @classmethod
    def combine(cls, name: str, reports: Sequence["MartingaleReport"]) -> "MartingaleReport":
        """Stack reports (e.g. one per probe); cells are renumbered per source."""
        if not reports:
            raise ValueError("nothing to combine")
        offset = 0
        cells = []
        for r in reports:
            cells.append(r.cell + offset)
            offset += int(r.cell.max()) + 1 if r.cell.size else 0
        return cls(name,
                   np.concatenate([r.s for r in reports]),
                   np.concatenate([r.t for r in reports]),
                   np.concatenate(cells),
                   np.concatenate([r.residual for r in reports]),
                   np.concatenate([r.tolerance for r in reports]),
                   max(r.z for r in reports), reports[0].confidence,
                   {"parts": [r.name for r in reports]})


PAIR_MODES = ("adjacent", "terminal", "adjacent+terminal")


def pair_schedule(time_indices: Sequence[int], mode: str = "adjacent") -> list[tuple[int, int]]:
    """Time-index pairs ``(s, t)`` checked by :func:`martingale_test`.

    ``adjacent`` pairs consecutive indices; ``terminal`` pairs every index
    with the last one.  Terminal pairs carry most of the power against a
    drift because the drift accumulates over ``t - s`` while the noise only
    grows like its square root.
    """
    if mode not in PAIR_MODES:
        raise ValueError(f"unknown pair mode {mode!r}; choose from {PAIR_MODES}")
    ks = list(time_indices)
    out = []
    if "adjacent" in mode:
        out += list(zip(ks, ks[1:]))
    if "terminal" in mode:
        out += [(s, ks[-1]) for s in ks[:-1]]
    return sorted(set(out))


def _z_quantile(confidence: float, n_tests: int) -> float:
    alpha = (1.0 - confidence) / max(n_tests, 1)
    return NormalDist().inv_cdf(1.0 - alpha / 2.0)


def martingale_test(x: Process, N: VectorMeasure, F, confidence: float = 0.99, *,
                    pairs: str = "adjacent", name: str = "martingale",
                    floor: float = EXACT_FLOOR) -> MartingaleReport:
    """Cell-wise test of ``int_E x_t dN = int_E x_s dN`` for ``E`` in ``F_s``.

    Tolerance per cell is ``z * ||sd||`` where ``sd`` holds, coordinate by
    coordinate, ``sqrt(count * var)`` of the summands
    ``(x_t - x_s)(w) increment(w)`` over the atoms of the cell, and ``z`` is
    the two-sided normal quantile at ``confidence`` with a Bonferroni
    correction over all tested (pair, cell) combinations.  Cells with zero
    total variation are skipped; no tolerance falls below ``floor``.
    """
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    if not F.time_indices:
        raise ValueError("empty filtration")
    plist = pair_schedule(F.time_indices, pairs) if len(F.time_indices) > 1 else []
    target = N.target
    atom_mass = N.atom_norms()
    S, T, C, R, SD = [], [], [], [], []
    by_s: dict[int, list[int]] = {}
    for s, t in plist:
        by_s.setdefault(s, []).append(t)
    last = max(t for ts in by_s.values() for t in ts) if by_s else None
    x_last = None
    for s in sorted(by_s):
        labels = np.ascontiguousarray(F.labels(s), dtype=np.int64)
        n_cells = int(labels.max()) + 1
        live = np.flatnonzero(np.bincount(labels, weights=atom_mass, minlength=n_cells) > 0)
        xs = x(s)
        for t in by_s[s]:
            if t == last:
                if x_last is None:
                    x_last = x(t)
                xt = x_last
            else:
                xt = x(t)
            d = xt - xs
            counts, sums, sq = N.cell_moments(labels, n_cells, d)
            cnt = counts[live].astype(float)
            mean_sq = sums[live] ** 2 / np.maximum(cnt, 1.0)
            var = np.where(cnt > 1, (sq[live] - mean_sq) / np.maximum(cnt - 1.0, 1.0), 0.0)
            sd = np.sqrt(np.clip(cnt * var, 0.0, None))
            S.append(np.full(live.size, s))
            T.append(np.full(live.size, t))
            C.append(live)
            R.append(target.norms(sums[live]) if live.size else np.empty(0))
            SD.append(target.norms(sd) if live.size else np.empty(0))
    cat = (lambda parts, dt: np.concatenate(parts).astype(dt) if parts else np.empty(0, dtype=dt))
    residual = cat(R, float)
    sdn = cat(SD, float)
    z = _z_quantile(confidence, residual.size)
    tolerance = np.maximum(z * sdn, floor)
    return MartingaleReport(name, cat(S, np.int64), cat(T, np.int64), cat(C, np.int64),
                            residual, tolerance, z, confidence, {"pairs": pairs})


def probability(n: int) -> VectorMeasure:
    """Uniform probability on ``n`` atoms as a real-valued vector measure."""
    return VectorMeasure.scalar(DiscreteMeasureSpace.uniform(n))


def martingale_confidence_split(confidence: float, parts: int) -> float:
    """Per-part confidence so that ``parts`` tests hold jointly at ``confidence``."""
    return 1.0 - (1.0 - confidence) / max(parts, 1)


def exact_scale(values) -> float:
    """``1 + max |values|``; reference scale for exact-arithmetic tolerances."""
    v = np.asarray(values, dtype=float)
    return 1.0 + (float(np.abs(v).max()) if v.size else 0.0)


__all__ = [
    "BinnedFiltration", "EXACT_FLOOR", "Filtration", "MartingaleReport", "PAIR_MODES",
    "PreconditionError", "check_pullout", "check_tower", "conditional_expectation",
    "defining_identity_gap", "exact_scale", "martingale_confidence_split", "martingale_test",
    "probability", "pair_schedule", "sigma_of",
]
