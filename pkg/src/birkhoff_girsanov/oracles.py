"""Randomized finite instances checked against brute-force atom sums.

The oracles here never touch the grouped kernels: every reference value is
an ``math.fsum`` over atoms, coordinate by coordinate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .banach import Space
from .birkhoff import (BirkhoffResult, bi1_integrate, bi2_integrate, check_duality,
                       check_substitution)
from .conditioning import check_pullout, check_tower, defining_identity_gap
from .measure import DiscreteMeasureSpace, Partition, VectorMeasure, refine


def space_of_kind(i: int, rng: np.random.Generator, max_dim: int = 6) -> Space:
    d = int(rng.integers(1, max_dim + 1))
    return [Space.real(), Space.finite(d),
            Space.grid_functions(np.linspace(0.0, 1.0, d + 1)), Space.samples(d)][i % 4]


def random_weights(rng: np.random.Generator, n: int) -> np.ndarray:
    """Nonnegative weights with a few null atoms."""
    w = rng.random(n)
    w[rng.random(n) < 0.1] = 0.0
    return w / max(w.sum(), 1e-300)


def brute_bi1(rows: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return np.array([math.fsum(rows[:, j] * weights) for j in range(rows.shape[1])])


def brute_bi2(phi: np.ndarray, increments: np.ndarray) -> np.ndarray:
    return np.array([math.fsum(phi * increments[:, j]) for j in range(increments.shape[1])])


def rel_gap(a: np.ndarray, b: np.ndarray, space: Space) -> float:
    return float(space.norms(a - b)[0] / (1.0 + space.norms(b)[0]))


@dataclass
class SuiteResult:
    name: str
    worst: float
    count: int
    results: list[BirkhoffResult] = field(default_factory=list, repr=False)

    def passed(self, tol: float = 1e-12) -> bool:
        return self.worst <= tol


def _tol(rows: np.ndarray, w: np.ndarray) -> float:
    return 1e-3 * (1.0 + float(np.abs(rows).max(initial=0.0)) * float(w.sum()))


def bi_oracle_suite(rng: np.random.Generator, count: int = 200, max_atoms: int = 256) -> SuiteResult:
    """bi1 and bi2 values against atom sums over all four space kinds."""
    worst, kept = 0.0, []
    for i in range(count):
        space = space_of_kind(i, rng)
        n = int(rng.integers(1, max_atoms + 1))
        rows = rng.normal(size=(n, space.dim))
        w = random_weights(rng, n)
        r1 = bi1_integrate(rows, w, _tol(rows, w), space)
        worst = max(worst, rel_gap(r1.value.coords, brute_bi1(rows, w), space))
        phi = rng.normal(size=n)
        inc = rows * w[:, None]
        N = VectorMeasure.tabulated(DiscreteMeasureSpace(w), space, inc)
        r2 = bi2_integrate(phi, N, _tol(inc, np.ones(n)))
        worst = max(worst, rel_gap(r2.value.coords, brute_bi2(phi, inc), space))
        kept += [r1, r2]
    return SuiteResult("bi_oracle", worst, count, kept)


def duality_suite(rng: np.random.Generator, count: int = 100, max_atoms: int = 256) -> SuiteResult:
    worst, kept = 0.0, []
    for i in range(count):
        space = space_of_kind(i, rng)
        n = int(rng.integers(1, max_atoms + 1))
        Phi = rng.normal(size=(n, space.dim))
        phi = rng.normal(size=n)
        w = random_weights(rng, n)
        rep = check_duality(phi, Phi, w, _tol(Phi, w), space)
        worst = max(worst, rep.relative_gap)
        # both sides also match the brute-force sum
        worst = max(worst, rel_gap(rep.lhs.coords, brute_bi1(phi[:, None] * Phi, w), space))
        kept += list(rep.results)
    return SuiteResult("duality", worst, count, kept)


def exact_edges(values: np.ndarray) -> np.ndarray:
    """Edges isolating every distinct value in its own bin."""
    u = np.unique(values)
    mids = 0.5 * (u[1:] + u[:-1])
    return np.concatenate([[u[0] - 1.0], mids, [u[-1] + 1.0]])


def substitution_suite(rng: np.random.Generator, count: int = 100, max_atoms: int = 256,
                       max_values: int = 16) -> SuiteResult:
    psis = [lambda x: x, lambda x: x * x, np.sin, lambda x: np.ones_like(x), np.exp]
    worst, kept = 0.0, []
    for i in range(count):
        space = space_of_kind(i, rng)
        n = int(rng.integers(1, max_atoms + 1))
        levels = rng.normal(size=int(rng.integers(1, max_values + 1)))
        phi = levels[rng.integers(levels.size, size=n)]
        w = random_weights(rng, n)
        inc = rng.normal(size=(n, space.dim)) * w[:, None]
        N = VectorMeasure.tabulated(DiscreteMeasureSpace(w), space, inc)
        psi = psis[i % len(psis)]
        rep = check_substitution(psi, phi, N, exact_edges(phi), _tol(inc, np.ones(n)))
        if not rep.extra["exact_binning"]:
            raise AssertionError("exact edges produced a shared bin")
        worst = max(worst, rep.relative_gap)
        worst = max(worst, rel_gap(rep.lhs.coords, brute_bi2(psi(phi), inc), space))
        kept += list(rep.results)
    return SuiteResult("substitution", worst, count, kept)


def nested_pair(rng: np.random.Generator, n: int) -> tuple[Partition, Partition]:
    """``F`` coarse and ``G`` a refinement of ``F``."""
    F = Partition.from_labels(rng.integers(int(rng.integers(1, 9)), size=n))
    extra = Partition.from_labels(rng.integers(int(rng.integers(1, 5)), size=n))
    return F, refine(F, extra)


def conditioning_suite(rng: np.random.Generator, count: int = 100,
                       max_atoms: int = 256) -> dict[str, float]:
    """Worst gaps of the defining identity, the tower property and pull-out."""
    out = {"defining_identity": 0.0, "tower": 0.0, "pullout": 0.0}
    for i in range(count):
        space = space_of_kind(i, rng)
        n = int(rng.integers(1, max_atoms + 1))
        Phi = rng.normal(size=(n, space.dim))
        w = random_weights(rng, n)
        F, G = nested_pair(rng, n)
        scale = 1.0 + float(np.abs(Phi).max())
        out["defining_identity"] = max(out["defining_identity"],
                                       defining_identity_gap(Phi, w, F, space) / scale)
        out["tower"] = max(out["tower"], check_tower(Phi, w, F, G, space) / scale)
        phi = rng.normal(size=F.cell_count)[F.labels]
        out["pullout"] = max(out["pullout"], check_pullout(Phi, phi, w, F, space)
                             / (scale * (1.0 + float(np.abs(phi).max()))))
    return out


def certificate_suite(results, rng: np.random.Generator, draws: int = 100) -> tuple[int, int]:
    """Counts of results whose tag draws escape the bound, and non-monotone traces."""
    bad_tags = sum(not r.certificate_holds(rng, draws) for r in results)
    bad_trace = sum(not r.trace_is_monotone() for r in results)
    return bad_tags, bad_trace
