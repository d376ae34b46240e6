"""Change of measure for vector measures: density ratios, the changed measure
``Q = y_T dN``, preservation of marginals and the martingale pipeline.

The worked examples (scalar Brownian motion, the conditional measure on a
product ensemble, and the grid-function valued measure built from the
exponential family ``Phi``) are assembled here from the generic pieces.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from . import rng as rngmod
from .banach import DualFunctional, Space
from .birkhoff import bin_index, quantile_edges
from .conditioning import (BinnedFiltration, MartingaleReport, _z_quantile,
                           martingale_confidence_split, martingale_test)
from .measure import DiscreteMeasureSpace, VectorMeasure
from .process import Process

BLOCK = 4096


class AssumptionViolation(ValueError):
    """A density or factorization hypothesis does not hold on the data."""


class EstimationError(RuntimeError):
    """No histogram bin survived the minimum-count filter."""


# --------------------------------------------------------------------------
# Paths

def uniform_grid(K: int, T: float = 1.0) -> np.ndarray:
    if K < 1 or not T > 0:
        raise ValueError("need K >= 1 and T > 0")
    return np.linspace(0.0, float(T), int(K) + 1)


def _check_grid(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float).reshape(-1)
    if g.size < 2 or g[0] != 0.0 or np.any(np.diff(g) <= 0) or not np.all(np.isfinite(g)):
        raise ValueError("grid must start at 0, be strictly increasing and finite")
    return g


@dataclass(frozen=True)
class PathEnsemble:
    """``M`` Brownian paths sampled on ``grid``; ``values[m, k] = w(t_k)``."""

    values: np.ndarray
    grid: np.ndarray
    seed: int

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def K(self) -> int:
        return self.grid.size - 1

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    def process(self) -> Process:
        return Process.from_array(self.values, self.grid)

    def probability(self) -> VectorMeasure:
        return VectorMeasure.scalar(DiscreteMeasureSpace.uniform(self.M))

    def index_of(self, t: float) -> int:
        return time_index(self.grid, t)


def time_index(grid, t: float) -> int:
    """Index of grid time ``t``; off-grid times raise."""
    grid = np.asarray(grid, dtype=float)
    k = int(np.argmin(np.abs(grid - t)))
    if not math.isclose(grid[k], t, rel_tol=1e-12, abs_tol=1e-12):
        raise ValueError(f"time {t!r} is not on the grid")
    return k


def simulate_bm(M: int, grid, seed: int, threads: int | None = None,
                label: str = "bm") -> PathEnsemble:
    """Brownian paths with one random stream per block of ``BLOCK`` paths.

    Stream ``b`` is derived from ``(seed, label, b)``, so the output does not
    depend on ``threads`` or on scheduling.
    """
    if M < 1:
        raise ValueError("need at least one path")
    grid = _check_grid(grid)
    sd = np.sqrt(np.diff(grid))
    out = np.zeros((int(M), grid.size))

    def fill(b: int) -> None:
        lo, hi = b * BLOCK, min((b + 1) * BLOCK, M)
        g = rngmod.stream(seed, label, b)
        inc = g.standard_normal((hi - lo, sd.size)) * sd
        np.cumsum(inc, axis=1, out=out[lo:hi, 1:])

    blocks = range((M + BLOCK - 1) // BLOCK)
    if threads is not None and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(fill, blocks))
    else:
        for b in blocks:
            fill(b)
    return PathEnsemble(out, grid, int(seed))


# --------------------------------------------------------------------------
# Densities

@dataclass
class VectorDensityEstimate:
    """Histogram density: per bin, the vector mass divided by the bin width."""

    edges: np.ndarray
    values: np.ndarray  # (bins, dim)
    counts: np.ndarray  # atoms per bin
    target: Space

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def total(self) -> np.ndarray:
        return (self.values * self.widths[:, None]).sum(axis=0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_left", "bin_right"]
                       + [f"component_{i}" for i in range(self.values.shape[1])])
            for lo, hi, row in zip(self.edges[:-1], self.edges[1:], self.values):
                w.writerow([repr(float(lo)), repr(float(hi))] + [repr(float(v)) for v in row])


def _in_range_labels(samples: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Bin labels with out-of-range samples sent to an overflow label ``bins``."""
    nb = edges.size - 1
    lab = np.full(samples.size, nb, dtype=np.int64)
    inside = (samples >= edges[0]) & (samples <= edges[-1])
    lab[inside] = bin_index(samples[inside], edges)
    return lab


def vector_density(N: VectorMeasure, samples, edges) -> VectorDensityEstimate:
    """Histogram of the image measure ``B -> N(samples in B)`` over ``edges``.

    Samples outside ``[edges[0], edges[-1]]`` are left out, so the estimate
    describes the density on that range.
    """
    samples = np.asarray(samples, dtype=float).reshape(-1)
    edges = np.asarray(edges, dtype=float)
    lab = _in_range_labels(samples, edges)
    nb = edges.size - 1
    sums = N.cell_sums(lab, nb + 1)[:nb]
    counts = np.bincount(lab, minlength=nb + 1)[:nb]
    return VectorDensityEstimate(edges, sums / np.diff(edges)[:, None], counts, N.target)


@dataclass
class DensityRatioEstimate:
    edges: np.ndarray
    g_hat: np.ndarray  # nan on excluded bins
    valid: np.ndarray
    F: VectorDensityEstimate
    F_tilde: VectorDensityEstimate
    probe: DualFunctional

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


def density_ratio_estimate(z, theta_t: float, edges, N: VectorMeasure,
                           probe: DualFunctional | None = None,
                           min_count: int = 50) -> DensityRatioEstimate:
    """Per-bin ``g_t`` from the histograms of ``z_t`` and ``z_t + theta(t)``.

    ``g_hat(bin) = <f, F(bin)> / <f, F_tilde(bin)>`` for the probe ``f``;
    bins with fewer than ``min_count`` samples on either side are excluded.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    probe = N.target.default_probe() if probe is None else probe
    F = vector_density(N, z, edges)
    Ft = vector_density(N, z + theta_t, edges)
    num = probe.apply(F.values)
    den = probe.apply(Ft.values)
    valid = (F.counts >= min_count) & (Ft.counts >= min_count) & (den != 0)
    if not valid.any():
        raise EstimationError(f"no bin holds {min_count} samples on both sides")
    g_hat = np.full(valid.size, np.nan)
    g_hat[valid] = num[valid] / den[valid]
    return DensityRatioEstimate(np.asarray(edges, dtype=float), g_hat, valid, F, Ft, probe)


def ratio_reference(z_tilde, edges, N: VectorMeasure, g_values,
                    probe: DualFunctional | None = None) -> np.ndarray:
    """Bin averages of a closed-form ``g`` weighted by the shifted sample masses.

    The histogram ratio estimates ``int_B g F_tilde / int_B F_tilde``, not
    ``g`` at a point, so this is the matching reference for finite bins.
    """
    probe = N.target.default_probe() if probe is None else probe
    edges = np.asarray(edges, dtype=float)
    lab = _in_range_labels(np.asarray(z_tilde, dtype=float).reshape(-1), edges)
    nb = edges.size - 1
    num = probe.apply(N.cell_sums(lab, nb + 1, g_values)[:nb])
    den = probe.apply(N.cell_sums(lab, nb + 1)[:nb])
    with np.errstate(invalid="ignore", divide="ignore"):
        return num / den


# --------------------------------------------------------------------------
# Change of measure

def change_measure(N: VectorMeasure, y_T) -> VectorMeasure:
    """``Q`` with ``Q(A) = sum_{w in A} y_T(w) N({w})``."""
    y = np.asarray(y_T, dtype=float).reshape(-1)
    if y.size != N.atom_count:
        raise ValueError("y_T needs one value per atom")
    live = N.atom_norms() > 0
    bad = live & ~(np.isfinite(y) & (y > 0))
    if bad.any():
        raise AssumptionViolation(
            f"y_T must be finite and positive on non-null atoms; {int(bad.sum())} atom(s) fail")
    return N.scaled(y)


@dataclass
class GirsanovSetup:
    """Process ``z``, shift ``theta``, density ratio ``g`` and base measure ``N``.

    ``g(k, x)`` evaluates ``g_{t_k}`` atom-wise at ``x``; it may depend on the
    atom (as in the conditional example), which is why it receives arrays.
    """

    z: Process
    theta: Callable[[float], float]
    g: Callable[[int, np.ndarray], np.ndarray]
    N: VectorMeasure

    @cached_property
    def z_tilde(self) -> Process:
        return self.z.shift(self.theta)

    @cached_property
    def y(self) -> Process:
        return self.z_tilde.map(self.g)

    @cached_property
    def y_T(self) -> np.ndarray:
        return self.y(self.z.n_times - 1)

    @cached_property
    def Q(self) -> VectorMeasure:
        return change_measure(self.N, self.y_T)


# --------------------------------------------------------------------------
# Reports

@dataclass
class Stage:
    """One pipeline stage.  ``expect_pass=False`` marks a negative control,
    which succeeds when its test rejects."""

    name: str
    outcome: bool
    expect_pass: bool = True
    report: MartingaleReport | None = None
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.outcome == self.expect_pass

    def summary(self) -> dict:
        out = {"name": self.name, "pass": self.passed,
               "expected": "pass" if self.expect_pass else "reject",
               "outcome": "pass" if self.outcome else "reject"}
        if self.report is not None:
            s = self.report.summary()
            out.update(worst_residual=s["worst_residual"], tolerance=s["tolerance"],
                       worst_ratio=s["worst_ratio"], failing_cells=s["failing_cells"],
                       tests=s["tests"])
        out.update(self.detail)
        return out


@dataclass
class PipelineReport:
    name: str
    stages: list[Stage] = field(default_factory=list)
    densities: dict[str, VectorDensityEstimate] = field(default_factory=dict)

    def add(self, stage: Stage) -> Stage:
        self.stages.append(stage)
        return stage

    def __getitem__(self, name: str) -> Stage:
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.stages)

    @property
    def failed(self) -> list[str]:
        return [s.name for s in self.stages if not s.passed]

    def summary(self) -> list[dict]:
        return [s.summary() for s in self.stages]


def _mstage(name: str, report: MartingaleReport, expect_pass: bool = True) -> Stage:
    return Stage(name, report.passed, expect_pass, report)


# --------------------------------------------------------------------------
# Marginals

@dataclass
class DistributionReport:
    edges: np.ndarray
    residual: np.ndarray
    tolerance: np.ndarray
    t_index: int

    @property
    def distance(self) -> float:
        return float(self.residual.max())

    @property
    def passed(self) -> bool:
        return bool(np.all(self.residual <= self.tolerance))


def check_distribution_preservation(setup: GirsanovSetup, k: int, bins: int | Sequence[float] = 32,
                                    confidence: float = 0.99) -> DistributionReport:
    """Per-bin comparison of ``N(z_t in B)`` with ``Q(z_tilde_t in B)``.

    Each bin difference is a sum of per-atom terms
    ``increment(w) (1{z_t in B} - y_T 1{z_tilde_t in B})``; its tolerance is
    ``z * ||sd||`` with a Bonferroni-corrected normal quantile over bins.
    Outer bins are open so no mass is dropped.
    """
    zk = setup.z(k)
    ztk = setup.z_tilde(k)
    y = setup.y_T
    if np.ndim(bins) == 0:
        edges = quantile_edges(zk, int(bins))
        edges[0], edges[-1] = -np.inf, np.inf
    else:
        edges = np.asarray(bins, dtype=float)
    nb = edges.size - 1
    a = bin_index(zk, edges)
    b = bin_index(ztk, edges)
    N = setup.N
    _, s_a, q_a = N.cell_moments(a, nb)
    _, s_b, q_b = N.cell_moments(b, nb, y)
    same = np.where(a == b, a, nb)
    _, _, q_ab = N.cell_moments(same, nb + 1, np.sqrt(y))
    diff = s_a - s_b
    second = q_a + q_b - 2.0 * q_ab[:nb]
    var = np.clip(second - diff ** 2 / N.atom_count, 0.0, None)
    z = _z_quantile(confidence, nb)
    target = N.target
    return DistributionReport(edges, target.norms(diff), z * target.norms(np.sqrt(var)), int(k))


# --------------------------------------------------------------------------
# Martingale pipeline

def girsanov_verify(setup: GirsanovSetup, F, confidence: float = 0.99, *,
                    pairs: str = "adjacent",
                    report: PipelineReport | None = None) -> PipelineReport:
    """Check ``y`` and ``z_tilde * y`` under ``N``, then ``z_tilde`` under ``Q``.

    The three tests hold jointly at ``confidence``.  A failing precondition
    is reported under its own stage name.
    """
    c = martingale_confidence_split(confidence, 3)
    rep = report if report is not None else PipelineReport("girsanov")
    rep.add(_mstage("y_martingale", martingale_test(
        setup.y, setup.N, F, c, pairs=pairs, name="y_martingale")))
    rep.add(_mstage("ztilde_y_martingale", martingale_test(
        setup.z_tilde * setup.y, setup.N, F, c, pairs=pairs, name="ztilde_y_martingale")))
    rep.add(_mstage("ztilde_under_Q", martingale_test(
        setup.z_tilde, setup.Q, F, c, pairs=pairs, name="ztilde_under_Q")))
    return rep


# --------------------------------------------------------------------------
# Scalar Brownian example

def scalar_g(q: float, times) -> Callable[[int, np.ndarray], np.ndarray]:
    """``g_t(x) = exp(-q x + q^2 t / 2)`` for ``theta(t) = q t``."""
    times = np.asarray(times, dtype=float)
    return lambda k, x: np.exp(-q * x + 0.5 * q * q * times[k])


def scalar_setup(ens: PathEnsemble, q: float) -> GirsanovSetup:
    return GirsanovSetup(ens.process(), lambda t: q * t, scalar_g(q, ens.grid), ens.probability())


def scalar_girsanov(ens: PathEnsemble, q: float, confidence: float = 0.99, bins: int = 32,
                    density_times: Sequence[float] = (0.25, 0.5, 1.0),
                    pairs: str = "adjacent") -> PipelineReport:
    """Scalar pipeline: assumptions, the claim, marginals and a negative control."""
    setup = scalar_setup(ens, q)
    F = BinnedFiltration(setup.z, bins=bins)
    rep = girsanov_verify(setup, F, confidence, pairs=pairs, report=PipelineReport("scalar-girsanov"))
    rep.add(_mstage("negative_ztilde_under_P", martingale_test(
        setup.z_tilde, setup.N, F, confidence, pairs=pairs, name="negative_ztilde_under_P"),
        expect_pass=False))
    ks = [ens.index_of(t) for t in density_times if t <= ens.T + 1e-12]
    cd = martingale_confidence_split(confidence, max(len(ks), 1))
    worst, ok = 0.0, True
    for k in ks:
        d = check_distribution_preservation(setup, k, bins, cd)
        worst = max(worst, float((d.residual / d.tolerance).max()))
        ok &= d.passed
        t = float(ens.grid[k])
        edges = quantile_edges(setup.z(k), 2 * bins)
        rep.densities[f"{t:g}"] = vector_density(setup.N, setup.z(k), edges)
    rep.add(Stage("distribution_preservation", ok, detail={"worst_ratio": worst,
                                                            "times": [float(ens.grid[k]) for k in ks]}))
    return rep


# --------------------------------------------------------------------------
# Conditional measure on a product ensemble

@dataclass
class ProductEnsemble:
    """``slots`` draws of ``w_T`` times ``paths`` independent post-``T`` paths.

    Atom ``j * paths + i`` pairs slot ``j`` with post path ``i``; the process
    ``z_t = w_{T+t}`` is evaluated lazily.
    """

    w_T: np.ndarray
    post: PathEnsemble

    @property
    def slots(self) -> int:
        return self.w_T.size

    @property
    def paths(self) -> int:
        return self.post.M

    @property
    def atom_count(self) -> int:
        return self.slots * self.paths

    @cached_property
    def w_T_atoms(self) -> np.ndarray:
        return np.repeat(self.w_T, self.paths)

    def process(self) -> Process:
        post = self.post.values
        return Process(self.post.grid,
                       lambda k: self.w_T_atoms + np.tile(post[:, k], self.slots))

    def conditional_measure(self) -> VectorMeasure:
        """``A -> P(A | w_T)`` with one sample-function slot per draw of ``w_T``."""
        n = self.atom_count
        base = DiscreteMeasureSpace(np.full(n, 1.0 / n))
        slot = np.repeat(np.arange(self.slots, dtype=np.int64), self.paths)
        return VectorMeasure.one_hot(base, Space.samples(self.slots), slot,
                                     np.full(n, 1.0 / self.paths))


def simulate_product(slots: int, paths: int, grid, seed: int, T_cond: float = 1.0,
                     threads: int | None = None) -> ProductEnsemble:
    w_T = rngmod.stream(seed, "w_T").standard_normal(int(slots)) * math.sqrt(T_cond)
    return ProductEnsemble(w_T, simulate_bm(paths, grid, seed, threads, label="post"))


def conditional_setup(ens: ProductEnsemble, q: float) -> GirsanovSetup:
    times = ens.post.grid
    wT = ens.w_T_atoms
    return GirsanovSetup(ens.process(), lambda t: q * t,
                         lambda k, x: np.exp(0.5 * q * q * times[k] - q * (x - wT)),
                         ens.conditional_measure())


def conditional_example(ens: ProductEnsemble, q: float, confidence: float = 0.99,
                        bins: int = 32, pairs: str = "adjacent") -> PipelineReport:
    setup = conditional_setup(ens, q)
    F = BinnedFiltration(setup.z, bins=bins)
    rep = girsanov_verify(setup, F, confidence, pairs=pairs,
                          report=PipelineReport("conditional-measure"))
    rep.add(_mstage("negative_ztilde_under_N", martingale_test(
        setup.z_tilde, setup.N, F, confidence, pairs=pairs, name="negative_ztilde_under_N"),
        expect_pass=False))
    return rep


# --------------------------------------------------------------------------
# Grid-function valued example

def phi_functional(tau: float, t: float, w_path, grid) -> np.ndarray:
    """``exp(-w_tau - w_t + w_{t^tau} - (t + tau - t^tau)/2)`` for grid times.

    ``w_path`` may be one path or a stack of paths (last axis = time).
    """
    i, k = time_index(grid, tau), time_index(grid, t)
    w = np.asarray(w_path, dtype=float)
    m = min(i, k)
    tm = min(tau, t)
    return np.exp(-w[..., i] - w[..., k] + w[..., m] - 0.5 * (t + tau - tm))


def phi_rows(ens: PathEnsemble, k: int) -> np.ndarray:
    """``Phi(w, t_k)(tau_j)`` for every path and grid time ``tau_j``."""
    w = ens.values
    g = ens.grid
    j = np.arange(g.size)
    m = np.minimum(j, k)
    return np.exp(-w[:, j] - w[:, [k]] + w[:, m] - 0.5 * (g[k] + g[j] - g[m]))


def build_Ncirc(ens: PathEnsemble, k: int | None = None) -> VectorMeasure:
    """``A -> sum_{w in A} Phi(w, t_k) / M`` valued in grid functions of ``tau``."""
    k = ens.K if k is None else int(k)
    return VectorMeasure.from_density(DiscreteMeasureSpace.uniform(ens.M),
                                      Space.grid_functions(ens.grid), phi_rows(ens, k))


def prop41_setup(ens: PathEnsemble, N: VectorMeasure | None = None) -> GirsanovSetup:
    """``z = w``, ``theta(t) = t`` and ``g_t(x) = exp(-t/2 - x)``."""
    times = ens.grid
    N = build_Ncirc(ens) if N is None else N
    return GirsanovSetup(ens.process(), lambda t: t,
                         lambda k, x: np.exp(-0.5 * times[k] - x), N)


def prop41_verify(ens: PathEnsemble, confidence: float = 0.99, bins: int = 32,
                  density_times: Sequence[float] = (0.25, 0.5, 1.0), ratio_bins: int = 4,
                  ratio_rtol: float = 0.05, min_count: int = 50,
                  pairs: str = "adjacent") -> PipelineReport:
    """Density ratio, the three martingale tests, the conditional identity
    ``E(Phi(., T) | F_t) = exp(-w_t - t/2)`` and the negative control."""
    rep = PipelineReport("prop41")
    setup = prop41_setup(ens)
    N = setup.N
    w = setup.z
    worst, ok = 0.0, True
    per_t = []
    for t in density_times:
        k = ens.index_of(t)
        h = 2.0 * math.sqrt(t)
        edges = np.linspace(-h, h, ratio_bins + 1)
        est = density_ratio_estimate(w(k), t, edges, N, min_count=min_count)
        ref = ratio_reference(w(k) + t, edges, N, setup.g(k, w(k) + t))
        v = est.valid
        rel = np.abs(est.g_hat[v] / ref[v] - 1.0)
        e = float(rel.max())
        worst = max(worst, e)
        ok &= e <= ratio_rtol
        per_t.append({"t": t, "max_rel_error": e, "valid_bins": int(v.sum())})
        rep.densities[f"{t:g}"] = vector_density(N, w(k), quantile_edges(w(k), 64))
    rep.add(Stage("density_ratio", ok, detail={"worst_rel_error": worst, "rtol": ratio_rtol,
                                                "per_time": per_t}))
    F = BinnedFiltration(w, bins=bins)
    girsanov_verify(setup, F, confidence, pairs=pairs, report=rep)
    # conditional identity: exp(-w_t - t/2) is the P-martingale closing on Phi(., T)
    times = ens.grid
    e_proc = w.map(lambda k, x: np.exp(-x - 0.5 * times[k]))
    rep.add(_mstage("conditional_identity", martingale_test(
        e_proc, ens.probability(), F, confidence, pairs="terminal", name="conditional_identity")))
    rep.add(_mstage("negative_w_phi_under_P", martingale_test(
        w, N, F, confidence, pairs=pairs, name="negative_w_phi_under_P"), expect_pass=False))
    return rep


__all__ = [
    "AssumptionViolation", "BLOCK", "DensityRatioEstimate", "DistributionReport",
    "EstimationError", "GirsanovSetup", "PathEnsemble", "PipelineReport", "ProductEnsemble",
    "Stage", "VectorDensityEstimate", "build_Ncirc", "change_measure",
    "check_distribution_preservation", "conditional_example", "conditional_setup",
    "density_ratio_estimate", "girsanov_verify", "phi_functional", "phi_rows",
    "prop41_setup", "prop41_verify", "ratio_reference", "scalar_g", "scalar_girsanov",
    "scalar_setup", "simulate_bm", "simulate_product", "time_index", "uniform_grid",
    "vector_density",
]
