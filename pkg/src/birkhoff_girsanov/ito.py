"""Stochastic integrals of deterministic vector paths defined by parts.

``(Bi1*) int_a^b Phi dw = Phi(b) w_b - Phi(a) w_a - (Bi1) int_a^b Phi'(r) w_r dr``,
with the time integral taken over the path grid with trapezoidal weights.
The module also carries the checks built on this integral: the weak
characterization through probes, the martingale property, and the change
of a drift term.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .banach import BanachValue, DualFunctional, Space
from .birkhoff import BirkhoffResult, bi1_integrate
from .conditioning import (BinnedFiltration, MartingaleReport, PreconditionError,
                           martingale_confidence_split, martingale_test)
from .girsanov import PathEnsemble, PipelineReport, Stage, change_measure, time_index
from .process import Process

TOL_FD = 1e-6
FACTORIZATION_TOL = 1e-10
PETTIS_TOL = 1e-8


def trapezoid_weights(grid, a: int = 0, b: int | None = None) -> np.ndarray:
    """Trapezoidal weights of the grid points ``a..b`` (inclusive)."""
    g = np.asarray(grid, dtype=float)
    b = g.size - 1 if b is None else b
    w = np.zeros(b - a + 1)
    h = np.diff(g[a:b + 1])
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def cumulative_trapezoid(values, grid) -> np.ndarray:
    """``int_0^{t_k} f ds`` for every grid index; ``values`` is (K+1, ...)."""
    v = np.asarray(values, dtype=float)
    h = np.diff(np.asarray(grid, dtype=float)).reshape((-1,) + (1,) * (v.ndim - 1))
    out = np.zeros_like(v)
    np.cumsum(0.5 * h * (v[1:] + v[:-1]), axis=0, out=out[1:])
    return out


def _as_coords(space: Space, v) -> np.ndarray:
    if isinstance(v, BanachValue):
        return v.coords
    return np.broadcast_to(np.asarray(v, dtype=float), (space.dim,)).astype(float)


@dataclass
class StochasticIntegrand:
    """A deterministic path ``t -> Phi(t)`` in ``space`` with derivative ``Phi'``.

    ``provenance`` is ``"closed-form"`` when ``Phi'`` is supplied and
    ``"finite-difference"`` when it is formed from central differences.
    """

    space: Space
    phi: Callable[[float], object]
    dphi: Callable[[float], object]
    provenance: str = "closed-form"
    h: float | None = None

    @classmethod
    def closed_form(cls, space: Space, phi, dphi) -> "StochasticIntegrand":
        return cls(space, phi, dphi, "closed-form")

    @classmethod
    def finite_difference(cls, space: Space, phi, h: float) -> "StochasticIntegrand":
        if not h > 0:
            raise ValueError("step must be positive")

        def dphi(t):
            up = _as_coords(space, phi(t + h))
            dn = _as_coords(space, phi(t - h))
            return (up - dn) / (2.0 * h)
        return cls(space, phi, dphi, "finite-difference", h)

    @classmethod
    def constant(cls, x0: BanachValue) -> "StochasticIntegrand":
        return cls.closed_form(x0.space, lambda t: x0.coords, lambda t: np.zeros(x0.space.dim))

    @classmethod
    def linear(cls, x0: BanachValue, a: float = 0.0, b: float = 1.0) -> "StochasticIntegrand":
        """``Phi(t) = (a + b t) x0``."""
        c = x0.coords
        return cls.closed_form(x0.space, lambda t: (a + b * t) * c, lambda t: b * c)

    def values(self, grid) -> np.ndarray:
        return np.stack([_as_coords(self.space, self.phi(float(t))) for t in grid])

    def derivatives(self, grid) -> np.ndarray:
        return np.stack([_as_coords(self.space, self.dphi(float(t))) for t in grid])

    def __call__(self, t: float) -> BanachValue:
        return BanachValue(self.space, _as_coords(self.space, self.phi(t)))

    def fd_residual(self, grid) -> float:
        """Max over interior grid points of ``||central difference - Phi'||``."""
        g = np.asarray(grid, dtype=float)
        if g.size < 3:
            return 0.0
        v = self.values(g)
        d = self.derivatives(g[1:-1])
        cd = (v[2:] - v[:-2]) / (g[2:] - g[:-2])[:, None]
        return float(self.space.norms(cd - d).max())

    def duality_residual(self, grid, probes: Sequence[DualFunctional] | None = None) -> float:
        """Max over probes of ``|d/dt <f, Phi(t)> - <f, Phi'(t)>|`` by central differences."""
        g = np.asarray(grid, dtype=float)
        if g.size < 3:
            return 0.0
        probes = self.space.probes() if probes is None else probes
        v = self.values(g)
        d = self.derivatives(g[1:-1])
        worst = 0.0
        for f in probes:
            pv = f.apply(v)
            cd = (pv[2:] - pv[:-2]) / (g[2:] - g[:-2])
            worst = max(worst, float(np.abs(cd - f.apply(d)).max()))
        return worst

    def validate(self, grid, tol: float = TOL_FD) -> None:
        r = self.duality_residual(grid)
        if r > tol:
            raise PreconditionError(
                f"derivative fails the probe check on the grid: residual {r:.3g} > {tol:g}")


def _endpoints(grid, a: float | None, b: float | None) -> tuple[int, int]:
    g = np.asarray(grid, dtype=float)
    ia = 0 if a is None else time_index(g, a)
    ib = g.size - 1 if b is None else time_index(g, b)
    if ia > ib:
        raise ValueError("need a <= b")
    return ia, ib


def bi1star_integral(Phi: StochasticIntegrand, w_path, grid, a: float | None = None,
                     b: float | None = None, tol: float = 1e-9) -> tuple[BanachValue, BirkhoffResult]:
    """By-parts integral over ``[a, b]`` along one path, with its certificate.

    The time integral is a first-type Birkhoff integral over the grid points
    of ``[a, b]`` with trapezoidal weights.
    """
    g = np.asarray(grid, dtype=float)
    w = np.asarray(w_path, dtype=float).reshape(-1)
    if w.size != g.size:
        raise ValueError("path and grid lengths differ")
    ia, ib = _endpoints(g, a, b)
    v = Phi.values(g[[ia, ib]])
    d = Phi.derivatives(g[ia:ib + 1])
    res = bi1_integrate(d * w[ia:ib + 1, None], trapezoid_weights(g, ia, ib), tol, Phi.space)
    coords = v[1] * w[ib] - v[0] * w[ia] - res.value.coords
    return BanachValue(Phi.space, coords), res


def bi1star_paths(Phi: StochasticIntegrand, ens: PathEnsemble, a: float | None = None,
                  b: float | None = None) -> np.ndarray:
    """``(M, dim)`` array of the by-parts integral over ``[a, b]`` for every path."""
    g = ens.grid
    ia, ib = _endpoints(g, a, b)
    v = Phi.values(g[[ia, ib]])
    d = Phi.derivatives(g[ia:ib + 1]) * trapezoid_weights(g, ia, ib)[:, None]
    w = ens.values
    return np.outer(w[:, ib], v[1]) - np.outer(w[:, ia], v[0]) - w[:, ia:ib + 1] @ d


def bi1star_process(Phi: StochasticIntegrand, ens: PathEnsemble) -> np.ndarray:
    """``A[m, k] = (Bi1*) int_0^{t_k} Phi dw`` along path ``m``; shape (M, K+1, dim)."""
    g = ens.grid
    v = Phi.values(g)
    d = np.ascontiguousarray(Phi.derivatives(g))
    w = np.ascontiguousarray(ens.values)
    integral = kernels.cumulative_trapezoid(w, d, np.ascontiguousarray(np.diff(g)))
    return w[:, :, None] * v[None, :, :] - integral


def ito_sum(r, w_paths, grid) -> np.ndarray:
    """Left-endpoint sums ``sum_i r(t_i)(w_{i+1} - w_i)`` for each path."""
    g = np.asarray(grid, dtype=float)
    rv = np.asarray([r(float(t)) for t in g[:-1]])
    return np.diff(np.asarray(w_paths, dtype=float), axis=-1) @ rv


def ito_sum_process(r, w_paths, grid) -> np.ndarray:
    """Running left-endpoint sums; shape (M, K+1) with a zero first column."""
    g = np.asarray(grid, dtype=float)
    w = np.asarray(w_paths, dtype=float)
    rv = np.asarray([r(float(t)) for t in g[:-1]])
    out = np.zeros_like(w)
    np.cumsum(np.diff(w, axis=1) * rv, axis=1, out=out[:, 1:])
    return out


def scalar_by_parts(p_values, p_derivs, w_paths, grid, ia: int = 0, ib: int | None = None) -> np.ndarray:
    """Scalar by-parts integral for each path from a probed path ``<f, Phi>``."""
    g = np.asarray(grid, dtype=float)
    ib = g.size - 1 if ib is None else ib
    w = np.asarray(w_paths, dtype=float)
    tw = trapezoid_weights(g, ia, ib)
    return (p_values[ib] * w[:, ib] - p_values[ia] * w[:, ia]
            - w[:, ia:ib + 1] @ (tw * p_derivs[ia:ib + 1]))


def check_weak_characterization(Phi: StochasticIntegrand, ens: PathEnsemble,
                                probes: Sequence[DualFunctional] | None = None,
                                a: float | None = None, b: float | None = None) -> float:
    """Max over paths and probes of ``|<f, (Bi1*) int Phi dw> - int <f, Phi> dw|``."""
    probes = Phi.space.probes() if probes is None else probes
    ia, ib = _endpoints(ens.grid, a, b)
    vec = bi1star_paths(Phi, ens, a, b)
    v = Phi.values(ens.grid)
    d = Phi.derivatives(ens.grid)
    gap = 0.0
    for f in probes:
        scalar = scalar_by_parts(f.apply(v), f.apply(d), ens.values, ens.grid, ia, ib)
        gap = max(gap, float(np.abs(f.apply(vec) - scalar).max()))
    return gap


def _probed_processes(A: np.ndarray, grid, probes) -> list[tuple[DualFunctional, Process]]:
    return [(f, Process.from_array(f.apply(A), grid)) for f in probes]


def check_integral_martingale(Phi: StochasticIntegrand, ens: PathEnsemble, F=None,
                              confidence: float = 0.99,
                              probes: Sequence[DualFunctional] | None = None,
                              bins: int = 32, pairs: str = "adjacent") -> MartingaleReport:
    """Martingale test of ``<f, A_t>`` under the path probability, per probe."""
    probes = Phi.space.probes() if probes is None else probes
    F = BinnedFiltration(ens.process(), bins=bins) if F is None else F
    P = ens.probability()
    c = martingale_confidence_split(confidence, len(probes))
    A = bi1star_process(Phi, ens)
    reports = [martingale_test(x, P, F, c, pairs=pairs, name=f"A_{f.label()}")
               for f, x in _probed_processes(A, ens.grid, probes)]
    return MartingaleReport.combine("integral_martingale", reports)


# --------------------------------------------------------------------------
# Change of drift

@dataclass
class DriftedProcess:
    """``C_t = int_0^t Psi ds + (Bi1*) int_0^t Phi dw`` with ``Psi = r Phi`` when ``r`` is given."""

    psi: Callable[[float], object]
    integrand: StochasticIntegrand
    r: Callable[[float], float] | None = None

    @property
    def space(self) -> Space:
        return self.integrand.space

    def factorization_residual(self, grid) -> float:
        if self.r is None:
            raise PreconditionError("drift change needs a factorization Psi = r Phi; none was given")
        g = np.asarray(grid, dtype=float)
        psi = np.stack([_as_coords(self.space, self.psi(float(t))) for t in g])
        rphi = np.asarray([self.r(float(t)) for t in g])[:, None] * self.integrand.values(g)
        return float(self.space.norms(psi - rphi).max())

    def drift_path(self, grid) -> np.ndarray:
        g = np.asarray(grid, dtype=float)
        psi = np.stack([_as_coords(self.space, self.psi(float(t))) for t in g])
        return cumulative_trapezoid(psi, g)

    def paths(self, ens: PathEnsemble) -> np.ndarray:
        """``C`` along every path; shape (M, K+1, dim)."""
        return self.drift_path(ens.grid)[None, :, :] + bi1star_process(self.integrand, ens)


def girsanov_density(r, ens: PathEnsemble) -> np.ndarray:
    """``y_t = exp(-int_0^t r dw - 1/2 int_0^t r^2 ds)`` on the grid; (M, K+1).

    The stochastic term uses left-endpoint sums, the time term the trapezoid.
    """
    g = ens.grid
    rv = np.asarray([r(float(t)) for t in g])
    stoch = ito_sum_process(r, ens.values, g)
    return np.exp(-stoch - 0.5 * cumulative_trapezoid(rv * rv, g)[None, :])


def change_drift(p: DriftedProcess, ens: PathEnsemble, confidence: float = 0.99,
                 probes: Sequence[DualFunctional] | None = None, bins: int = 32,
                 pairs: str = "adjacent", negative_control: bool = True) -> PipelineReport:
    """Remove the drift of ``C`` by the exponential density of ``r``.

    Stages: the factorization, ``y`` as a martingale under ``P``, the per-path
    identity ``(Bi1*) int Phi dw_tilde = (Bi1*) int Phi dw + int r Phi ds``
    with ``w_tilde = w + int r ds``, and ``<f, C>`` under ``Q`` for every probe.
    The optional negative control tests ``C`` under ``P``, which must reject
    whenever the drift is nonzero.
    """
    rep = PipelineReport("drift-change")
    fres = p.factorization_residual(ens.grid)
    rep.add(Stage("factorization", fres <= FACTORIZATION_TOL,
                  detail={"residual": fres, "tolerance": FACTORIZATION_TOL}))
    g = ens.grid
    P = ens.probability()
    F = BinnedFiltration(ens.process(), bins=bins)
    probes = p.space.probes() if probes is None else probes
    parts = 1 + (2 if negative_control else 1)
    c = martingale_confidence_split(confidence, parts)

    y = girsanov_density(p.r, ens)
    rep.add(Stage("y_martingale", *_test(Process.from_array(y, g), P, F, c, pairs, "y_martingale")))
    Q = change_measure(P, y[:, -1])

    R = cumulative_trapezoid(np.asarray([p.r(float(t)) for t in g]), g)
    shifted = PathEnsemble(ens.values + R[None, :], g, ens.seed)
    lhs = bi1star_process(p.integrand, shifted)
    rhs = bi1star_process(p.integrand, ens) + p.drift_path(g)[None, :, :]
    gap = float(p.space.norms((lhs - rhs).reshape(-1, p.space.dim)).max())
    rep.add(Stage("eq_pettis", gap <= PETTIS_TOL, detail={"max_gap": gap, "tolerance": PETTIS_TOL}))

    C = rhs
    cp = martingale_confidence_split(c, len(probes))
    under_q = [martingale_test(x, Q, F, cp, pairs=pairs, name=f"C_{f.label()}_under_Q")
               for f, x in _probed_processes(C, g, probes)]
    rq = MartingaleReport.combine("C_under_Q", under_q)
    rep.add(Stage("C_under_Q", rq.passed, True, rq))
    if negative_control:
        under_p = [martingale_test(x, P, F, cp, pairs=pairs, name=f"C_{f.label()}_under_P")
                   for f, x in _probed_processes(C, g, probes)]
        rn = MartingaleReport.combine("negative_C_under_P", under_p)
        rep.add(Stage("negative_C_under_P", rn.passed, False, rn))
    return rep


def _test(x: Process, N, F, c, pairs, name):
    r = martingale_test(x, N, F, c, pairs=pairs, name=name)
    return r.passed, True, r


# --------------------------------------------------------------------------
# Convergence to the left-endpoint oracle

@dataclass
class ConvergenceRow:
    K: int
    rms: float
    max_abs: float
    weak_gap: float


def bi1star_convergence(ens: PathEnsemble, Ks: Sequence[int], r=lambda t: t,
                        dr=lambda t: 1.0) -> list[ConvergenceRow]:
    """RMS gap between the by-parts integral of scalar ``r`` and Itô sums.

    Coarser grids are sub-samples of the ensemble's grid, so every row uses
    the same Brownian paths.
    """
    Phi = StochasticIntegrand.closed_form(Space.real(), r, dr)
    rows = []
    for K in Ks:
        if ens.K % K:
            raise ValueError(f"grid with {ens.K} steps cannot be thinned to {K}")
        step = ens.K // K
        sub = PathEnsemble(np.ascontiguousarray(ens.values[:, ::step]), ens.grid[::step], ens.seed)
        b = bi1star_paths(Phi, sub)[:, 0]
        gap = b - ito_sum(r, sub.values, sub.grid)
        rows.append(ConvergenceRow(int(K), float(np.sqrt(np.mean(gap * gap))),
                                   float(np.abs(gap).max()),
                                   check_weak_characterization(Phi, sub)))
    return rows


__all__ = [
    "ConvergenceRow", "DriftedProcess", "FACTORIZATION_TOL", "PETTIS_TOL",
    "StochasticIntegrand", "TOL_FD", "bi1star_convergence", "bi1star_integral",
    "bi1star_paths", "bi1star_process", "change_drift", "check_integral_martingale",
    "check_weak_characterization", "cumulative_trapezoid", "girsanov_density",
    "ito_sum", "ito_sum_process", "scalar_by_parts", "trapezoid_weights",
]
