"""Concrete Banach spaces, their elements, and dual probes.

Four spaces are supported, all stored as real coordinate vectors:

======================  =====================  ==========================
kind                    coordinates            norm
======================  =====================  ==========================
``Space.real()``        1                      absolute value
``Space.finite(n)``     n                      Euclidean
``Space.grid(times)``   K+1 (values on grid)   sup over grid points
``Space.samples(M)``    M (sample slots)       mean of absolute values
======================  =====================  ==========================

``Space.grid`` stands in for C([0,T]) sampled on a fixed grid and
``Space.samples`` for L^1 under the empirical measure with weight 1/M per
slot.  Probes (:class:`DualFunctional`) are the point evaluations / weighted
averages that separate elements of these spaces.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels


class SpaceMismatch(ValueError):
    """Two operands live in different spaces."""


class Kind(enum.Enum):
    REAL = "real"
    FINITE = "finite"
    GRID = "grid"
    SAMPLES = "samples"


_NORM_CODES = {
    Kind.REAL: kernels.NORM_ABS,
    Kind.FINITE: kernels.NORM_EUCLID,
    Kind.GRID: kernels.NORM_SUP,
    Kind.SAMPLES: kernels.NORM_MEANABS,
}


@dataclass(frozen=True)
class Space:
    """Descriptor of one of the supported Banach spaces."""

    kind: Kind
    dim: int
    grid: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dimension must be >= 1, got {self.dim}")
        if self.kind is Kind.REAL and self.dim != 1:
            raise ValueError("the real line has dimension 1")
        if self.kind is Kind.GRID:
            if self.grid is None or len(self.grid) != self.dim:
                raise ValueError("grid space needs one coordinate per grid time")
            g = np.asarray(self.grid)
            if g[0] != 0.0 or np.any(np.diff(g) <= 0):
                raise ValueError("time grid must start at 0 and be strictly increasing")
        elif self.grid is not None:
            raise ValueError(f"{self.kind.value} space takes no grid")

    @classmethod
    def real(cls) -> "Space":
        return cls(Kind.REAL, 1)

    @classmethod
    def finite(cls, n: int) -> "Space":
        return cls(Kind.FINITE, int(n))

    @classmethod
    def grid_functions(cls, times: Sequence[float]) -> "Space":
        times = tuple(float(t) for t in times)
        return cls(Kind.GRID, len(times), times)

    @classmethod
    def samples(cls, m: int) -> "Space":
        return cls(Kind.SAMPLES, int(m))

    @property
    def norm_code(self) -> int:
        return _NORM_CODES[self.kind]

    @property
    def horizon(self) -> float:
        if self.kind is not Kind.GRID:
            raise AttributeError("only grid spaces have a horizon")
        return self.grid[-1]

    def zero(self) -> "BanachValue":
        return BanachValue(self, np.zeros(self.dim))

    def element(self, coords) -> "BanachValue":
        return BanachValue(self, coords)

    def norms(self, rows: np.ndarray) -> np.ndarray:
        """Norm of each row of an (n, dim) coordinate array."""
        rows = np.asarray(rows, dtype=float)
        if rows.ndim == 1:
            rows = rows[None, :]
        if rows.shape[-1] != self.dim:
            raise SpaceMismatch(f"rows have {rows.shape[-1]} coordinates, space has {self.dim}")
        if self.kind is Kind.REAL or self.kind is Kind.GRID:
            return np.abs(rows).max(axis=-1)
        if self.kind is Kind.FINITE:
            # scaled by the largest entry so tiny or huge vectors neither underflow nor overflow
            m = np.abs(rows).max(axis=-1)
            safe = np.where(m > 0, m, 1.0)
            return m * np.sqrt(((rows / safe[..., None]) ** 2).sum(axis=-1))
        return np.abs(rows).mean(axis=-1)

    def probes(self, max_count: int | None = None) -> list["DualFunctional"]:
        """A norming family of probes, optionally thinned to ``max_count``."""
        if self.kind is Kind.REAL:
            return [DualFunctional.identity()]
        idx = np.arange(self.dim)
        if max_count is not None and max_count < self.dim:
            idx = np.unique(np.linspace(0, self.dim - 1, max_count).round().astype(int))
        if self.kind is Kind.SAMPLES:
            return [DualFunctional.slot(self, int(i)) for i in idx]
        return [DualFunctional.coordinate(self, int(i)) for i in idx]

    def default_probe(self) -> "DualFunctional":
        if self.kind is Kind.SAMPLES:
            return DualFunctional.average(self, np.ones(self.dim))
        if self.kind is Kind.REAL:
            return DualFunctional.identity()
        return DualFunctional.coordinate(self, 0)

    def describe(self) -> str:
        if self.kind is Kind.GRID:
            return f"grid[{self.dim} points on [0, {self.horizon:g}]]"
        return f"{self.kind.value}[{self.dim}]"


@dataclass(frozen=True, eq=False)
class BanachValue:
    """An element of a :class:`Space`; immutable."""

    space: Space
    coords: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coords, dtype=float).reshape(-1)
        if c.shape[0] != self.space.dim:
            raise SpaceMismatch(
                f"{c.shape[0]} coordinates given for {self.space.describe()}")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    def _check(self, other: "BanachValue"):
        if other.space != self.space:
            raise SpaceMismatch(f"{self.space.describe()} vs {other.space.describe()}")

    def __add__(self, other: "BanachValue") -> "BanachValue":
        return add(self, other)

    def __sub__(self, other: "BanachValue") -> "BanachValue":
        self._check(other)
        return BanachValue(self.space, self.coords - other.coords)

    def __neg__(self) -> "BanachValue":
        return scale(-1.0, self)

    def __mul__(self, a: float) -> "BanachValue":
        return scale(a, self)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        return (isinstance(other, BanachValue) and other.space == self.space
                and bool(np.array_equal(self.coords, other.coords)))

    def __hash__(self):
        return hash((self.space, self.coords.tobytes()))

    def __repr__(self) -> str:
        return f"BanachValue({self.space.describe()}, {np.array2string(self.coords, threshold=8)})"

    def norm(self) -> float:
        return norm(self)

    def isclose(self, other: "BanachValue", rtol=1e-12, atol=1e-12) -> bool:
        self._check(other)
        return norm(self - other) <= atol + rtol * max(norm(self), norm(other))


def add(u: BanachValue, v: BanachValue) -> BanachValue:
    u._check(v)
    return BanachValue(u.space, u.coords + v.coords)


def scale(a: float, v: BanachValue) -> BanachValue:
    return BanachValue(v.space, float(a) * v.coords)


def norm(v: BanachValue) -> float:
    return float(v.space.norms(v.coords)[0])


class ProbeKind(enum.Enum):
    IDENTITY = "identity"
    COORDINATE = "coordinate"
    EVALUATION = "evaluation"
    AVERAGE = "average"


@dataclass(frozen=True, eq=False)
class DualFunctional:
    """A continuous linear functional given by a kernel vector.

    ``pair(f, v) = f.kernel @ v.coords``.  For sample spaces the kernel of a
    weighted average with weights ``a`` is ``a / M``, so that the pairing is
    ``mean(a * v)`` and the operator norm is ``max |a|``.
    """

    space: Space
    kind: ProbeKind
    kernel: np.ndarray = field(repr=False)
    index: int | None = None

    @classmethod
    def identity(cls) -> "DualFunctional":
        return cls(Space.real(), ProbeKind.IDENTITY, np.ones(1))

    @classmethod
    def coordinate(cls, space: Space, i: int) -> "DualFunctional":
        if not 0 <= i < space.dim:
            raise IndexError(f"probe index {i} outside 0..{space.dim - 1}")
        if space.kind is Kind.SAMPLES:
            raise ValueError("sample spaces are probed by weighted averages")
        k = np.zeros(space.dim)
        k[i] = 1.0
        kind = {Kind.REAL: ProbeKind.IDENTITY, Kind.FINITE: ProbeKind.COORDINATE,
                Kind.GRID: ProbeKind.EVALUATION}[space.kind]
        return cls(space, kind, k, i)

    @classmethod
    def average(cls, space: Space, weights) -> "DualFunctional":
        if space.kind is not Kind.SAMPLES:
            raise ValueError("weighted averages probe sample spaces only")
        w = np.asarray(weights, dtype=float).reshape(-1)
        if w.shape[0] != space.dim:
            raise SpaceMismatch("weight vector length differs from slot count")
        return cls(space, ProbeKind.AVERAGE, w / space.dim)

    @classmethod
    def slot(cls, space: Space, j: int) -> "DualFunctional":
        """Evaluation of slot ``j`` (an average with weight M on that slot)."""
        if not 0 <= j < space.dim:
            raise IndexError(f"slot {j} outside 0..{space.dim - 1}")
        w = np.zeros(space.dim)
        w[j] = space.dim
        f = cls.average(space, w)
        return cls(space, ProbeKind.AVERAGE, f.kernel, j)

    @property
    def operator_norm(self) -> float:
        if self.kind is ProbeKind.AVERAGE:
            return float(np.abs(self.kernel).max() * self.space.dim)
        if self.space.kind is Kind.FINITE:
            return float(np.sqrt((self.kernel ** 2).sum()))
        return float(np.abs(self.kernel).sum())

    def __call__(self, v: BanachValue) -> float:
        return pair(self, v)

    def apply(self, rows: np.ndarray) -> np.ndarray:
        """Pair with each row of an (..., dim) coordinate array."""
        return np.asarray(rows, dtype=float) @ self.kernel

    def label(self) -> str:
        if self.kind is ProbeKind.IDENTITY:
            return "id"
        if self.index is not None:
            return f"{self.kind.value}{self.index}"
        return self.kind.value


def pair(f: DualFunctional, v: BanachValue) -> float:
    if f.space != v.space:
        raise SpaceMismatch(f"probe on {f.space.describe()} applied to {v.space.describe()}")
    return float(f.kernel @ v.coords)


def as_rows(space: Space, values) -> np.ndarray:
    """Coerce scalars / sequences / BanachValues into an (n, dim) float array."""
    if isinstance(values, BanachValue):
        if values.space != space:
            raise SpaceMismatch("value outside the target space")
        return values.coords[None, :].copy()
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1 and space.dim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[1] != space.dim:
        raise SpaceMismatch(f"expected (n, {space.dim}) coordinates, got shape {arr.shape}")
    return np.ascontiguousarray(arr)
