"""Scalar processes indexed by a time grid and evaluated atom-wise."""
from __future__ import annotations

from typing import Callable

import numpy as np


class Process:
    """A scalar process ``(time index) -> array over atoms``.

    Either backed by an ``(n_atoms, n_times)`` array or computed lazily, which
    keeps product-space ensembles from being materialized in full.
    """

    def __init__(self, times, fn: Callable[[int], np.ndarray] | None = None,
                 values: np.ndarray | None = None):
        self.times = np.asarray(times, dtype=float)
        if (fn is None) == (values is None):
            raise ValueError("give exactly one of fn and values")
        if values is not None:
            values = np.asarray(values, dtype=float)
            if values.ndim != 2 or values.shape[1] != self.times.size:
                raise ValueError("values must be (n_atoms, n_times)")
        self._fn = fn
        self._values = values

    @classmethod
    def from_array(cls, values, times) -> "Process":
        return cls(times, values=values)

    @classmethod
    def deterministic(cls, times, n_atoms: int, f: Callable[[float], float]) -> "Process":
        times = np.asarray(times, dtype=float)
        return cls(times, lambda k: np.full(n_atoms, float(f(times[k]))))

    @property
    def n_times(self) -> int:
        return self.times.size

    def __call__(self, k: int) -> np.ndarray:
        if self._values is not None:
            return self._values[:, k]
        return np.asarray(self._fn(k), dtype=float)

    def map(self, f: Callable[[int, np.ndarray], np.ndarray]) -> "Process":
        """New process ``k -> f(k, self(k))``."""
        return Process(self.times, lambda k: f(k, self(k)))

    def shift(self, theta: Callable[[float], float]) -> "Process":
        return self.map(lambda k, x: x + theta(self.times[k]))

    def __mul__(self, other: "Process") -> "Process":
        return Process(self.times, lambda k: self(k) * other(k))

    def __add__(self, other: "Process") -> "Process":
        return Process(self.times, lambda k: self(k) + other(k))

    def __sub__(self, other: "Process") -> "Process":
        return Process(self.times, lambda k: self(k) - other(k))

    def __repr__(self) -> str:
        src = "array" if self._values is not None else "lazy"
        return f"Process({src}, {self.n_times} times)"
