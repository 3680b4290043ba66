"""Named boundary-pressure profiles P(t) for the inlet and outlet."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discretization.elements import gauss_1d

KINDS = ("constant", "pulse", "table")


@dataclass(frozen=True)
class Signal:
    """constant: ``value``; pulse: ``value * sin^2(pi (t - start) / width)`` on
    [start, start + width], zero elsewhere; table: piecewise-linear through
    (``times``, ``values``), held constant outside.
    """

    kind: str = "constant"
    value: float = 0.0
    start: float = 0.0
    width: float = 1.0
    times: tuple = field(default_factory=tuple)
    values: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown signal kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "pulse" and not self.width > 0:
            raise ValueError("pulse width must be positive")
        if self.kind == "table":
            if len(self.times) < 1 or len(self.times) != len(self.values):
                raise ValueError("table needs matching, non-empty times and values")
            if np.any(np.diff(self.times) <= 0):
                raise ValueError("table times must be strictly increasing")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full_like(t, self.value)
        if self.kind == "pulse":
            s = (t - self.start) / self.width
            inside = (s >= 0) & (s <= 1)
            return np.where(inside, self.value * np.sin(np.pi * s) ** 2, 0.0)
        return np.interp(t, self.times, self.values)

    @property
    def is_zero(self) -> bool:
        if self.kind == "table":
            return not np.any(self.values)
        return self.value == 0.0

    def breakpoints(self) -> np.ndarray:
        if self.kind == "pulse":
            return np.array([self.start, self.start + self.width])
        if self.kind == "table":
            return np.asarray(self.times, dtype=float)
        return np.zeros(0)

    def mean(self, t0: float, t1: float) -> float:
        """(1 / (t1 - t0)) int_{t0}^{t1} P, by Gauss rules split at the profile kinks."""
        if self.kind == "constant":
            return float(self.value)
        b = self.breakpoints()
        knots = np.unique(np.concatenate([[t0, t1], b[(b > t0) & (b < t1)]]))
        x, w = gauss_1d(6)
        total = 0.0
        for a, c in zip(knots[:-1], knots[1:]):
            total += (c - a) * float(w @ self(a + (c - a) * x))
        return total / (t1 - t0)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind in ("constant", "pulse"):
            d["value"] = float(self.value)
        if self.kind == "pulse":
            d["start"] = float(self.start)
            d["width"] = float(self.width)
        if self.kind == "table":
            d["times"] = [float(t) for t in self.times]
            d["values"] = [float(v) for v in self.values]
        return d
