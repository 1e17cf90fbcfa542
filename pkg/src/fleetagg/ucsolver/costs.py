"""Convex, non-decreasing generation cost curves and generator limits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CostFunction:
    """Hourly cost rate of a generator as a function of its output.

    ``quadratic``: ``a*g**2 + b*g``; ``affine``: ``b*g``; ``piecewise_linear``:
    slopes between consecutive ``breakpoints`` (cost is zero at the first breakpoint).
    """

    kind: str = "quadratic"
    a: float = 0.0
    b: float = 0.0
    breakpoints: tuple[float, ...] = ()
    slopes: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("quadratic", "affine", "piecewise_linear"):
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.kind == "affine" and self.a != 0:
            raise ValueError("affine cost must have a == 0")
        if self.kind in ("quadratic", "affine") and (self.a < 0 or self.b < 0):
            raise ValueError("cost coefficients must be non-negative")
        if self.kind == "piecewise_linear":
            bp, sl = np.asarray(self.breakpoints, float), np.asarray(self.slopes, float)
            if len(bp) != len(sl) + 1 or len(sl) == 0:
                raise ValueError("piecewise-linear cost needs len(breakpoints) == len(slopes) + 1")
            if np.any(np.diff(bp) <= 0):
                raise ValueError("breakpoints must be strictly increasing")
            if np.any(sl < 0) or np.any(np.diff(sl) < 0):
                raise ValueError("slopes must be non-negative and non-decreasing")

    @classmethod
    def quadratic(cls, a: float, b: float = 0.0) -> "CostFunction":
        return cls("quadratic", a, b)

    @classmethod
    def affine(cls, b: float) -> "CostFunction":
        return cls("affine", 0.0, b)

    @classmethod
    def piecewise_linear(cls, breakpoints, slopes) -> "CostFunction":
        return cls("piecewise_linear", breakpoints=tuple(map(float, breakpoints)), slopes=tuple(map(float, slopes)))

    def __call__(self, g):
        g = np.asarray(g, dtype=float)
        if self.kind != "piecewise_linear":
            return self.a * g**2 + self.b * g
        bp = np.asarray(self.breakpoints)
        widths = np.clip(g[..., None] - bp[:-1], 0.0, np.diff(bp))
        return widths @ np.asarray(self.slopes)

    def derivative(self, g):
        g = np.asarray(g, dtype=float)
        if self.kind != "piecewise_linear":
            return 2 * self.a * g + self.b
        idx = np.clip(np.searchsorted(self.breakpoints, g, side="right") - 1, 0, len(self.slopes) - 1)
        return np.asarray(self.slopes)[idx]

    def to_dict(self) -> dict:
        if self.kind == "piecewise_linear":
            return {"kind": self.kind, "breakpoints": list(self.breakpoints), "slopes": list(self.slopes)}
        return {"kind": self.kind, "a": self.a, "b": self.b}

    @classmethod
    def from_dict(cls, data: dict) -> "CostFunction":
        kind = data.get("kind", "quadratic")
        if kind == "piecewise_linear":
            return cls.piecewise_linear(data["breakpoints"], data["slopes"])
        return cls(kind, float(data.get("a", 0.0)), float(data.get("b", 0.0)))


@dataclass(frozen=True)
class Generator:
    g_min: float
    g_max: float
    cost: CostFunction = field(default_factory=lambda: CostFunction.quadratic(1.0))

    def __post_init__(self):
        if not 0 <= self.g_min <= self.g_max:
            raise ValueError("generator limits must satisfy 0 <= g_min <= g_max")
        if self.cost.kind == "piecewise_linear":
            bp = self.cost.breakpoints
            if not (np.isclose(bp[0], self.g_min) and np.isclose(bp[-1], self.g_max)):
                raise ValueError("piecewise-linear breakpoints must span [g_min, g_max]")

    @property
    def fixed(self) -> bool:
        return self.g_min == self.g_max

    def to_dict(self) -> dict:
        return {"g_min": self.g_min, "g_max": self.g_max, "cost": self.cost.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "Generator":
        return cls(float(data["g_min"]), float(data["g_max"]), CostFunction.from_dict(data.get("cost", {})))
