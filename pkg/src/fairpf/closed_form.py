"""Closed-form frontier bound and its seven-constant scaling form.

With ``u = 1 - c'' + delta`` and ``v = c'' - delta`` the shape term is

    -c c' log u - c (1 - c') log v + u v (c c' / (2 u^2) + c (1 - c') / (2 v^2))

and the frontier loss is ``B + shape``.  The scaling form replaces ``B`` by
``C1 + C2 (N^-C3 + D^-C4)`` and (c, c', c'') by (C5, C6, C7).  The O(third
moment) remainder of the bound is not evaluated.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .frontier import EXACT, FrontierCurve, budget_envelope

GRID_POINTS = 512
GRID_MARGIN = 1e-6


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class ShapeConstants:
    c: float
    c_prime: float
    c_double_prime: float
    b: float = 0.0

    def __post_init__(self):
        if not self.c >= 0:
            raise ValueError(f"c must be >= 0, got {self.c}")
        for name in ("c_prime", "c_double_prime"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @property
    def domain(self) -> tuple[float, float]:
        """Closed-open interval [lo, hi) of admissible gaps (lo may itself be invalid
        when c'' = 1, since then log(1 - c'' + 0) is undefined)."""
        return max(0.0, self.c_double_prime - 1.0), self.c_double_prime


@dataclass
class ScalingConstants:
    """C1..C7 of ``C1 + C2 (N^-C3 + D^-C4) + shape(delta; C5, C6, C7)``.

    ``c2_data`` is only set for the decoupled variant, where the data term
    gets its own coefficient.
    """

    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    c6: float
    c7: float
    c2_data: float | None = None
    fit_diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        checks = [
            ("C2", self.c2 >= 0), ("C3", self.c3 > 0), ("C4", self.c4 > 0), ("C5", self.c5 >= 0),
            ("C6", 0 <= self.c6 <= 1), ("C7", 0 < self.c7 <= 1),
        ]
        if self.c2_data is not None:
            checks.append(("C2 (data)", self.c2_data >= 0))
        bad = [name for name, ok in checks if not ok]
        if bad:
            raise ValueError(f"constants outside their admissible box: {', '.join(bad)} ({self.as_tuple()})")

    def as_tuple(self) -> tuple[float, ...]:
        return (self.c1, self.c2, self.c3, self.c4, self.c5, self.c6, self.c7)

    @property
    def shape(self) -> ShapeConstants:
        return ShapeConstants(self.c5, self.c6, self.c7, 0.0)

    def scale_term(self, n_params, d_train):
        n = np.asarray(n_params, dtype=np.float64)
        d = np.asarray(d_train, dtype=np.float64)
        if np.any(n < 1) or np.any(d < 1):
            raise DomainError("n_params and d_train must be >= 1")
        c2d = self.c2 if self.c2_data is None else self.c2_data
        return self.c2 * n ** (-self.c3) + c2d * d ** (-self.c4)

    def to_dict(self) -> dict:
        out = {f"C{i}": v for i, v in enumerate(self.as_tuple(), start=1)}
        if self.c2_data is not None:
            out["C2_data"] = self.c2_data
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingConstants":
        return cls(*(float(d[f"C{i}"]) for i in range(1, 8)), c2_data=d.get("C2_data"))


def shape_term(delta, c: float, c_prime: float, c_double_prime: float):
    d = np.asarray(delta, dtype=np.float64)
    u = 1.0 - c_double_prime + d
    v = c_double_prime - d
    if np.any(d < 0):
        raise DomainError(f"fairness gap must be >= 0, got min {d.min()}")
    if np.any(u <= 0):
        raise DomainError(f"log argument 1 - c'' + delta must be > 0 (min {u.min()})")
    if np.any(v <= 0):
        raise DomainError(f"log argument c'' - delta must be > 0 (min {v.min()}, c''={c_double_prime})")
    a1 = c * c_prime
    a2 = c * (1.0 - c_prime)
    out = -a1 * np.log(u) - a2 * np.log(v) + u * v * (a1 / (2 * u**2) + a2 / (2 * v**2))
    return float(out) if out.ndim == 0 else out


def pf_loss(delta, k: ShapeConstants):
    return k.b + shape_term(delta, k.c, k.c_prime, k.c_double_prime)


def scaling_loss(delta, n_params, d_train, C: ScalingConstants):
    out = C.c1 + C.scale_term(n_params, d_train) + shape_term(delta, C.c5, C.c6, C.c7)
    return float(out) if np.ndim(out) == 0 else out


def default_delta_grid(c_double_prime: float, n: int = GRID_POINTS) -> np.ndarray:
    lo = max(0.0, c_double_prime - 1.0) + GRID_MARGIN
    hi = c_double_prime - GRID_MARGIN
    if not hi > lo:
        raise DomainError(f"empty gap domain for c''={c_double_prime}")
    return np.linspace(lo, hi, n)


def _valid_mask(grid: np.ndarray, cpp: float) -> np.ndarray:
    return (grid >= 0) & (1.0 - cpp + grid > 0) & (cpp - grid > 0)


def sweep_shape(grid, k: ShapeConstants) -> tuple[FrontierCurve, FrontierCurve]:
    """Exact-gap curve over ``grid`` and its budget envelope.

    Grid points outside the open domain are dropped with a warning.
    """
    grid = np.sort(np.asarray(grid, dtype=np.float64))
    ok = _valid_mask(grid, k.c_double_prime)
    if not ok.all():
        warnings.warn(f"skipped {int((~ok).sum())} grid point(s) outside the gap domain", RuntimeWarning, stacklevel=2)
    grid = grid[ok]
    if grid.size == 0:
        raise DomainError("no grid point lies inside the gap domain")
    src = {
        "c": k.c, "c_prime": k.c_prime, "c_double_prime": k.c_double_prime, "b": k.b,
        "remainder": "omitted",
    }
    exact = FrontierCurve(grid, pf_loss(grid, k), EXACT, dict(src))
    return exact, budget_envelope(exact)
