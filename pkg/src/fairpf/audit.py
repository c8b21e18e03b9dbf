"""Distance of a contested model from the extrapolated frontier, and the
inverse question of how much scale a target (loss, gap) pair needs."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .closed_form import ScalingConstants, shape_term
from .dgp import Dataset, bayes_optimal_score
from .fitting import extrapolate
from .frontier import ENVELOPE, FrontierCurve, budget_envelope
from .metrics import scores_of

LDA_EXISTS = "lda_exists"
ON_FRONTIER = "on_frontier"
BELOW_FRONTIER = "below_frontier_estimate"

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class UnsupportedDiagnostic(ValueError):
    pass


@dataclass(frozen=True)
class ContestedModel:
    loss: float
    delta: float
    n_plus: int
    d_plus: int
    label: str = "contested"

    def __post_init__(self):
        if not (np.isfinite(self.loss) and np.isfinite(self.delta)):
            raise ValueError("contested loss and delta must be finite")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"contested delta must lie in [0, 1], got {self.delta}")
        if self.n_plus < 1 or self.d_plus < 1:
            raise ValueError("n_plus and d_plus must be >= 1")


@dataclass
class AuditReport:
    delta_star: float
    frontier_delta_at_loss: float
    verdict: str
    contested: ContestedModel
    provenance: dict = field(default_factory=dict)

    @property
    def verdict_text(self) -> str:
        if self.verdict == LDA_EXISTS:
            return f"lda_exists({self.delta_star!r})"
        return self.verdict

    def summary_line(self) -> str:
        digest = self.provenance.get("constants_digest", "")
        return f"{self.verdict_text},{self.delta_star!r},{self.frontier_delta_at_loss!r},{digest}"

    def to_text(self) -> str:
        c = self.contested
        rows = {
            "label": c.label,
            "contested_loss": repr(c.loss),
            "contested_delta": repr(c.delta),
            "n_plus": c.n_plus,
            "d_plus": c.d_plus,
            "verdict": self.verdict_text,
            "delta_star": repr(self.delta_star),
            "frontier_delta_at_loss": repr(self.frontier_delta_at_loss),
            **self.provenance,
        }
        return "".join(f"{k}: {v}\n" for k, v in rows.items())


def constants_digest(C: ScalingConstants) -> str:
    blob = json.dumps(C.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def curve_digest(curve: FrontierCurve) -> str:
    h = hashlib.sha256()
    h.update(curve.deltas.tobytes())
    h.update(curve.losses.tobytes())
    return h.hexdigest()


def _crossing(envelope: FrontierCurve, loss: float) -> float:
    """Smallest gap at which the (non-increasing) envelope reaches ``loss``."""
    d, v = envelope.deltas, envelope.losses
    # first index with v <= loss; v is non-increasing so -v is sorted
    i = int(np.searchsorted(-v, -loss, side="left"))
    if i == 0:
        return float(d[0])
    t = (v[i - 1] - loss) / (v[i - 1] - v[i])
    return float(d[i - 1] + t * (d[i] - d[i - 1]))


def delta_distance_on_curve(contested: ContestedModel, curve: FrontierCurve, provenance: dict | None = None) -> AuditReport:
    """Audit against an explicit frontier; the curve is turned into its budget
    envelope first if it is not one already."""
    env = curve if curve.kind == ENVELOPE else budget_envelope(curve)
    prov = {"curve_digest": curve_digest(env), **(provenance or {})}
    if contested.loss < env.losses.min():
        return AuditReport(0.0, float("nan"), BELOW_FRONTIER, contested, prov)
    d_prime = _crossing(env, contested.loss)
    star = max(0.0, contested.delta - d_prime)
    return AuditReport(star, d_prime, LDA_EXISTS if star > 0 else ON_FRONTIER, contested, prov)


def delta_distance(contested: ContestedModel, constants: ScalingConstants, grid=None) -> AuditReport:
    """How far the contested gap sits right of the frontier at its own loss.

    The frontier is the budget envelope of the scaling form at the contested
    model's (N+, D+).  The result is certified only up to grid spacing.
    """
    _, env = extrapolate(constants, contested.n_plus, contested.d_plus, grid)
    prov = {
        "constants_digest": constants_digest(constants),
        "fit_mode": constants.fit_diagnostics.get("mode", "unknown"),
    }
    return delta_distance_on_curve(contested, env, prov)


@dataclass
class ResourceCurve:
    status: str  # "feasible", "infeasible", or "scale_independent"
    budget: float
    d_values: np.ndarray = field(default_factory=lambda: np.empty(0))
    n_values: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.d_values.tolist(), self.n_values.tolist()))


def required_n(target_loss: float, target_delta: float, d_train, constants: ScalingConstants):
    """Model size that puts (target_delta, target_loss) on the frontier at
    ``d_train``; NaN where no finite size is enough."""
    C = constants
    budget = target_loss - C.c1 - shape_term(target_delta, C.c5, C.c6, C.c7)
    c2d = C.c2 if C.c2_data is None else C.c2_data
    d = np.asarray(d_train, dtype=np.float64)
    room = (budget - c2d * d ** (-C.c4)) / C.c2 if C.c2 > 0 else np.full(d.shape, np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        n = np.where(room > 0, room ** (-1.0 / C.c3), np.nan)
    return float(n) if n.ndim == 0 else n


def resource_requirement(
    target_loss: float, target_delta: float, constants: ScalingConstants, d_grid=None,
) -> ResourceCurve:
    """Pairs (D, N(D)) that reach the target, over the D values where any N does."""
    C = constants
    shape = shape_term(target_delta, C.c5, C.c6, C.c7)
    budget = float(target_loss - C.c1 - shape)
    if C.c2 == 0 and (C.c2_data in (None, 0.0)):
        return ResourceCurve("scale_independent", budget)
    if budget <= 0:
        return ResourceCurve("infeasible", budget)
    d_grid = np.logspace(1, 12, 221) if d_grid is None else np.asarray(d_grid, dtype=np.float64)
    n = np.asarray(required_n(target_loss, target_delta, d_grid, C), dtype=np.float64).reshape(-1)
    ok = np.isfinite(n)
    return ResourceCurve("feasible", budget, d_grid[ok], n[ok])


@dataclass
class SymmetryRow:
    label: str
    zeta: float
    mean_diff_group0: float
    mean_diff_group1: float

    @property
    def gap(self) -> float:
        return abs(self.mean_diff_group1 - self.mean_diff_group0)


def golden_section(f, lo: float, hi: float, tol: float = 1e-6, max_iter: int = 200) -> float:
    a, b = lo, hi
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def assess_symmetry(dataset: Dataset, models, split: str = "test", zeta_range=(0.0, 10.0)) -> list[SymmetryRow]:
    """Per-group mean of (model score - Bayes score under the best-matching tilt).

    ``models`` is an iterable of (label, model) pairs.  Only synthetic data
    has a known Bayes score, so other datasets are rejected.
    """
    if not dataset.is_synthetic:
        raise UnsupportedDiagnostic("symmetry diagnostic needs synthetic data with a known label network")
    cfg = dataset.dgp_config()
    X, A, _ = dataset.part(split)
    g0, g1 = A == 0, A == 1
    rows = []
    for label, model in models:
        f_hat = scores_of(model, X, A)

        def mismatch(z):
            return float(np.mean((f_hat - bayes_optimal_score(cfg, X, A, z)) ** 2))

        z = golden_section(mismatch, *zeta_range)
        diff = f_hat - bayes_optimal_score(cfg, X, A, z)
        rows.append(SymmetryRow(label, z, float(diff[g0].mean()), float(diff[g1].mean())))
    return rows
