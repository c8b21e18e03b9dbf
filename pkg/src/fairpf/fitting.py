"""Fitting the seven scaling constants to empirical frontier vertices.

Every constant is mapped to an unconstrained coordinate (exp for positive
ones, a logistic for C6 and for C7 on (max observed gap + 1e-4, 1)), and
the mean squared residual is minimized with Nelder-Mead from a Latin
hypercube of starts.  ``lower_bound`` mode adds a hinge penalty on fitted
values that sit above an observation, then shifts C1 down by whatever
violation is left.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit
from scipy.stats import qmc

from .closed_form import DomainError, ScalingConstants, default_delta_grid, scaling_loss, shape_term
from .frontier import EXACT, FrontierCurve, budget_envelope

log = logging.getLogger(__name__)

NAMES = ("c1", "c2", "c3", "c4", "c5", "c6", "c7")
DEFAULT_FIXED = {"c3": 0.5, "c4": 0.5}
C7_MARGIN = 1e-4
HINGE_WEIGHT = 1e4
ALT_RTOL = 0.01


class FitError(ValueError):
    pass


@dataclass
class FitProblem:
    """Observations are rows of (n_params, d_train, delta, loss)."""

    observations: np.ndarray
    fixed: dict = field(default_factory=lambda: dict(DEFAULT_FIXED))
    mode: str = "least_squares"
    weights: np.ndarray | None = None
    n_starts: int = 32
    seed: int = 0
    decoupled: bool = False

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=np.float64).reshape(-1, 4)
        if not np.all(np.isfinite(obs)):
            raise FitError("observations must be finite")
        w = np.ones(len(obs)) if self.weights is None else np.asarray(self.weights, dtype=np.float64)
        if w.shape != (len(obs),) or np.any(w < 0) or not w.sum() > 0:
            raise FitError("weights must be non-negative, one per observation, not all zero")
        # canonical row order makes the fit independent of input order
        order = np.lexsort((w, obs[:, 3], obs[:, 2], obs[:, 1], obs[:, 0]))
        self.observations, self.weights = obs[order], w[order]
        if self.mode not in ("least_squares", "lower_bound"):
            raise FitError(f"unknown fit mode {self.mode!r}")
        unknown = set(self.fixed) - set(NAMES) - ({"c2_data"} if self.decoupled else set())
        if unknown:
            raise FitError(f"unknown constants pinned: {sorted(unknown)}")
        if np.any(obs[:, 2] >= 1) or np.any(obs[:, 2] < 0):
            raise FitError("every observed fairness gap must lie in [0, 1)")
        if np.any(obs[:, :2] < 1):
            raise FitError("n_params and d_train must be >= 1")
        n_free = len(self.free)
        if len(obs) < n_free + 1:
            raise FitError(f"{len(obs)} observations cannot pin down {n_free} free constants (need >= {n_free + 1})")
        if {"c2", "c3", "c4"} <= set(self.free):
            if len(np.unique(obs[:, 0])) < 2 and len(np.unique(obs[:, 1])) < 2:
                raise FitError("C2..C4 free needs at least two distinct n_params or d_train values")
        c7_fixed = self.fixed.get("c7")
        if c7_fixed is not None and not c7_fixed > self.max_delta + C7_MARGIN:
            raise FitError(f"pinned C7={c7_fixed} must exceed max observed gap {self.max_delta} + {C7_MARGIN}")

    @property
    def names(self) -> tuple[str, ...]:
        return NAMES + (("c2_data",) if self.decoupled else ())

    @property
    def free(self) -> list[str]:
        return [n for n in self.names if n not in self.fixed]

    @property
    def max_delta(self) -> float:
        return float(self.observations[:, 2].max())

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.observations.tobytes())
        h.update(self.weights.tobytes())
        return h.hexdigest()


@dataclass
class FitResult:
    constants: ScalingConstants
    rmse: float
    max_violation: float
    n_restarts_used: int
    mode: str
    converged: bool = True
    alternatives: list[dict] = field(default_factory=list)
    observation_digest: str = ""

    def summary_line(self) -> str:
        c = " ".join(f"{k}={v:.6g}" for k, v in self.constants.to_dict().items())
        flag = "" if self.converged else " non_converged"
        return f"mode={self.mode} rmse={self.rmse:.6g} max_violation={self.max_violation:.3g} {c}{flag}"


class _Param:
    """Maps between unconstrained coordinates and constants."""

    def __init__(self, problem: FitProblem):
        self.p = problem
        self.lo7 = problem.max_delta + C7_MARGIN
        self.free = problem.free

    def to_consts(self, theta) -> dict:
        vals = dict(self.p.fixed)
        for name, t in zip(self.free, theta):
            if name == "c1":
                vals[name] = t
            elif name == "c6":
                vals[name] = expit(t)
            elif name == "c7":
                vals[name] = self.lo7 + (1.0 - self.lo7) * expit(t)
            else:
                vals[name] = np.exp(t)
        return vals

    def to_theta(self, vals: dict) -> np.ndarray:
        out = []
        for name in self.free:
            v = vals[name]
            if name == "c1":
                out.append(v)
            elif name == "c6":
                out.append(logit(np.clip(v, 1e-9, 1 - 1e-9)))
            elif name == "c7":
                out.append(logit(np.clip((v - self.lo7) / (1.0 - self.lo7), 1e-9, 1 - 1e-9)))
            else:
                out.append(np.log(max(v, 1e-300)))
        return np.array(out, dtype=np.float64)

    def start_box(self) -> tuple[np.ndarray, np.ndarray]:
        loss = self.p.observations[:, 3]
        box = {
            "c1": (loss.min() - 1.0, loss.max()),
            "c2": (np.log(1e-2), np.log(1e3)),
            "c2_data": (np.log(1e-2), np.log(1e3)),
            "c3": (np.log(0.1), np.log(1.5)),
            "c4": (np.log(0.1), np.log(1.5)),
            "c5": (np.log(1e-3), 0.0),
            "c6": (-4.0, 4.0),
            "c7": (-4.0, 4.0),
        }
        lo, hi = zip(*(box[n] for n in self.free))
        return np.array(lo), np.array(hi)


def _predict(vals: dict, obs: np.ndarray, decoupled: bool) -> np.ndarray:
    c2d = vals.get("c2_data", vals["c2"]) if decoupled else vals["c2"]
    scale = vals["c2"] * obs[:, 0] ** (-vals["c3"]) + c2d * obs[:, 1] ** (-vals["c4"])
    return vals["c1"] + scale + shape_term(obs[:, 2], vals["c5"], vals["c6"], vals["c7"])


def _linear_start(par: _Param, theta: np.ndarray) -> np.ndarray:
    """Set whichever of C1, C2, C5 are free by least squares, holding the rest."""
    p = par.p
    vals = par.to_consts(theta)
    obs, w = p.observations, p.weights
    lin = [n for n in ("c1", "c2", "c5") if n in par.free and not (n == "c2" and p.decoupled)]
    if not lin:
        return theta
    cols = {
        "c1": np.ones(len(obs)),
        "c2": obs[:, 0] ** (-vals["c3"]) + obs[:, 1] ** (-vals["c4"]),
        "c5": shape_term(obs[:, 2], 1.0, vals["c6"], vals["c7"]),
    }
    base = dict(vals, **{n: 0.0 for n in lin})
    resid = obs[:, 3] - _predict(base, obs, p.decoupled)
    M = np.column_stack([cols[n] for n in lin]) * np.sqrt(w)[:, None]
    coef, *_ = np.linalg.lstsq(M, resid * np.sqrt(w), rcond=None)
    for n, c in zip(lin, coef):
        vals[n] = c if n == "c1" else max(c, 1e-8)
    return par.to_theta(vals)


def _objective(par: _Param):
    p = par.p
    obs, w = p.observations, p.weights / p.weights.sum()
    hinge = p.mode == "lower_bound"

    def f(theta):
        with np.errstate(over="ignore", invalid="ignore"):
            return _value(theta)

    def _value(theta):
        vals = par.to_consts(theta)
        if not all(np.isfinite(v) for v in vals.values()):
            return np.inf
        try:
            r = _predict(vals, obs, p.decoupled) - obs[:, 3]
        except DomainError:
            return np.inf
        val = float(np.dot(w, r * r))
        if hinge:
            val += HINGE_WEIGHT * float(np.dot(w, np.maximum(r, 0.0)))
        return val if np.isfinite(val) else np.inf

    return f


def _nelder_mead(f, x0, maxiter):
    return minimize(
        f, x0, method="Nelder-Mead",
        options={"maxiter": maxiter, "maxfev": 2 * maxiter, "xatol": 1e-12, "fatol": 1e-18, "adaptive": len(x0) > 4},
    )


def _refine(f, x, maxiter, rounds=30):
    """Restart the simplex from the incumbent until it stops improving."""
    res = _nelder_mead(f, x, maxiter)
    for _ in range(rounds):
        nxt = _nelder_mead(f, res.x, maxiter)
        if not nxt.fun < res.fun * (1 - 1e-9) - 1e-300:
            return nxt if nxt.fun <= res.fun else res
        res = nxt
    return res


def fit(problem: FitProblem) -> FitResult:
    par = _Param(problem)
    f = _objective(par)
    k = len(par.free)
    lo, hi = par.start_box()
    starts = qmc.LatinHypercube(d=k, seed=problem.seed).random(problem.n_starts)
    starts = lo + starts * (hi - lo)
    maxiter = 400 * k

    results = []
    for i, s in enumerate(starts):
        x0 = _linear_start(par, s)
        res = _nelder_mead(f, x0, maxiter)
        results.append((res.fun, i, res))
    results.sort(key=lambda t: (t[0], t[1]))

    # polish the leading candidates; the rest only count as alternatives
    polished = []
    for fun, i, res in results[: min(4, len(results))]:
        r = _refine(f, res.x, maxiter)
        polished.append((r.fun, i, r))
    polished.sort(key=lambda t: (t[0], t[1]))
    best_fun, best_i, best = polished[0]
    converged = bool(best.success)

    vals = par.to_consts(best.x)
    obs = problem.observations
    resid = _predict(vals, obs, problem.decoupled) - obs[:, 3]
    if problem.mode == "lower_bound" and resid.max() > 0 and "c1" in par.free:
        vals["c1"] -= resid.max()
        resid = _predict(vals, obs, problem.decoupled) - obs[:, 3]

    w = problem.weights / problem.weights.sum()
    rmse = float(np.sqrt(np.dot(w, resid * resid)))
    consts = _make_constants(vals, problem)

    alts = []
    for fun, i, res in sorted(polished + results[len(polished):], key=lambda t: (t[0], t[1])):
        v = par.to_consts(res.x)
        r = _predict(v, obs, problem.decoupled) - obs[:, 3]
        alt_rmse = float(np.sqrt(np.dot(w, r * r)))
        if alt_rmse <= rmse * (1 + ALT_RTOL) + 1e-12:
            alts.append({"start": i, "rmse": alt_rmse, **_make_constants(v, problem).to_dict()})

    consts.fit_diagnostics = {
        "mode": problem.mode,
        "objective": best_fun,
        "best_start": best_i,
        "fixed": dict(problem.fixed),
        "rmse_by_cell": _rmse_by_cell(obs, resid),
        "n_observations": int(len(obs)),
    }
    if not converged:
        log.warning("fit did not report convergence; returning best effort (objective %.3g)", best_fun)
    return FitResult(
        constants=consts,
        rmse=rmse,
        max_violation=float(resid.max()),
        n_restarts_used=len(starts),
        mode=problem.mode,
        converged=converged,
        alternatives=alts,
        observation_digest=problem.digest(),
    )


def _make_constants(vals: dict, problem: FitProblem) -> ScalingConstants:
    c2d = vals.get("c2_data") if problem.decoupled else None
    return ScalingConstants(*(float(vals[n]) for n in NAMES), c2_data=None if c2d is None else float(c2d))


def _rmse_by_cell(obs, resid) -> dict:
    out = {}
    for n, d in sorted({(int(a), int(b)) for a, b in obs[:, :2]}):
        m = (obs[:, 0] == n) & (obs[:, 1] == d)
        out[f"{n}:{d}"] = float(np.sqrt(np.mean(resid[m] ** 2)))
    return out


def observations_from_curves(curves) -> np.ndarray:
    """Stack (n_params, d_train, delta, loss) rows from frontier curves whose
    ``source`` carries n_params and d_train."""
    rows = []
    for c in curves:
        n, d = float(c.source["n_params"]), float(c.source["d_train"])
        rows.extend((n, d, x, y) for x, y in zip(c.deltas, c.losses))
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def extrapolate(constants: ScalingConstants, n_plus, d_plus, grid=None) -> tuple[FrontierCurve, FrontierCurve]:
    """Exact-gap curve and budget envelope at (n_plus, d_plus)."""
    grid = default_delta_grid(constants.c7) if grid is None else np.asarray(grid, dtype=np.float64)
    src = {"n_params": n_plus, "d_train": d_plus, "remainder": "omitted"}
    exact = FrontierCurve(grid, scaling_loss(grid, n_plus, d_plus, constants), EXACT, src)
    return exact, budget_envelope(exact)


def save_fit(result: FitResult, path, extra: dict | None = None) -> None:
    doc = {
        "format": "fairpf-fit",
        "version": 1,
        "mode": result.mode,
        "constants": result.constants.to_dict(),
        "rmse": result.rmse,
        "max_violation": result.max_violation,
        "n_restarts_used": result.n_restarts_used,
        "converged": result.converged,
        "observation_digest": result.observation_digest,
        "diagnostics": result.constants.fit_diagnostics,
        "alternatives": result.alternatives,
        **(extra or {}),
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_fit(path) -> tuple[FitResult, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "fairpf-fit":
        raise FitError(f"{path}: not a fit result document")
    consts = ScalingConstants.from_dict(doc["constants"])
    consts.fit_diagnostics = doc.get("diagnostics", {})
    res = FitResult(
        consts, doc["rmse"], doc["max_violation"], doc["n_restarts_used"], doc["mode"],
        doc.get("converged", True), doc.get("alternatives", []), doc.get("observation_digest", ""),
    )
    return res, doc
