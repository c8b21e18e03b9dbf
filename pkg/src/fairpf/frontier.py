"""Empirical loss-fairness frontiers from clouds of trained models.

Points live on the (delta, loss) plane: delta is the demographic parity gap
and loss the test BCE.  The exact-gap frontier is the lower convex hull of
the cloud; the budget envelope is its running minimum over delta.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

EXACT = "exact_gap_hull"
ENVELOPE = "budget_envelope"
CURVE_MAGIC = "fairpf-curve"


class FrontierError(ValueError):
    pass


@dataclass
class FrontierCurve:
    deltas: np.ndarray
    losses: np.ndarray
    kind: str = EXACT
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        self.deltas = np.asarray(self.deltas, dtype=np.float64)
        self.losses = np.asarray(self.losses, dtype=np.float64)
        if self.deltas.shape != self.losses.shape or self.deltas.ndim != 1:
            raise FrontierError("deltas and losses must be 1-d arrays of equal length")

    @property
    def vertices(self) -> list[tuple[float, float]]:
        return list(zip(self.deltas.tolist(), self.losses.tolist()))

    def __len__(self):
        return self.deltas.size


def _as_points(points) -> np.ndarray:
    P = np.asarray(points, dtype=np.float64)
    if P.size == 0:
        raise FrontierError("no points given")
    P = P.reshape(-1, 2)
    if not np.all(np.isfinite(P)):
        raise FrontierError("points must have finite coordinates")
    return P


def _min_per_delta(P: np.ndarray) -> np.ndarray:
    """Sort by delta and keep the lowest loss at each repeated delta."""
    P = P[np.lexsort((P[:, 1], P[:, 0]))]
    keep = np.ones(len(P), dtype=bool)
    keep[1:] = P[1:, 0] != P[:-1, 0]
    return P[keep]


def lower_convex_hull(points, source: dict | None = None) -> FrontierCurve:
    """Vertices of the lower hull, left to right (monotone chain).

    Collinear interior points are dropped.
    """
    P = _min_per_delta(_as_points(points))
    hull: list[np.ndarray] = []
    for p in P:
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
            if cross > 0:
                break
            hull.pop()
        hull.append(p)
    H = np.array(hull)
    src = {"point_count": int(_as_points(points).shape[0]), **(source or {})}
    return FrontierCurve(H[:, 0], H[:, 1], EXACT, src)


def budget_envelope(curve_or_points, source: dict | None = None) -> FrontierCurve:
    """Lowest loss reachable at or below each delta (running minimum)."""
    if isinstance(curve_or_points, FrontierCurve):
        P = np.column_stack([curve_or_points.deltas, curve_or_points.losses])
        src = dict(curve_or_points.source)
    else:
        P = _as_points(curve_or_points)
        src = {"point_count": int(P.shape[0])}
    src.update(source or {})
    P = _min_per_delta(_as_points(P))
    return FrontierCurve(P[:, 0], np.minimum.accumulate(P[:, 1]), ENVELOPE, src)


def pareto_staircase(points) -> FrontierCurve:
    """Non-dominated points (lower loss and lower delta both better)."""
    P = _min_per_delta(_as_points(points))
    best = np.minimum.accumulate(P[:, 1])
    keep = np.ones(len(P), dtype=bool)
    keep[1:] = P[1:, 1] < best[:-1]
    return FrontierCurve(P[keep, 0], P[keep, 1], "pareto_staircase", {"point_count": int(len(P))})


def interpolate(curve: FrontierCurve, delta):
    """Piecewise-linear loss at ``delta``; no extrapolation past the vertices."""
    d = np.asarray(delta, dtype=np.float64)
    lo, hi = curve.deltas[0], curve.deltas[-1]
    if np.any(d < lo) or np.any(d > hi):
        raise FrontierError(f"delta {delta} outside curve range [{lo}, {hi}]")
    out = np.interp(d, curve.deltas, curve.losses)
    return float(out) if out.ndim == 0 else out


def frontier_points(trained, n_params=None, d_train=None, average_seeds: bool = False) -> np.ndarray:
    """(delta, loss) pairs from ``TrainedPoint`` records of one (N, D) cell.

    With ``average_seeds`` the test gap and loss are first averaged over
    seeds at each lambda.
    """
    sel = [
        p for p in trained
        if (n_params is None or p.n_params == n_params) and (d_train is None or p.d_train == d_train)
    ]
    if not sel:
        raise FrontierError(f"no trained points for n_params={n_params}, d_train={d_train}")
    if not average_seeds:
        return np.array([(p.test_dp, p.test_bce) for p in sel])
    groups = defaultdict(list)
    for p in sel:
        groups[(p.n_params, p.d_train, p.lam)].append((p.test_dp, p.test_bce))
    return np.array([np.mean(groups[k], axis=0) for k in sorted(groups)])


def cells(trained) -> list[tuple[int, int]]:
    """Distinct (n_params, d_train) pairs, sorted."""
    return sorted({(p.n_params, p.d_train) for p in trained})


def write_curve(curve: FrontierCurve, path, extra: dict | None = None) -> None:
    meta = {"kind": curve.kind, **curve.source, **(extra or {})}
    head = " ".join(f"{k}={v}" for k, v in meta.items())
    lines = [f"# {CURVE_MAGIC} {head}", "delta,loss"]
    lines += [f"{d!r},{l!r}" for d, l in zip(curve.deltas.tolist(), curve.losses.tolist())]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_curve(path) -> tuple[FrontierCurve, dict]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(f"# {CURVE_MAGIC}"):
        raise FrontierError(f"{path}: missing curve header line")
    meta = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
    if lines[1] != "delta,loss":
        raise FrontierError(f"{path}: expected 'delta,loss' column header")
    rows = [tuple(map(float, ln.split(","))) for ln in lines[2:] if ln.strip()]
    D = np.array(rows).reshape(-1, 2)
    kind = meta.get("kind", EXACT)
    return FrontierCurve(D[:, 0], D[:, 1], kind, meta), meta
