"""Exact-enumeration checks of the loss decomposition and its helper lemmas
on small discrete distributions.

A joint distribution over (x, a, y) is a table ``P[x, a, y]`` with x taking
at most 16 values.  Everything except the association-inequality check is
computed exactly, so tolerances are near machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit

MAX_SUPPORT = 16
TELESCOPE_TOL = 1e-12
THREE_TERM_TOL = 1e-10
CONDITION_TOL = 1e-12


class SupportError(ValueError):
    pass


@dataclass
class DiscreteJoint:
    table: np.ndarray  # shape (n_x, 2, 2), indexed [x, a, y]

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.float64)
        if t.ndim != 3 or t.shape[1:] != (2, 2):
            raise ValueError(f"joint table must have shape (n_x, 2, 2), got {t.shape}")
        if t.shape[0] > MAX_SUPPORT:
            raise ValueError(f"x support capped at {MAX_SUPPORT} points")
        if np.any(t < 0) or abs(t.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be non-negative and sum to 1")
        self.table = t

    @property
    def xa(self) -> np.ndarray:
        return self.table.sum(axis=2)

    def bayes(self) -> np.ndarray:
        """p(y=1 | x, a); 0.5 on (x, a) cells with no mass."""
        m = self.xa
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(m > 0, self.table[..., 1] / m, 0.5)


def random_joint(rng: np.random.Generator, n_x: int = 3, full_support: bool = True) -> DiscreteJoint:
    w = rng.gamma(1.0, size=(n_x, 2, 2))
    if not full_support:
        w[rng.random(w.shape) < 0.2] = 0.0
        if w.sum() == 0:
            w[0, 0, 0] = 1.0
    return DiscreteJoint(w / w.sum())


def cross_entropy(p: DiscreteJoint, f: np.ndarray) -> float:
    """Expected BCE of score table ``f[x, a]`` under ``p``."""
    t = p.table
    with np.errstate(divide="ignore", invalid="ignore"):
        lf, l1f = np.log(f), np.log1p(-f)
        terms = np.where(t[..., 1] > 0, t[..., 1] * lf, 0.0) + np.where(t[..., 0] > 0, t[..., 0] * l1f, 0.0)
    return float(-terms.sum())


def log_ratio_table(q_bayes: np.ndarray, f: np.ndarray) -> np.ndarray:
    """S[x, a, y] = log of q(y | x, a) / f(y | x, a)."""
    S = np.empty(f.shape + (2,))
    S[..., 1] = np.log(q_bayes) - np.log(f)
    S[..., 0] = np.log1p(-q_bayes) - np.log1p(-f)
    return S


def _check_ac(p: DiscreteJoint, q: DiscreteJoint):
    if np.any((p.table > 0) & (q.table == 0)):
        raise SupportError("p puts mass where q has none (p is not absolutely continuous w.r.t. q)")


def _kl_bernoulli(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(a > 0, a * (np.log(a) - np.log(b)), 0.0)
        t0 = np.where(a < 1, (1 - a) * (np.log1p(-a) - np.log1p(-b)), 0.0)
    return t1 + t0


@dataclass
class DecompositionReport:
    terms: tuple[float, float, float, float, float]
    loss: float
    telescope_residual: float
    shift_gap: float  # E_p[S] - E_q[S]
    expected_rs: float  # E_q[R S] with R = p/q - 1
    three_term_residual: float

    @property
    def condition_holds(self) -> bool:
        return abs(self.shift_gap) <= CONDITION_TOL

    @property
    def telescope_ok(self) -> bool:
        return abs(self.telescope_residual) < TELESCOPE_TOL

    @property
    def three_term_ok(self) -> bool:
        """Only meaningful when the condition on S holds."""
        return abs(self.three_term_residual) < THREE_TERM_TOL


def verify_decomposition(p: DiscreteJoint, q: DiscreteJoint, f) -> DecompositionReport:
    """Five-term split of the loss of ``f`` under ``p`` around the auxiliary ``q``.

    Terms, in order: shift cost of f, excess train loss of f over q's Bayes
    table, shift cost of q's Bayes table, test-loss gap between the two Bayes
    tables, and the irreducible test loss.
    """
    _check_ac(p, q)
    f = np.asarray(f, dtype=np.float64)
    if f.shape != p.xa.shape or np.any(f <= 0) or np.any(f >= 1):
        raise ValueError("score table must have shape (n_x, 2) with entries in (0, 1)")
    qb, pb = q.bayes(), p.bayes()
    H = cross_entropy
    loss = H(p, f)
    terms = (
        H(p, f) - H(q, f),
        H(q, f) - H(q, qb),
        H(q, qb) - H(p, qb),
        H(p, qb) - H(p, pb),
        H(p, pb),
    )
    telescope = loss - sum(terms)

    S = log_ratio_table(qb, f)
    with np.errstate(invalid="ignore", divide="ignore"):
        R = np.where(q.table > 0, p.table / q.table - 1.0, 0.0)
    shift_gap = float((p.table * S).sum() - (q.table * S).sum())
    expected_rs = float((q.table * R * S).sum())

    kl = float((p.xa * _kl_bernoulli(pb, qb)).sum())
    three_term = loss - (terms[1] + kl + terms[4])
    return DecompositionReport(terms, loss, telescope, shift_gap, expected_rs, three_term)


def engineer_condition(p: DiscreteJoint, q: DiscreteJoint, rng: np.random.Generator, max_tries: int = 100) -> np.ndarray:
    """A score table f != q's Bayes table with E_p[S] = E_q[S].

    f is q's Bayes table pushed along a random direction u by a fixed step,
    then moved along a second direction v; the step along v is found by
    root bracketing.
    """
    _check_ac(p, q)
    base = logit(np.clip(q.bayes(), 1e-12, 1 - 1e-12))
    diff = p.table - q.table
    qb = q.bayes()

    def gap(s, u, v):
        f = expit(base + 0.5 * u + s * v)
        return float((diff * log_ratio_table(qb, f)).sum())

    grid = np.linspace(-4.0, 4.0, 81)
    for _ in range(max_tries):
        u = rng.standard_normal(base.shape)
        v = rng.standard_normal(base.shape)
        h = np.array([gap(s, u, v) for s in grid])
        idx = np.flatnonzero(np.sign(h[:-1]) * np.sign(h[1:]) < 0)
        if idx.size:
            i = idx[0]
            s = brentq(gap, grid[i], grid[i + 1], args=(u, v), xtol=1e-15, rtol=4 * np.finfo(float).eps)
            return expit(base + 0.5 * u + s * v)
    raise RuntimeError("could not construct a score table satisfying the condition")


@dataclass
class CovLemmaReport:
    covariance: float
    product_gap: float  # E_nu[RS] - E_nu[R] E_nu[S]
    mean_gap: float  # E_mu[S] - E_nu[S]
    tol: float = CONDITION_TOL

    @property
    def conditions(self) -> tuple[bool, bool, bool]:
        return tuple(abs(v) <= self.tol for v in (self.covariance, self.product_gap, self.mean_gap))

    @property
    def equivalent(self) -> bool:
        return len(set(self.conditions)) == 1


def verify_cov_lemma(mu, nu, s, tol: float = CONDITION_TOL) -> CovLemmaReport:
    """Evaluate the three equivalent conditions for measures on a finite space."""
    mu, nu, s = (np.asarray(v, dtype=np.float64).ravel() for v in (mu, nu, s))
    if np.any((mu > 0) & (nu == 0)):
        raise SupportError("mu must be absolutely continuous w.r.t. nu")
    if abs(mu.sum() - nu.sum()) > 1e-12:
        raise ValueError("mu and nu must have the same total mass")
    on = nu > 0
    R = np.zeros_like(nu)
    R[on] = mu[on] / nu[on] - 1.0
    e_r = float(nu @ R)
    e_s = float(nu @ s)
    e_rs = float(nu @ (R * s))
    cov = float(nu @ ((R - e_r) * (s - e_s)))
    return CovLemmaReport(cov, e_rs - e_r * e_s, float(mu @ s) - e_s, tol)


def cov_lemma_instance(kind: str, rng: np.random.Generator, n: int = 8):
    """(mu, nu, s) built so the three conditions all hold or all fail.

    ``kind`` is "identical" (mu = nu), "flat_tilt" (mu moves mass only
    inside a set where s is constant) or "correlated" (mu tilts nu by
    exp(s)).
    """
    nu = rng.gamma(1.0, size=n) + 0.05
    nu /= nu.sum()
    s = rng.standard_normal(n)
    if kind == "identical":
        return nu.copy(), nu, s
    if kind == "flat_tilt":
        k = max(2, n // 2)
        block = rng.choice(n, size=k, replace=False)
        s[block] = s[block[0]]
        mu = nu.copy()
        w = rng.gamma(1.0, size=k) + 0.05
        mu[block] = nu[block].sum() * w / w.sum()
        return mu, nu, s
    if kind == "correlated":
        mu = nu * np.exp(s)
        return mu / mu.sum(), nu, s
    raise ValueError(f"unknown instance kind {kind!r}")


@dataclass
class AssociationReport:
    covariance: float
    se: float
    ci: tuple[float, float]

    @property
    def passed(self) -> bool:
        return self.ci[0] > -3.0 * self.se


def _shifted_cov(a: np.ndarray, b: np.ndarray) -> float:
    da, db = a - a[0], b - b[0]
    return float(np.mean(da * db) - np.mean(da) * np.mean(db))


def verify_chebyshev_cov(u_samples, zeta_p: float, zeta_q: float, n_boot: int = 200, seed: int = 0, level: float = 0.95) -> AssociationReport:
    """Monte-Carlo Cov(sigmoid(U - zeta_p), sigmoid(U - zeta_q)) with a bootstrap CI."""
    u = np.asarray(u_samples, dtype=np.float64).ravel()
    if u.size < 10_000:
        raise ValueError("need at least 1e4 samples of U")
    a, b = expit(u - zeta_p), expit(u - zeta_q)
    est = _shifted_cov(a, b)
    rng = np.random.default_rng(seed)
    boots = np.empty(n_boot)
    for i in range(n_boot):
        idx = rng.integers(0, u.size, u.size)
        boots[i] = _shifted_cov(a[idx], b[idx])
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(boots, [alpha, 1.0 - alpha])
    return AssociationReport(est, float(boots.std(ddof=1)), (float(lo), float(hi)))


def taylor_gap(values, probs, which: str = "log1m") -> tuple[float, float]:
    """(E[log] - second-order approximation, E|Z - EZ|^3) for a discrete Z.

    ``which`` picks log(1 - Z) ("log1m") or log(Z) ("log").
    """
    z = np.asarray(values, dtype=np.float64)
    w = np.asarray(probs, dtype=np.float64)
    w = w / w.sum()
    if np.any(z <= 0) or np.any(z >= 1):
        raise ValueError("Z must be supported inside (0, 1)")
    mu = float(w @ z)
    var = float(w @ (z - mu) ** 2)
    if which == "log1m":
        lhs = float(w @ np.log1p(-z))
        rhs = np.log1p(-mu) - var / (2.0 * (1.0 - mu) ** 2)
    elif which == "log":
        lhs = float(w @ np.log(z))
        rhs = np.log(mu) - var / (2.0 * mu**2)
    else:
        raise ValueError(f"unknown expansion {which!r}")
    return lhs - rhs, float(w @ np.abs(z - mu) ** 3)


def two_point_family(h: float, center: float = 0.5):
    return np.array([center - h, center + h]), np.array([0.5, 0.5])


def skewed_family(h: float, center: float = 0.4, n: int = 41):
    """A discretized Beta(2, 5) shape, centred at ``center`` with spread ``h``."""
    t = np.linspace(0.0, 1.0, n + 2)[1:-1]
    w = t * (1 - t) ** 4
    w /= w.sum()
    xi = t - w @ t
    xi /= np.abs(xi).max()
    return center + h * xi, w


@dataclass
class TaylorDecayReport:
    scales: np.ndarray
    errors: np.ndarray
    abs_third: np.ndarray
    slope: float

    @property
    def ratios(self) -> np.ndarray:
        """Error over E|Z - EZ|^3 at each scale."""
        return np.abs(self.errors) / self.abs_third

    @property
    def ratio_spread(self) -> float:
        r = self.ratios
        return float(r.max() / r.min())


def verify_taylor_log(family=skewed_family, scales=None, which: str = "log1m") -> TaylorDecayReport:
    """Remainder of the second-order expansion of E[log(1 - Z)] as the spread shrinks."""
    scales = 0.2 * 0.5 ** np.arange(5) if scales is None else np.asarray(scales, dtype=np.float64)
    errs, third = [], []
    for h in scales:
        e, m3 = taylor_gap(*family(h), which=which)
        errs.append(e)
        third.append(m3)
    errs, third = np.array(errs), np.array(third)
    slope = float(np.polyfit(np.log(scales), np.log(np.abs(errs)), 1)[0])
    return TaylorDecayReport(scales, errs, third, slope)


def verify_var_bound(values, probs, tol: float = 1e-12) -> bool:
    """Var(Z) <= E[Z](1 - E[Z]) for Z supported in [0, 1]."""
    z = np.asarray(values, dtype=np.float64)
    w = np.asarray(probs, dtype=np.float64)
    w = w / w.sum()
    if np.any(z < 0) or np.any(z > 1):
        raise ValueError("Z must lie in [0, 1]")
    mu = float(w @ z)
    var = float(w @ (z - mu) ** 2)
    return var <= mu * (1 - mu) + tol


@dataclass
class SuiteLine:
    name: str
    passed: bool
    detail: str

    def __str__(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def run_suite(n_instances: int = 100, seed: int = 0) -> list[SuiteLine]:
    """All oracle checks with pass/fail lines, as run by ``fairpf verify``."""
    rng = np.random.default_rng(seed)
    out = []

    tele, cond = [], []
    for i in range(n_instances):
        n_x = int(rng.integers(1, MAX_SUPPORT + 1))
        q = random_joint(rng, n_x)
        p = random_joint(rng, n_x, full_support=bool(i % 2))
        f = expit(rng.standard_normal((n_x, 2)) * 2)
        tele.append(abs(verify_decomposition(p, q, f).telescope_residual))
        g = engineer_condition(p, q, rng)
        rep = verify_decomposition(p, q, g)
        cond.append(abs(rep.three_term_residual) if rep.condition_holds else np.inf)
    out.append(SuiteLine("decomposition.telescope", max(tele) < TELESCOPE_TOL, f"max residual {max(tele):.3g} over {n_instances}"))
    out.append(SuiteLine("decomposition.three_term", max(cond) < THREE_TERM_TOL, f"max residual {max(cond):.3g} over {n_instances}"))

    kinds = ("identical", "flat_tilt", "correlated")
    ok = 0
    for i in range(n_instances):
        kind = kinds[i % 3]
        rep = verify_cov_lemma(*cov_lemma_instance(kind, rng, int(rng.integers(3, MAX_SUPPORT + 1))))
        expect = kind != "correlated"
        ok += rep.equivalent and all(c == expect for c in rep.conditions)
    out.append(SuiteLine("cov_lemma.equivalence", ok == n_instances, f"{ok}/{n_instances} instances consistent"))

    u = rng.standard_normal(20_000)
    assoc = verify_chebyshev_cov(u, 0.5, 2.0, seed=seed)
    out.append(SuiteLine(
        "association.nonnegative", assoc.passed and assoc.covariance > 5 * assoc.se,
        f"cov {assoc.covariance:.4g} (se {assoc.se:.2g}, ci [{assoc.ci[0]:.3g}, {assoc.ci[1]:.3g}])",
    ))

    tay = verify_taylor_log()
    out.append(SuiteLine(
        "taylor.cubic_decay", abs(tay.slope - 3.0) <= 0.5 and tay.ratio_spread < 2.0,
        f"slope {tay.slope:.3f}, ratio spread {tay.ratio_spread:.3f}",
    ))

    bad = 0
    for _ in range(n_instances):
        k = int(rng.integers(1, 8))
        bad += not verify_var_bound(rng.random(k), rng.random(k) + 1e-3)
    out.append(SuiteLine("variance.bound", bad == 0, f"{bad} violations in {n_instances} draws"))
    return out
