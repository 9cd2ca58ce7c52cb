"""Finite-size-scaling toolkit for Binder-ratio curves.

Pure numerical post-processing: interpolate R(x, L) curves (x is the
tuning parameter, p or J), locate crossings of pairs of sizes, fit a
scaling collapse R = f((x - x_c) L^{1/nu}) for (x_c, nu), and extract
nu from the growth of slopes at the critical point.  All uncertainties
are parametric bootstraps (points resampled within their error bars);
all randomness is seeded from the input data so results are
reproducible and argument-order independent.
"""
from __future__ import annotations

import dataclasses
import hashlib
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.interpolate import LSQUnivariateSpline
from scipy.optimize import minimize

__all__ = [
    "RatioCurve",
    "PolynomialFit",
    "CrossingResult",
    "CollapseFit",
    "SlopeScalingFit",
    "fit_curve",
    "find_crossing",
    "collapse_quality",
    "collapse_fit",
    "nu_from_slopes",
    "crossing_pairs",
    "curves_from_summaries",
    "analysis_payload",
    "ANALYSIS_SCHEMA",
]

ANALYSIS_SCHEMA = "renyiqmc-analysis/1"


# ------------------------------------------------------------------- curves
@dataclass(frozen=True)
class RatioCurve:
    """One system size's ratio curve: points (x, R, sigma), x increasing."""

    L: int
    points: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        if self.L < 1:
            raise ValueError(f"system size must be >= 1, got {self.L}")
        if not self.points:
            raise ValueError("curve has no points")
        xs = [p[0] for p in self.points]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("x values must be strictly increasing")
        if any(p[2] <= 0 for p in self.points):
            raise ValueError("every point needs sigma > 0")
        object.__setattr__(self, "points",
                           tuple((float(x), float(r), float(s))
                                 for x, r, s in self.points))

    @property
    def xs(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def rs(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])

    @property
    def x_range(self) -> tuple[float, float]:
        return self.points[0][0], self.points[-1][0]

    def to_dict(self) -> dict:
        return {"L": self.L, "points": [list(p) for p in self.points]}

    @classmethod
    def from_dict(cls, d: dict) -> "RatioCurve":
        return cls(L=int(d["L"]),
                   points=tuple(tuple(p) for p in d["points"]))


def _data_seed(*curves: RatioCurve, salt: int = 0) -> int:
    """Deterministic RNG seed from curve content, order-independent."""
    digests = sorted(
        hashlib.blake2b(
            repr((c.L, c.points)).encode(), digest_size=8).hexdigest()
        for c in curves)
    h = hashlib.blake2b(("|".join(digests) + f"#{salt}").encode(),
                        digest_size=8)
    return int.from_bytes(h.digest(), "little")


# -------------------------------------------------------------- polynomial fit
@dataclass(frozen=True)
class PolynomialFit:
    """Weighted least-squares polynomial on a scaled abscissa.

    Evaluable with propagated error; the covariance is the unscaled
    inverse normal matrix (the input sigmas are taken at face value).
    """

    coefficients: np.ndarray  # ascending powers of the scaled variable t
    covariance: np.ndarray
    x_min: float
    x_max: float
    chi2_dof: float

    def _t(self, x):
        return (2.0 * np.asarray(x, dtype=float) - (self.x_min + self.x_max)) \
            / (self.x_max - self.x_min)

    def _basis(self, x) -> np.ndarray:
        t = np.atleast_1d(self._t(x))
        return np.vander(t, len(self.coefficients), increasing=True)

    def __call__(self, x):
        v = self._basis(x) @ self.coefficients
        return v if np.ndim(x) else float(v[0])

    def stderr(self, x):
        basis = self._basis(x)
        var = np.einsum("ij,jk,ik->i", basis, self.covariance, basis)
        out = np.sqrt(np.maximum(var, 0.0))
        return out if np.ndim(x) else float(out[0])

    def _derivative_basis(self, x) -> np.ndarray:
        # d/dt sum_k c_k t^k  has basis  k t^(k-1)
        t = np.atleast_1d(self._t(x))
        basis = np.zeros((t.size, len(self.coefficients)))
        for k in range(1, len(self.coefficients)):
            basis[:, k] = k * t ** (k - 1)
        return basis

    def derivative(self, x):
        dt_dx = 2.0 / (self.x_max - self.x_min)
        v = (self._derivative_basis(x) @ self.coefficients) * dt_dx
        return v if np.ndim(x) else float(v[0])

    def derivative_stderr(self, x):
        basis = self._derivative_basis(x)
        dt_dx = 2.0 / (self.x_max - self.x_min)
        var = np.einsum("ij,jk,ik->i", basis, self.covariance, basis)
        out = np.sqrt(np.maximum(var, 0.0)) * abs(dt_dx)
        return out if np.ndim(x) else float(out[0])


def fit_curve(curve: RatioCurve, degree: int = 3) -> PolynomialFit:
    """Weighted least-squares polynomial interpolant of one ratio curve.

    Needs at least degree+2 points.  Warns (without failing) when the
    data are monotone but the fitted polynomial is not monotone on the
    data interval.  A rank-deficient design matrix is an error.
    """
    if degree < 1:
        raise ValueError(f"degree must be >= 1, got {degree}")
    n = len(curve.points)
    if n < degree + 2:
        raise ValueError(
            f"need >= {degree + 2} points for a degree-{degree} fit, got {n}")
    xs, rs, sig = curve.xs, curve.rs, curve.sigmas
    a, b = float(xs[0]), float(xs[-1])
    t = (2.0 * xs - (a + b)) / (b - a)
    V = np.vander(t, degree + 1, increasing=True)
    w = 1.0 / sig
    Vw = V * w[:, None]
    yw = rs * w
    rank = np.linalg.matrix_rank(Vw)
    if rank < degree + 1:
        raise ValueError(
            f"rank-deficient design matrix (rank {rank} < {degree + 1}); "
            "the x grid cannot support this polynomial degree")
    coef, *_ = np.linalg.lstsq(Vw, yw, rcond=None)
    cov = np.linalg.inv(Vw.T @ Vw)
    resid = (rs - V @ coef) * w
    dof = n - (degree + 1)
    chi2_dof = float(resid @ resid / dof) if dof > 0 else math.nan
    fit = PolynomialFit(coefficients=coef, covariance=cov, x_min=a, x_max=b,
                        chi2_dof=chi2_dof)
    diffs = np.diff(rs)
    if np.all(diffs >= 0) or np.all(diffs <= 0):
        grid = np.linspace(a, b, 257)
        slopes = fit.derivative(grid)
        if np.any(slopes > 1e-12) and np.any(slopes < -1e-12):
            warnings.warn(
                f"L={curve.L}: data are monotone but the degree-{degree} "
                "interpolant is not monotone on the data interval",
                stacklevel=2)
    return fit


# ---------------------------------------------------------------- crossings
@dataclass(frozen=True)
class CrossingResult:
    """Crossing of two sizes' interpolants (or the absence of one)."""

    found: bool
    x: float
    sigma_x: float
    L_a: int
    L_b: int
    window: tuple[float, float]
    n_bootstrap: int
    note: str = ""

    def to_dict(self) -> dict:
        return {"found": self.found, "x": self.x, "sigma_x": self.sigma_x,
                "L_a": self.L_a, "L_b": self.L_b,
                "window": list(self.window),
                "n_bootstrap": self.n_bootstrap, "note": self.note}


def _bisect_root(g, lo: float, hi: float, n_scan: int = 256) -> float | None:
    """First root of g on [lo, hi] by scan + bisection; None if no sign flip."""
    grid = np.linspace(lo, hi, n_scan)
    vals = g(grid)
    sign = np.sign(vals)
    zero_hits = np.nonzero(sign == 0)[0]
    flips = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
    first_zero = grid[zero_hits[0]] if zero_hits.size else math.inf
    if flips.size == 0:
        return None if not zero_hits.size else float(first_zero)
    a, b = float(grid[flips[0]]), float(grid[flips[0] + 1])
    if first_zero < a:
        return float(first_zero)
    fa = float(g(np.array([a]))[0])
    for _ in range(200):
        m = 0.5 * (a + b)
        fm = float(g(np.array([m]))[0])
        if fm == 0.0 or (b - a) < 1e-14 * max(1.0, abs(m)):
            return m
        if (fa < 0) == (fm < 0):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


def _canonical_pair(a: RatioCurve, b: RatioCurve) -> tuple[RatioCurve, RatioCurve]:
    key = lambda c: (c.L, c.points)
    return (a, b) if key(a) <= key(b) else (b, a)


def find_crossing(curve_a: RatioCurve, curve_b: RatioCurve, *,
                  degree: int = 3, n_bootstrap: int = 1000,
                  seed: int | None = None) -> CrossingResult:
    """Crossing of two curves' interpolants on their shared x-range.

    The root is found by scan + bisection of (fit_a - fit_b); the error
    is a parametric bootstrap (both curves' points resampled within
    their sigmas, refit, re-rooted).  Exactly symmetric in its two
    arguments.  No sign change yields a "no crossing in window" result,
    not an exception.
    """
    a, b = _canonical_pair(curve_a, curve_b)
    lo = max(a.x_range[0], b.x_range[0])
    hi = min(a.x_range[1], b.x_range[1])
    base = dict(L_a=a.L, L_b=b.L, window=(lo, hi), n_bootstrap=n_bootstrap)
    if not lo < hi:
        return CrossingResult(found=False, x=math.nan, sigma_x=math.nan,
                              note="curves share no x-range", **base)
    deg = min(degree, len(a.points) - 2, len(b.points) - 2)
    if deg < 1:
        raise ValueError("curves too short to interpolate (need >= 3 points)")
    fa, fb = fit_curve(a, deg), fit_curve(b, deg)
    root = _bisect_root(lambda x: fa(x) - fb(x), lo, hi)
    if root is None:
        return CrossingResult(found=False, x=math.nan, sigma_x=math.nan,
                              note="no crossing in window", **base)
    rng = np.random.default_rng(_data_seed(a, b, salt=seed or 0))
    hits = []
    for _ in range(n_bootstrap):
        ra = a.rs + a.sigmas * rng.standard_normal(len(a.points))
        rb = b.rs + b.sigmas * rng.standard_normal(len(b.points))
        ca = RatioCurve(a.L, tuple(zip(a.xs, ra, a.sigmas)))
        cb = RatioCurve(b.L, tuple(zip(b.xs, rb, b.sigmas)))
        ga, gb = fit_curve(ca, deg), fit_curve(cb, deg)
        r = _bisect_root(lambda x: ga(x) - gb(x), lo, hi)
        if r is not None:
            hits.append(r)
    note = ""
    if n_bootstrap and len(hits) < n_bootstrap:
        note = (f"bootstrap crossing rate "
                f"{len(hits) / n_bootstrap:.2f}")
    sigma = float(np.std(hits)) if len(hits) >= 2 else math.nan
    return CrossingResult(found=True, x=float(root), sigma_x=sigma,
                          note=note, **base)


def crossing_pairs(sizes: Sequence[int], factor: int = 2) -> list[tuple[int, int]]:
    """Default crossing pairs (L, factor*L) among the sizes present."""
    have = sorted(set(int(s) for s in sizes))
    return [(L, factor * L) for L in have if factor * L in have]


# ----------------------------------------------------------------- collapse
@dataclass(frozen=True)
class CollapseFit:
    """Scaling-collapse fit result.

    quality is scale-free: the square root of (weighted mean squared
    master-curve residual) / (weighted variance of all R values), so 0
    is a perfect collapse and ~1 is no collapse at all; it is invariant
    under curve relabeling and under rescaling all sigmas by a common
    factor.
    """

    x_c: float
    nu: float
    quality: float
    bootstrap_errors: tuple[float, float]
    converged: bool
    n_bootstrap: int

    def to_dict(self) -> dict:
        return {"x_c": self.x_c, "nu": self.nu, "quality": self.quality,
                "bootstrap_errors": list(self.bootstrap_errors),
                "converged": self.converged, "n_bootstrap": self.n_bootstrap}


def _pool(curves: Sequence[RatioCurve]):
    xs = np.concatenate([c.xs for c in curves])
    rs = np.concatenate([c.rs for c in curves])
    sig = np.concatenate([c.sigmas for c in curves])
    ls = np.concatenate([np.full(len(c.points), float(c.L)) for c in curves])
    # Canonical order: float reductions are not associative, so sorting
    # here makes every downstream result independent of curve labeling.
    order = np.lexsort((rs, sig, ls, xs))
    return xs[order], rs[order], sig[order], ls[order]


def _size_balanced_knots(u: np.ndarray, ls: np.ndarray, n_knots: int) -> np.ndarray:
    """Interior knots at quantiles of u averaged across system sizes."""
    if n_knots < 1:
        return np.empty(0)
    qs = np.linspace(0.0, 1.0, n_knots + 2)[1:-1]
    per_size = [np.quantile(u[ls == L], qs) for L in np.unique(ls)]
    t = np.mean(per_size, axis=0)
    lo, hi = float(u.min()), float(u.max())
    span = hi - lo
    if span <= 0:
        return np.empty(0)
    t = np.clip(t, lo + 1e-6 * span, hi - 1e-6 * span)
    return np.unique(t)


def _master_residuals(params, xs, rs, sig, ls, n_knots):
    """(chi2_per_point, weighted mean squared residual) of the master fit."""
    x_c, nu = params
    if not (math.isfinite(x_c) and math.isfinite(nu)) or \
            not 0.05 <= nu <= 50.0:
        return math.inf, math.inf
    u = (xs - x_c) * ls ** (1.0 / nu)
    order = np.argsort(u, kind="stable")
    us, rs_s, sig_s, ls_s = u[order], rs[order], sig[order], ls[order]
    for i in range(1, len(us)):  # spline abscissae must strictly increase
        if us[i] <= us[i - 1]:
            us[i] = np.nextafter(us[i - 1], math.inf)
    t = _size_balanced_knots(us, ls_s, n_knots)
    while True:
        try:
            spl = LSQUnivariateSpline(us, rs_s, t, w=1.0 / sig_s, k=3)
            break
        except ValueError:
            if t.size == 0:
                return math.inf, math.inf
            t = t[1::2] if t.size > 1 else np.empty(0)
    res = rs_s - spl(us)
    wsq = 1.0 / sig_s ** 2
    chi2 = float(np.mean((res / sig_s) ** 2))
    wms = float(np.sum(res ** 2 * wsq) / np.sum(wsq))
    return chi2, wms


def collapse_quality(curves: Sequence[RatioCurve], x_c: float, nu: float, *,
                     n_knots: int = 4) -> float:
    """Scale-free collapse quality at the given (x_c, nu).

    sqrt(weighted mean squared master-curve residual / weighted variance
    of all R values): 0 for a perfect collapse, ~1 for no collapse.
    """
    xs, rs, sig, ls = _pool(curves)
    _, wms = _master_residuals((x_c, nu), xs, rs, sig, ls, n_knots)
    wsq = 1.0 / sig ** 2
    rbar = float(np.sum(rs * wsq) / np.sum(wsq))
    wvar = float(np.sum((rs - rbar) ** 2 * wsq) / np.sum(wsq))
    return math.sqrt(wms / wvar) if wvar > 0 else math.inf


def collapse_fit(curves: Sequence[RatioCurve], x_c_init: float,
                 nu_init: float, *, n_knots: int = 4, n_restarts: int = 10,
                 n_bootstrap: int = 200, max_iter: int = 4000,
                 seed: int | None = None) -> CollapseFit:
    """Fit (x_c, nu) so that all curves collapse onto one master curve.

    Maps each point to u = (x - x_c) L^{1/nu}, fits one cubic spline
    (interior knots at size-balanced quantiles of u) to the pooled
    points, and minimizes the error-normalized mean squared residual by
    Nelder-Mead from the given initial guess plus ``n_restarts`` random
    restarts.  Errors are a parametric bootstrap over point resampling.
    Needs at least 3 distinct system sizes.
    """
    sizes = sorted({c.L for c in curves})
    if len(sizes) < 3:
        raise ValueError(
            f"collapse fit needs >= 3 distinct system sizes, got {sizes}: "
            "(x_c, nu) is under-determined")
    if nu_init <= 0:
        raise ValueError(f"nu_init must be positive, got {nu_init}")
    xs, rs, sig, ls = _pool(curves)
    span = float(xs.max() - xs.min())

    def objective(params):
        return _master_residuals(params, xs, rs, sig, ls, n_knots)[0]

    rng = np.random.default_rng(_data_seed(*curves, salt=(seed or 0) + 1))
    starts = [(float(x_c_init), float(nu_init))]
    for _ in range(n_restarts):
        starts.append((x_c_init + span * rng.uniform(-0.2, 0.2),
                       nu_init * math.exp(rng.uniform(-0.5, 0.5))))
    best = None
    best_ok = False
    for start in starts:
        res = minimize(objective, start, method="Nelder-Mead",
                       options={"xatol": 1e-6, "fatol": 1e-12,
                                "maxiter": max_iter, "maxfev": max_iter})
        if best is None or res.fun < best.fun:
            best, best_ok = res, bool(res.success)
    if not best_ok:
        warnings.warn("collapse fit did not converge within the iteration "
                      "budget; reporting the best point found", stacklevel=2)
    x_c, nu = float(best.x[0]), float(best.x[1])
    quality = collapse_quality(curves, x_c, nu, n_knots=n_knots)

    boots = []
    for _ in range(n_bootstrap):
        rs_b = rs + sig * rng.standard_normal(rs.size)
        res_b = minimize(
            lambda q: _master_residuals(q, xs, rs_b, sig, ls, n_knots)[0],
            (x_c, nu), method="Nelder-Mead",
            options={"xatol": 1e-5, "fatol": 1e-10, "maxiter": max_iter // 2})
        boots.append(res_b.x)
    if len(boots) >= 2:
        arr = np.asarray(boots)
        errors = (float(np.std(arr[:, 0])), float(np.std(arr[:, 1])))
    else:
        errors = (math.nan, math.nan)
    return CollapseFit(x_c=x_c, nu=nu, quality=quality,
                       bootstrap_errors=errors, converged=best_ok,
                       n_bootstrap=n_bootstrap)


# ------------------------------------------------------------ slope scaling
@dataclass(frozen=True)
class SlopeScalingFit:
    """nu from the finite-size growth of dR/dx at the critical point."""

    nu: float
    sigma_nu: float
    slopes: tuple[tuple[int, float, float], ...]  # (L, slope, sigma_slope)

    def to_dict(self) -> dict:
        return {"nu": self.nu, "sigma_nu": self.sigma_nu,
                "slopes": [list(s) for s in self.slopes]}


def nu_from_slopes(curves: Sequence[RatioCurve], x_c: float, *,
                   degree: int = 3) -> SlopeScalingFit:
    """Log-log fit of interpolant slopes at x_c versus L: slope ~ L^{1/nu}.

    Sizes whose slope at x_c is non-positive are excluded with a
    warning.  With exactly two usable sizes the fit has zero degrees of
    freedom and sigma_nu is reported as nan.
    """
    for c in curves:
        lo, hi = c.x_range
        if not lo <= x_c <= hi:
            raise ValueError(
                f"x_c={x_c} outside the x-range [{lo}, {hi}] of L={c.L}")
    rows = []
    for c in sorted(curves, key=lambda c: c.L):
        deg = min(degree, len(c.points) - 2)
        if deg < 1:
            raise ValueError(f"L={c.L}: too few points to interpolate")
        fit = fit_curve(c, deg)
        s = fit.derivative(x_c)
        ds = fit.derivative_stderr(x_c)
        if s <= 0:
            warnings.warn(f"L={c.L}: non-positive slope {s:.3g} at x_c; "
                          "excluded from the slope fit", stacklevel=2)
            continue
        rows.append((c.L, float(s), float(ds)))
    if len(rows) < 2:
        raise ValueError(
            f"need >= 2 sizes with positive slope at x_c, got {len(rows)}")
    logL = np.log([r[0] for r in rows])
    logS = np.log([r[1] for r in rows])
    sigma_logS = np.array([max(r[2] / r[1], 1e-12) for r in rows])
    w = 1.0 / sigma_logS ** 2
    X = np.column_stack([logL, np.ones_like(logL)])
    XtW = X.T * w
    cov = np.linalg.inv(XtW @ X)
    beta = cov @ (XtW @ logS)
    m = float(beta[0])
    dof = len(rows) - 2
    sigma_m = math.sqrt(float(cov[0, 0])) if dof > 0 else math.nan
    if m <= 0:
        raise ValueError(f"slope exponent {m:.3g} <= 0; no scaling growth")
    return SlopeScalingFit(nu=1.0 / m, sigma_nu=sigma_m / m ** 2,
                           slopes=tuple(rows))


# ----------------------------------------------------------------- assembly
def curves_from_summaries(summaries: Sequence[dict], x_key: str,
                          quantity: str = "R2") -> list[RatioCurve]:
    """Build RatioCurves from run-summary dicts.

    x_key is the tuning parameter ("p" or "J"); the linear size is
    max(Lx, Ly).  Repeated (L, x) cells are merged by inverse-variance
    weighting.
    """
    if x_key not in ("p", "J", "beta"):
        raise ValueError(f"unknown tuning parameter {x_key!r}")
    cells: dict[tuple[int, float], list[tuple[float, float]]] = {}
    for s in summaries:
        est = s.get("estimates", {}).get(quantity)
        if est is None:
            raise ValueError(
                f"summary for lattice {s.get('lattice')} params "
                f"{s.get('params')} has no {quantity!r} estimate")
        L = max(int(s["lattice"]["Lx"]), int(s["lattice"]["Ly"]))
        x = float(s["params"][x_key])
        cells.setdefault((L, x), []).append(
            (float(est["value"]), float(est["stderr"])))
    by_size: dict[int, list[tuple[float, float, float]]] = {}
    for (L, x), vals in cells.items():
        w = np.array([1.0 / max(s, 1e-300) ** 2 for _, s in vals])
        v = np.array([v for v, _ in vals])
        mean = float(np.sum(v * w) / np.sum(w))
        sig = float(1.0 / math.sqrt(np.sum(w)))
        by_size.setdefault(L, []).append((x, mean, sig))
    return [RatioCurve(L, tuple(sorted(pts)))
            for L, pts in sorted(by_size.items())]


def analysis_payload(curves: Sequence[RatioCurve],
                     crossings: Sequence[CrossingResult],
                     collapse: CollapseFit | None,
                     slope_fit: SlopeScalingFit | None = None,
                     inputs: dict | None = None) -> dict:
    """Assemble the analysis JSON payload (single source of plot truth)."""
    return {
        "schema": ANALYSIS_SCHEMA,
        "curves": [c.to_dict() for c in curves],
        "crossings": [c.to_dict() for c in crossings],
        "collapse": collapse.to_dict() if collapse is not None else None,
        "nu_from_slopes": slope_fit.to_dict() if slope_fit is not None else None,
        "inputs": dict(inputs or {}),
    }
