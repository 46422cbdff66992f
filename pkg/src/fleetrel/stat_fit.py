"""Estimators and descriptive statistics used across the analyses.

All fits are closed-form or deterministic Newton iterations; nothing here
draws random numbers.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_fraction, check_positive, check_samples, nearest_rank
from .exceptions import ConvergenceError, FleetrelError


class _FitResult:
    def to_dict(self):
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# binomial confidence interval


def binomial_ci(k, n, level=0.95):
    """Clopper-Pearson exact interval for a binomial proportion.

    Returns ``(low, high)`` with ``low <= k/n <= high``; ``low`` is 0 when
    ``k == 0`` and ``high`` is 1 when ``k == n``.
    """
    if n < 1:
        raise FleetrelError(f"binomial_ci: n must be >= 1, got {n}")
    if k < 0 or k > n:
        raise FleetrelError(f"binomial_ci: need 0 <= k <= n, got k={k}, n={n}")
    if not 0 < level < 1:
        raise FleetrelError("level must lie in (0, 1)")
    alpha = 1.0 - level
    low = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2, k, n - k + 1))
    high = 1.0 if k == n else float(stats.beta.ppf(1 - alpha / 2, k + 1, n - k))
    # clamp float fuzz so the point estimate is always inside
    p = k / n
    return min(low, p), max(high, p)


# ---------------------------------------------------------------------------
# bucketing


@dataclass
class BucketedSeries(_FitResult):
    """Failure rate per rounded bucket, with 95% Clopper-Pearson intervals."""

    centers: list
    counts: list
    failures: list
    rates: list
    ci_low: list
    ci_high: list

    def __len__(self):
        return len(self.centers)

    def to_rows(self):
        return [
            {"bucket_x": x, "n": n, "rate": r, "ci_low": lo, "ci_high": hi}
            for x, n, r, lo, hi in zip(self.centers, self.counts, self.rates, self.ci_low, self.ci_high)
        ]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bucket_x", "n", "rate", "ci_low", "ci_high"])
            for row in self.to_rows():
                writer.writerow([f"{row['bucket_x']:.10g}", row["n"], f"{row['rate']:.6f}",
                                 f"{row['ci_low']:.6f}", f"{row['ci_high']:.6f}"])


def bucket_series(samples, bucket_width, min_frac=0.001, level=0.95):
    """Bucket ``(x, failed)`` samples and compute per-bucket failure rates.

    Each ``x`` is rounded half-up to the nearest multiple of ``bucket_width``;
    buckets holding fewer than ``min_frac`` of all samples are dropped.
    """
    pairs = list(samples)
    if not pairs:
        raise FleetrelError("bucket_series: empty samples")
    check_positive(bucket_width, "bucket_width")
    check_fraction(min_frac, "min_frac", closed_right=False)
    x = check_samples([p[0] for p in pairs], name="x")
    failed = np.asarray([bool(p[1]) for p in pairs])
    idx = np.floor(x / bucket_width + 0.5).astype(np.int64)
    keys, inverse = np.unique(idx, return_inverse=True)
    n = np.bincount(inverse)
    k = np.bincount(inverse, weights=failed.astype(float)).astype(int)
    keep = n / len(pairs) >= min_frac
    out = BucketedSeries([], [], [], [], [], [])
    for key, nn, kk in zip(keys[keep], n[keep], k[keep]):
        lo, hi = binomial_ci(int(kk), int(nn), level)
        out.centers.append(float(key * bucket_width))
        out.counts.append(int(nn))
        out.failures.append(int(kk))
        out.rates.append(kk / nn)
        out.ci_low.append(lo)
        out.ci_high.append(hi)
    return out


class FailureRateBucketer(BaseEstimator):
    """Estimator wrapper for :func:`bucket_series`; ``fit(x, failed)``."""

    def __init__(self, bucket_width=1.0, min_frac=0.001, level=0.95):
        self.bucket_width = bucket_width
        self.min_frac = min_frac
        self.level = level

    def fit(self, X, y):
        x = check_samples(X, name="X")
        y = np.asarray(y)
        if y.shape != x.shape:
            raise FleetrelError("X and y must have the same length")
        self.series_ = bucket_series(zip(x, y), self.bucket_width, self.min_frac, self.level)
        return self

    def transform(self, X):
        """Map ``X`` to the failure rate of its bucket (NaN if the bucket was dropped)."""
        check_is_fitted(self, "series_")
        x = check_samples(X, name="X")
        lookup = dict(zip(self.series_.centers, self.series_.rates))
        centers = np.floor(x / self.bucket_width + 0.5) * self.bucket_width
        return np.array([lookup.get(float(c), np.nan) for c in centers])


# ---------------------------------------------------------------------------
# Pareto / power law


@dataclass(frozen=True)
class FittedPareto(_FitResult):
    alpha: float
    x_min: float
    log_likelihood: float
    n: int

    def hazard(self, x):
        """Hazard rate ``alpha / x`` for ``x >= x_min`` (decreasing in ``x``)."""
        x = np.asarray(x, dtype=float)
        return np.where(x >= self.x_min, self.alpha / x, np.nan)

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= self.x_min, (self.x_min / x) ** self.alpha, 1.0)


def fit_pareto(samples, x_min=None, min_samples=10):
    """Maximum-likelihood Pareto tail fit, ``alpha = n / sum(ln(x / x_min))``.

    ``x_min`` defaults to the sample minimum; samples below an explicit
    ``x_min`` are excluded from the tail.
    """
    x = check_samples(samples, name="samples")
    if np.any(x <= 0):
        raise FleetrelError("fit_pareto: samples must be strictly positive")
    if x_min is None:
        x_min = float(x.min())
    check_positive(x_min, "x_min")
    tail = x[x >= x_min]
    if tail.size < min_samples:
        raise FleetrelError(f"fit_pareto: need at least {min_samples} samples >= x_min, got {tail.size}")
    log_spread = float(np.sum(np.log(tail / x_min)))
    if log_spread <= 0:
        raise FleetrelError("fit_pareto: degenerate sample (zero log-spread)")
    n = tail.size
    alpha = n / log_spread
    ll = n * math.log(alpha) + n * alpha * math.log(x_min) - (alpha + 1) * float(np.sum(np.log(tail)))
    return FittedPareto(alpha=alpha, x_min=float(x_min), log_likelihood=ll, n=int(n))


def fit_power_law_exponent(counts, x_min=None, min_samples=10):
    """Continuous power-law exponent ``-(1 + n / sum(ln(x / x_min)))``.

    Reported negative, so Pareto(alpha) data gives ``-(alpha + 1)``.
    """
    fit = fit_pareto(counts, x_min=x_min, min_samples=min_samples)
    return -(1.0 + fit.alpha)


class ParetoDistribution(BaseEstimator):
    """Pareto tail estimator; fitted attributes ``alpha_``, ``x_min_``, ``log_likelihood_``."""

    def __init__(self, x_min=None, min_samples=10):
        self.x_min = x_min
        self.min_samples = min_samples

    def fit(self, X, y=None):
        res = fit_pareto(X, self.x_min, self.min_samples)
        self.alpha_, self.x_min_, self.log_likelihood_ = res.alpha, res.x_min, res.log_likelihood
        self.result_ = res
        return self

    @property
    def power_law_exponent_(self):
        check_is_fitted(self, "alpha_")
        return -(1.0 + self.alpha_)

    def hazard(self, x):
        check_is_fitted(self, "result_")
        return self.result_.hazard(x)

    def score(self, X, y=None):
        """Mean log-likelihood of ``X`` under the fitted tail."""
        check_is_fitted(self, "alpha_")
        x = check_samples(X, positive=True)
        x = x[x >= self.x_min_]
        return float(np.mean(np.log(self.alpha_) + self.alpha_ * np.log(self.x_min_) - (self.alpha_ + 1) * np.log(x)))


# ---------------------------------------------------------------------------
# Weibull


@dataclass(frozen=True)
class FittedWeibull(_FitResult):
    shape: float
    scale: float
    iterations: int = 0


def _weibull_shape_eq(k, lx):
    """Profile score of the shape and its derivative on log-samples ``lx``."""
    z = k * lx
    w = np.exp(z - z.max())
    s0 = w.sum()
    m1 = float(np.dot(w, lx) / s0)
    m2 = float(np.dot(w, lx * lx) / s0)
    g = m1 - 1.0 / k - float(lx.mean())
    dg = (m2 - m1 * m1) + 1.0 / (k * k)
    return g, dg


def fit_weibull(samples, tol=1e-9, max_iter=100):
    """Two-parameter Weibull MLE by damped Newton iteration on the shape equation.

    Raises
    ------
    ConvergenceError
        If the shape iterate fails to settle within ``max_iter`` steps; the
        exception's ``trace`` lists the iterates.
    """
    x = check_samples(samples, name="samples", min_samples=10, positive=True)
    lx = np.log(x)
    center = float(lx.mean())
    lx = lx - center  # scale-free; restored below
    sd = float(lx.std())
    if sd == 0:
        raise FleetrelError("fit_weibull: constant samples")
    k = math.pi / (math.sqrt(6.0) * sd)
    trace = [k]
    g, dg = _weibull_shape_eq(k, lx)
    for it in range(1, max_iter + 1):
        step = g / dg
        t = 1.0
        while True:
            k_new = k - t * step
            if k_new > 0:
                g_new, dg_new = _weibull_shape_eq(k_new, lx)
                if abs(g_new) <= abs(g) or t < 1e-6:
                    break
            t *= 0.5
            if t < 1e-12:
                raise ConvergenceError("fit_weibull: line search failed", trace)
        trace.append(k_new)
        converged = abs(k_new - k) <= tol * max(1.0, k_new)
        k, g, dg = k_new, g_new, dg_new
        if converged:
            z = k * lx
            zmax = z.max()
            log_mean = zmax + math.log(float(np.mean(np.exp(z - zmax))))
            scale = math.exp(center + log_mean / k)
            return FittedWeibull(shape=k, scale=scale, iterations=it)
    raise ConvergenceError(f"fit_weibull: no convergence in {max_iter} iterations", trace)


class WeibullDistribution(BaseEstimator):
    """Weibull estimator; fitted attributes ``shape_`` and ``scale_``."""

    def __init__(self, tol=1e-9, max_iter=100):
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        res = fit_weibull(X, self.tol, self.max_iter)
        self.shape_, self.scale_, self.n_iter_ = res.shape, res.scale, res.iterations
        return self

    def sf(self, x):
        check_is_fitted(self, "shape_")
        return np.exp(-((np.asarray(x, dtype=float) / self.scale_) ** self.shape_))


# ---------------------------------------------------------------------------
# exponential percentile curves


@dataclass(frozen=True)
class ExponentialCurve(_FitResult):
    """``y(p) = a * exp(b * p)`` on ``0 <= p <= 1``."""

    a: float
    b: float
    r2: float

    def __call__(self, p):
        return self.a * np.exp(self.b * np.asarray(p, dtype=float))


def fit_exponential_percentile(points):
    """Least squares fit of ``ln y = ln a + b p``.

    Parameters
    ----------
    points : iterable of (p, y)
        At least three points with ``0 <= p <= 1`` and ``y > 0``.

    Returns
    -------
    ExponentialCurve
        ``r2`` is the coefficient of determination of the log-linear fit; a
        constant ``y`` (zero variance) is reported as ``r2 = 1``.
    """
    pts = sorted((float(p), float(y)) for p, y in points)
    if len(pts) < 3:
        raise FleetrelError(f"fit_exponential_percentile: need at least 3 points, got {len(pts)}")
    p = np.array([q for q, _ in pts])
    y = np.array([v for _, v in pts])
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(y))):
        raise FleetrelError("fit_exponential_percentile: non-finite input")
    if np.any(y <= 0):
        raise FleetrelError("fit_exponential_percentile: y must be > 0")
    if np.any((p < 0) | (p > 1)):
        raise FleetrelError("fit_exponential_percentile: p must lie in [0, 1]")
    ly = np.log(y)
    pc = p - p.mean()
    sxx = float(np.dot(pc, pc))
    if sxx == 0:
        raise FleetrelError("fit_exponential_percentile: all p identical")
    b = float(np.dot(pc, ly - ly.mean()) / sxx)
    ln_a = float(ly.mean() - b * p.mean())
    resid = ly - (ln_a + b * p)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.dot(resid, resid))
    if ss_tot <= 1e-300:
        r2 = 1.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    if abs(b) < 1e-15:
        b = 0.0
    return ExponentialCurve(a=math.exp(ln_a), b=b, r2=r2)


class ExponentialPercentileModel(BaseEstimator, RegressorMixin):
    """``fit(p, y)`` / ``predict(p)`` wrapper of :func:`fit_exponential_percentile`."""

    def fit(self, X, y):
        p = check_samples(X, name="p")
        y = check_samples(y, name="y")
        self.curve_ = fit_exponential_percentile(zip(p, y))
        self.a_, self.b_, self.r2_ = self.curve_.a, self.curve_.b, self.curve_.r2
        return self

    def predict(self, X):
        check_is_fitted(self, "curve_")
        return self.curve_(check_samples(X, name="p"))


# ---------------------------------------------------------------------------
# skew


@dataclass(frozen=True)
class SkewSummary:
    mean: float
    median: float
    ratio: float
    sorted_desc: tuple

    def top_share(self, f):
        """Fraction of the total held by the top ``f`` fraction of entities."""
        if not 0 < f <= 1:
            raise FleetrelError("top_share fraction must lie in (0, 1]")
        n = len(self.sorted_desc)
        k = max(1, math.ceil(f * n - 1e-9))
        total = float(sum(self.sorted_desc))
        if total == 0:
            return 0.0
        return float(sum(self.sorted_desc[:k])) / total


def skew_summary(counts):
    """Mean, nearest-rank median, their ratio and a top-share accessor."""
    x = check_samples(counts, name="counts")
    if np.any(x < 0):
        raise FleetrelError("counts must be non-negative")
    asc = np.sort(x)
    median = float(nearest_rank(asc, 0.5))
    mean = float(x.mean())
    ratio = mean / median if median > 0 else math.inf
    return SkewSummary(mean=mean, median=median, ratio=ratio, sorted_desc=tuple(asc[::-1].tolist()))
