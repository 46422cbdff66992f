"""Logistic server-failure model.

The model predicts a *relative* server failure rate, ``F = 1 / (1 + exp(-z))``
with ``z = b0 + sum(b_i * x_i)``.  The rate compares an error group against an
equally sized control group and is only meaningful for comparing designs, never
as an absolute failure probability.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import FleetrelError, SeparationError, SingularDesignError
from .trace_model import ServerDesign

INTERCEPT = "Intercept"
FORMULA_TERMS = ("Capacity", "Density2Gb", "Density4Gb", "Chips", "CPU%", "Age", "CPUs")
EXCLUDED_TERMS = ("Width8", "Memory%")
ALL_TERMS = ("Capacity", "Density2Gb", "Density4Gb", "Chips", "Width8", "CPU%", "Memory%", "Age", "CPUs")

# Published regression table: coefficient, standard error, p-value.
_PUBLISHED_COEFFICIENTS = {
    "Intercept": (-5.511, 3.011e-1, 2e-16),
    "Capacity": (9.012e-2, 2.168e-2, 2e-16),
    "Density2Gb": (1.018, 1.039e-1, 2e-16),
    "Density4Gb": (2.585, 1.907e-1, 2e-16),
    "Chips": (-4.035e-2, 1.294e-2, 2e-16),
    "Width8": (2.310e-1, 1.277e-1, 0.071),
    "CPU%": (1.731e-2, 1.633e-3, 2e-16),
    "Memory%": (5.905e-5, 1.224e-3, 0.962),
    "Age": (2.296e-1, 3.956e-2, 2e-16),
    "CPUs": (2.126e-1, 1.449e-2, 2e-16),
}

SIGNIFICANCE_LEVEL = 0.01


def design_features(design, terms=FORMULA_TERMS):
    """Raw factor vector of a :class:`ServerDesign` in ``terms`` order."""
    values = {
        "Capacity": design.capacity_gb,
        "Density2Gb": 1.0 if design.density == "2Gb" else 0.0,
        "Density4Gb": 1.0 if design.density == "4Gb" else 0.0,
        "Chips": design.chips,
        "Width8": 1.0 if design.transfer_width == "x8" else 0.0,
        "CPU%": design.cpu_util_pct,
        "Memory%": design.mem_util_pct,
        "Age": design.age_years,
        "CPUs": design.cpus,
    }
    return np.array([float(values[t]) for t in terms])


@dataclass(frozen=True)
class LogisticFailureModel:
    """Immutable coefficient bundle.

    ``coefficients`` holds the intercept and every term used for prediction;
    ``annotations`` keeps coefficients that were estimated but are left out of
    the formula (``Width8`` and ``Memory%`` in the published model).
    """

    coefficients: dict
    annotations: dict = field(default_factory=dict)
    stderr: dict = field(default_factory=dict)
    pvalues: dict = field(default_factory=dict)
    name: str = "custom"

    def __post_init__(self):
        for key in (INTERCEPT,) + FORMULA_TERMS + self.terms:
            if key not in self.coefficients:
                raise FleetrelError(f"model is missing coefficient {key!r}")
            if not math.isfinite(self.coefficients[key]):
                raise FleetrelError(f"coefficient {key!r} is not finite")
        for attr in ("coefficients", "annotations", "stderr", "pvalues"):
            object.__setattr__(self, attr, MappingProxyType(dict(getattr(self, attr))))

    @property
    def terms(self):
        """Terms entering the linear predictor, in canonical order."""
        return tuple(t for t in ALL_TERMS if t in self.coefficients)

    @property
    def beta(self):
        return np.array([self.coefficients[INTERCEPT]] + [self.coefficients[t] for t in self.terms])

    def significant(self, level=SIGNIFICANCE_LEVEL):
        return {k: p < level for k, p in self.pvalues.items()}

    def with_excluded_terms(self):
        """Copy of the model that also uses the annotated terms when predicting."""
        coefs = dict(self.coefficients)
        coefs.update(self.annotations)
        return LogisticFailureModel(coefs, {}, self.stderr, self.pvalues, self.name + "+excluded")

    def linear_predictor(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.terms):
            raise FleetrelError(f"expected {len(self.terms)} factors {self.terms}, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise FleetrelError("non-finite factor value")
        beta = self.beta
        return beta[0] + X @ beta[1:]

    def predict_proba(self, X):
        return _logistic(self.linear_predictor(X))

    def to_dict(self):
        return {
            "name": self.name,
            "coefficients": dict(self.coefficients),
            "excluded": dict(self.annotations),
            "standard_errors": dict(self.stderr),
            "p_values": dict(self.pvalues),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                coefficients=d["coefficients"],
                annotations=d.get("excluded", {}),
                stderr=d.get("standard_errors", {}),
                pvalues=d.get("p_values", {}),
                name=d.get("name", "custom"),
            )
        except KeyError as exc:
            raise FleetrelError(f"model JSON lacks {exc.args[0]!r}") from None


def _logistic(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def published_model(name="paper-2015"):
    """Built-in coefficient tables, currently only ``"paper-2015"``."""
    if name != "paper-2015":
        raise FleetrelError(f"unknown built-in model {name!r}; available: ['paper-2015']")
    return LogisticFailureModel(
        coefficients={k: v[0] for k, v in _PUBLISHED_COEFFICIENTS.items() if k not in EXCLUDED_TERMS},
        annotations={k: _PUBLISHED_COEFFICIENTS[k][0] for k in EXCLUDED_TERMS},
        stderr={k: v[1] for k, v in _PUBLISHED_COEFFICIENTS.items()},
        pvalues={k: v[2] for k, v in _PUBLISHED_COEFFICIENTS.items()},
        name=name,
    )


BUILTIN_MODELS = ("paper-2015",)


def predict_relative_rate(model, design):
    """Relative failure rate ``F`` of one design under ``model``."""
    x = design_features(design, model.terms)
    if not np.all(np.isfinite(x)):
        raise FleetrelError("non-finite factor value")
    return float(model.predict_proba(x[None, :])[0])


@dataclass(frozen=True)
class DesignComparison:
    rate_a: float
    rate_b: float
    ratio: float
    percent_reduction: float


def compare_designs(model, a, b, decimals=None):
    """Compare design ``a`` against design ``b``.

    ``ratio`` is ``rate_a / rate_b`` and ``percent_reduction`` is
    ``100 * (rate_a - rate_b) / rate_a``, the saving from moving ``a`` to ``b``.
    With ``decimals`` set, both rates are first rounded to that many places,
    which is how tabulated rates are usually compared.
    """
    ra = predict_relative_rate(model, a)
    rb = predict_relative_rate(model, b)
    if decimals is not None:
        ra, rb = round(ra, decimals), round(rb, decimals)
        if ra <= 0 or rb <= 0:
            raise FleetrelError("rate rounds to zero at the requested precision")
    return DesignComparison(ra, rb, ra / rb, 100.0 * (ra - rb) / ra)


# ---------------------------------------------------------------------------
# fitting


def log_likelihood(beta, X, y):
    """Bernoulli log-likelihood; ``X`` includes the intercept column."""
    z = X @ beta
    return float(np.sum(y * z - np.logaddexp(0.0, z)))


def log_likelihood_grad(beta, X, y):
    return X.T @ (y - _logistic(X @ beta))


def _irls(X, y, tol, max_iter, ridge):
    n, d = X.shape
    if np.linalg.matrix_rank(X) < d:
        raise SingularDesignError("design matrix is rank deficient")
    penalty = ridge * np.eye(d)
    penalty[0, 0] = 0.0  # never shrink the intercept
    beta = np.zeros(d)
    ll = log_likelihood(beta, X, y) - 0.5 * ridge * float(beta[1:] @ beta[1:])
    for it in range(1, max_iter + 1):
        mu = _logistic(X @ beta)
        w = mu * (1 - mu)
        H = X.T @ (X * w[:, None]) + penalty
        g = X.T @ (y - mu) - penalty @ beta
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            raise SeparationError("separation: information matrix became singular") from None
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = log_likelihood(cand, X, y) - 0.5 * ridge * float(cand[1:] @ cand[1:])
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-8:
                break
            t *= 0.5
        delta = float(np.max(np.abs(cand - beta)))
        beta, ll = cand, ll_new
        if ridge == 0 and ll > -1e-6 and np.max(np.abs(beta)) > 10:
            raise SeparationError("separation: labels are perfectly predicted and coefficients diverge")
        if delta <= tol * max(1.0, float(np.max(np.abs(beta)))):
            break
    else:
        raise SeparationError(f"separation: coefficients did not settle in {max_iter} iterations")
    mu = _logistic(X @ beta)
    if ridge == 0 and np.max(np.abs(beta)) > 30 and np.mean((mu < 1e-9) | (mu > 1 - 1e-9)) > 0.5:
        raise SeparationError("separation: fitted probabilities saturate at 0 or 1")
    w = mu * (1 - mu)
    info = X.T @ (X * w[:, None]) + penalty
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise SingularDesignError("observed information matrix is singular") from None
    return beta, np.sqrt(np.diag(cov)), it


class LogisticFailureRegressor(BaseEstimator, ClassifierMixin):
    """Maximum-likelihood logistic regression fitted by IRLS.

    Parameters
    ----------
    include_excluded : bool
        Also fit ``Width8`` and ``Memory%``; ``X`` then has nine columns in
        :data:`ALL_TERMS` order instead of seven in :data:`FORMULA_TERMS` order.
    ridge : float
        Optional L2 penalty on the slopes, off by default.
    tol, max_iter : float, int
        Convergence tolerance on the coefficient update and iteration cap.

    Attributes
    ----------
    model_ : LogisticFailureModel
    coef_, intercept_, stderr_, pvalues_, n_iter_
    """

    def __init__(self, include_excluded=False, ridge=0.0, tol=1e-8, max_iter=200):
        self.include_excluded = include_excluded
        self.ridge = ridge
        self.tol = tol
        self.max_iter = max_iter

    @property
    def terms(self):
        return ALL_TERMS if self.include_excluded else FORMULA_TERMS

    def fit(self, X, y):
        X = check_array(X, dtype=float)
        y = np.asarray(y).astype(float).ravel()
        if X.shape[1] != len(self.terms):
            raise FleetrelError(f"expected {len(self.terms)} columns {self.terms}, got {X.shape[1]}")
        if y.shape[0] != X.shape[0]:
            raise FleetrelError("X and y lengths differ")
        if not np.all((y == 0) | (y == 1)):
            raise FleetrelError("labels must be binary")
        if y.min() == y.max():
            raise FleetrelError("need at least one sample of each label")
        self.classes_ = np.array([False, True])
        Xi = np.column_stack([np.ones(len(X)), X])
        beta, se, it = _irls(Xi, y, self.tol, self.max_iter, self.ridge)
        z = beta / se
        pvals = 2.0 * stats.norm.sf(np.abs(z))
        names = (INTERCEPT,) + self.terms
        self.intercept_ = float(beta[0])
        self.coef_ = beta[1:].copy()
        self.stderr_ = dict(zip(names, se.tolist()))
        self.pvalues_ = dict(zip(names, pvals.tolist()))
        self.significant_ = {k: p < SIGNIFICANCE_LEVEL for k, p in self.pvalues_.items()}
        self.n_iter_ = it
        coefs = dict(zip(names, beta.tolist()))
        self.model_ = LogisticFailureModel(coefs, {}, self.stderr_, self.pvalues_, name="fitted")
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.linear_predictor(check_array(X, dtype=float))

    def predict_proba(self, X):
        p = _logistic(self.decision_function(X))
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return self.predict_proba(X)[:, 1] >= 0.5


@dataclass(frozen=True)
class LogisticFit:
    model: LogisticFailureModel
    stderr: dict
    pvalues: dict
    significant: dict
    n_iter: int


def fit_logistic(samples, tol=1e-8, max_iter=200, include_excluded=False, ridge=0.0):
    """Fit the failure model to ``(ServerDesign, in_error_group)`` pairs."""
    samples = list(samples)
    terms = ALL_TERMS if include_excluded else FORMULA_TERMS
    X = np.array([design_features(d, terms) for d, _ in samples])
    y = np.array([bool(lab) for _, lab in samples], dtype=float)
    est = LogisticFailureRegressor(include_excluded, ridge, tol, max_iter).fit(X, y)
    return LogisticFit(est.model_, est.stderr_, est.pvalues_, est.significant_, est.n_iter_)


def case_study_designs():
    """The four server configurations of the published design trade-off study."""
    return {
        "low-end": ServerDesign(4, "2Gb", 16, cpu_util_pct=50, age_years=1, cpus=8),
        "high-end": ServerDesign(16, "4Gb", 32, cpu_util_pct=25, age_years=1, cpus=16),
        "he-lower-density": ServerDesign(4, "2Gb", 16, cpu_util_pct=25, age_years=1, cpus=16),
        "he-fewer-cpus": ServerDesign(16, "4Gb", 32, cpu_util_pct=50, age_years=1, cpus=8),
    }
