"""Small, dependency-light statistics kernel.

Tail probabilities of the Student-t and F distributions go through the
regularized incomplete beta function, evaluated with a modified Lentz
continued fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateDesignError, SampleSizeError

_EPS = 1e-16
_TINY = 1e-300


def _betacf(a, b, x, max_iter=20000):
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc(a, b, x):
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a > 0 and b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # the continued fraction converges fast on this side of the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t, df):
    """P(|T| >= |t|) for Student-t with ``df`` degrees of freedom."""
    if math.isnan(t):
        return float("nan")
    if math.isinf(t):
        return 0.0
    return min(1.0, betainc(0.5 * df, 0.5, df / (df + t * t)))


def f_sf(f, dfn, dfd):
    """P(F >= f) for the F distribution."""
    if f <= 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return min(1.0, betainc(0.5 * dfd, 0.5 * dfn, dfd / (dfd + dfn * f)))


# -- regression and tests ----------------------------------------------------


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    slope_se: float
    t: float
    p: float
    n: int
    intercept_se: float = float("nan")

    def row(self):
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "slope_se": self.slope_se,
            "t": self.t,
            "p": self.p,
            "n": self.n,
        }


def _pair(xs, ys):
    x = np.asarray(xs, dtype=float).ravel()
    y = np.asarray(ys, dtype=float).ravel()
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    return x, y


def linear_regression(xs, ys):
    """Ordinary least squares ``y = slope * x + intercept`` with a two-sided slope test."""
    x, y = _pair(xs, ys)
    n = len(x)
    if n < 2:
        raise SampleSizeError("linear regression needs at least 2 points")
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateDesignError("all x values are identical")
    slope = float(dx @ (y - ym)) / sxx
    intercept = float(ym - slope * xm)
    if n < 3:
        return RegressionResult(slope, intercept, float("nan"), float("nan"), float("nan"), n)
    resid = y - (intercept + slope * x)
    sse = float(resid @ resid)
    s2 = sse / (n - 2)
    se = math.sqrt(s2 / sxx)
    intercept_se = math.sqrt(s2 * (1.0 / n + xm * xm / sxx))
    if se == 0.0:
        # exact fit: a zero slope carries no evidence, any other slope is certain
        t, p = (0.0, 1.0) if slope == 0.0 else (math.copysign(math.inf, slope), 0.0)
    else:
        t = slope / se
        p = t_sf_two_sided(t, n - 2)
    return RegressionResult(slope, intercept, se, t, p, n, intercept_se)


def pearson(xs, ys):
    """Sample correlation and its two-sided p value (t test with n - 2 df)."""
    x, y = _pair(xs, ys)
    n = len(x)
    if n < 3:
        raise SampleSizeError("pearson needs at least 3 points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateDesignError("zero variance input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return r, t_sf_two_sided(t, n - 2)


class TTest(NamedTuple):
    t: float
    p: float
    df: int
    mean: float
    se: float


def t_test_one_sample(xs, mu0=0.0):
    """Two-sided one-sample t test of the mean against ``mu0``."""
    x = np.asarray(xs, dtype=float).ravel()
    n = len(x)
    if n < 2:
        raise SampleSizeError("one-sample t test needs at least 2 values")
    mean = float(x.mean())
    se = float(x.std(ddof=1)) / math.sqrt(n)
    if se == 0.0:
        if mean == mu0:
            return TTest(0.0, 1.0, n - 1, mean, se)
        return TTest(math.copysign(math.inf, mean - mu0), 0.0, n - 1, mean, se)
    t = (mean - mu0) / se
    return TTest(t, t_sf_two_sided(t, n - 1), n - 1, mean, se)


def t_test_two_sample(a, b):
    """Pooled-variance two-sample t test."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise SampleSizeError("two-sample t test needs at least 2 values per group")
    df = na + nb - 2
    pooled = (((a - a.mean()) ** 2).sum() + ((b - b.mean()) ** 2).sum()) / df
    diff = float(a.mean() - b.mean())
    se = math.sqrt(pooled * (1.0 / na + 1.0 / nb))
    if se == 0.0:
        if diff == 0.0:
            return TTest(0.0, 1.0, df, diff, se)
        return TTest(math.copysign(math.inf, diff), 0.0, df, diff, se)
    t = diff / se
    return TTest(t, t_sf_two_sided(t, df), df, diff, se)


class Anova(NamedTuple):
    F: float
    p: float
    df_between: int
    df_within: int


def anova_oneway(groups):
    """One-way ANOVA across ``groups`` (each an iterable of numbers)."""
    groups = [np.asarray(g, dtype=float).ravel() for g in groups]
    k = len(groups)
    if k < 2:
        raise DegenerateDesignError("ANOVA needs at least 2 groups")
    if any(len(g) < 2 for g in groups):
        raise SampleSizeError("every ANOVA group needs at least 2 values")
    n = sum(len(g) for g in groups)
    grand = np.concatenate(groups).mean()
    ss_between = float(sum(len(g) * (g.mean() - grand) ** 2 for g in groups))
    ss_within = float(sum(((g - g.mean()) ** 2).sum() for g in groups))
    dfb, dfw = k - 1, n - k
    ms_between, ms_within = ss_between / dfb, ss_within / dfw
    if ms_between == 0.0:
        return Anova(0.0, 1.0, dfb, dfw)
    if ms_within == 0.0:
        return Anova(math.inf, 0.0, dfb, dfw)
    F = ms_between / ms_within
    return Anova(F, f_sf(F, dfb, dfw), dfb, dfw)


def bonferroni(alpha, k):
    """Per-test significance level for ``k`` simultaneous tests."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return alpha / k


# -- PCA ---------------------------------------------------------------------


@dataclass(frozen=True)
class PcaResult:
    components: np.ndarray  # (k, D), rows are unit directions
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    scores: np.ndarray  # (T, k)
    mean: np.ndarray


def pca(matrix):
    """Principal components of a ``(T, D)`` observation matrix.

    Components are sorted by decreasing variance and signed so that each
    one's largest-magnitude loading is positive.
    """
    X = np.asarray(matrix, dtype=float)
    if X.ndim != 2:
        raise ValueError("pca expects a 2-D (observations x features) matrix")
    T, D = X.shape
    if T < 2 or D < 1:
        raise SampleSizeError("pca needs at least 2 observations and 1 feature")
    if not np.all(np.isfinite(X)):
        raise ValueError("pca input contains non-finite values")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (T - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T
    for i, c in enumerate(comps):
        if c[np.argmax(np.abs(c))] < 0:
            comps[i] = -c
    total = evals.sum()
    ratio = evals / total if total > 0 else np.zeros_like(evals)
    return PcaResult(comps, evals, ratio, Xc @ comps.T, mean)
