"""Paired t-tests, p-value curves and Discriminative Power.

The Student-t tail probability is computed through the regularized incomplete
beta function, evaluated with a modified Lentz continued fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InsufficientDataError

TINY_P = math.ulp(0.0)
_FPMIN = 1e-300
_EPS = 1e-16
_MAX_TERMS = 100_000


def _betacf(a, b, x):
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_TERMS):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"continued fraction did not converge (a={a}, b={b}, x={x})")


def _stirling_tail(z):
    # lgamma(z) - [(z - 0.5) ln z - z + 0.5 ln(2 pi)], accurate to ~1e-17 for z >= 20
    w = 1.0 / (z * z)
    return (1 / 12 - w * (1 / 360 - w * (1 / 1260 - w * (1 / 1680 - w / 1188)))) / z


def lnbeta(a: float, b: float) -> float:
    """``ln B(a, b)`` without the cancellation of large ``lgamma`` values."""
    small, big = min(a, b), max(a, b)
    if big < 20.0:
        return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    # lgamma(big) - lgamma(big + small) by differencing Stirling's series
    diff = (-(big - 0.5) * math.log1p(small / big) - small * math.log(big + small) + small
            + _stirling_tail(big) - _stirling_tail(big + small))
    return math.lgamma(small) + diff


def betainc_regularized(a: float, b: float, x: float, y: float | None = None,
                        log_x: float | None = None, log_y: float | None = None) -> float:
    """``I_x(a, b)``.

    ``y = 1 - x`` and the logarithms may be supplied when the caller knows them
    more accurately than they can be recomputed from ``x``; for large ``a`` the
    term ``a * log(x)`` dominates the error.
    """
    if y is None:
        y = 1.0 - x
    if x <= 0.0:
        return 0.0
    if y <= 0.0:
        return 1.0
    if log_x is None:
        log_x = math.log(x)
    if log_y is None:
        log_y = math.log(y)
    front = math.exp(a * log_x + b * log_y - lnbeta(a, b))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, y) / b


def student_two_tail(t: float, df: float) -> float:
    """``P(|T| >= |t|)`` for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ConfigError(f"df must be positive, got {df}")
    if t == 0:
        return 1.0
    if not math.isfinite(t):
        return 0.0
    t2 = t * t
    r = t2 / df
    log_x = -math.log1p(r)
    return betainc_regularized(df / 2.0, 0.5, 1.0 / (1.0 + r), r / (1.0 + r),
                               log_x=log_x, log_y=math.log(r) + log_x)


def student_upper_tail(t: float, df: float) -> float:
    """``P(T >= t)``."""
    half = 0.5 * student_two_tail(t, df)
    return half if t > 0 else 1.0 - half


def paired_t_test(x, y, tails: int = 2) -> float:
    """p-value of the paired Student t-test on ``x - y``.

    Identical samples give 1.0; constant non-zero differences give the smallest
    positive double.  ``tails=1`` tests ``mean(x - y) > 0``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ConfigError("paired samples must be 1-d and of equal length")
    n = len(x)
    if n < 2:
        raise InsufficientDataError(f"paired t-test needs n >= 2, got {n}")
    if tails not in (1, 2):
        raise ConfigError(f"tails must be 1 or 2, got {tails}")
    d = x - y
    if np.all(d == d[0]):
        if d[0] == 0:
            return 1.0
        if tails == 1 and d[0] < 0:
            return 1.0
        return TINY_P
    t = float(np.mean(d)) * math.sqrt(n) / float(np.std(d, ddof=1))
    p = student_two_tail(t, n - 1) if tails == 2 else student_upper_tail(t, n - 1)
    return min(1.0, max(p, TINY_P))


@dataclass(frozen=True, eq=False)
class PValueCurve:
    metric: str
    per_fold: np.ndarray  # folds x m, each row sorted descending
    mean: np.ndarray
    sigma: np.ndarray

    @property
    def m(self) -> int:
        return self.per_fold.shape[1]

    @property
    def n_folds(self) -> int:
        return self.per_fold.shape[0]

    def to_plot_data(self, header: str | None = None) -> str:
        lines = [f"# {header}"] if header else []
        lines.append("rank\tmean_p\tsigma")
        lines.extend(f"{r}\t{mu:.10g}\t{s:.10g}"
                     for r, (mu, s) in enumerate(zip(self.mean, self.sigma), start=1))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"metric": self.metric, "per_fold": self.per_fold.tolist(),
                "mean": self.mean.tolist(), "sigma": self.sigma.tolist()}


def build_curve(per_fold_pvalues, metric: str = "") -> PValueCurve:
    """Sort each fold's p-values descending, then average (and spread) rank-wise."""
    if isinstance(per_fold_pvalues, dict):
        per_fold_pvalues = [per_fold_pvalues[k] for k in sorted(per_fold_pvalues)]
    rows = [np.asarray(p, dtype=np.float64) for p in per_fold_pvalues]
    if not rows:
        raise InsufficientDataError("no folds")
    if len({len(r) for r in rows}) != 1:
        raise ConfigError("every fold must contribute the same number of p-values")
    sorted_rows = -np.sort(-np.vstack(rows), axis=1)
    mean = sorted_rows.mean(axis=0)
    if sorted_rows.shape[0] > 1:
        sigma = sorted_rows.std(axis=0, ddof=1)
    else:
        sigma = np.zeros(sorted_rows.shape[1])
    for arr in (sorted_rows, mean, sigma):
        arr.setflags(write=False)
    return PValueCurve(metric, sorted_rows, mean, sigma)


def discriminative_power(curve: PValueCurve) -> tuple[float, float]:
    """``(DP, DP+sigma)``: area under the mean curve and under ``min(1, mean + sigma)``."""
    dp = math.fsum(curve.mean)
    upper = math.fsum(np.minimum(1.0, curve.mean + curve.sigma))
    return dp, upper
