"""Paired t-test and Pearson correlation with two-tailed p-values.

Both p-values come from the Student t distribution, evaluated through a
self-contained regularized incomplete beta function (continued fraction
with the modified Lentz recurrence, symmetry-switched for stability).
Two-tailed only; significance stars follow the 0.05/0.01/0.001/0.0001
ladder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import (
    DegenerateVarianceError,
    DomainError,
    ParameterError,
    UndefinedCorrelationError,
)

_LENTZ_TINY = 1e-300
_LENTZ_EPS = 1e-16
_LENTZ_MAX_ITER = 500


@dataclass(frozen=True)
class PairedSample:
    """Two equal-length measurement vectors over the same subjects."""

    a: tuple[float, ...]
    b: tuple[float, ...]
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        a = tuple(float(v) for v in self.a)
        b = tuple(float(v) for v in self.b)
        labels = tuple(self.labels) or tuple(f"s{i+1}" for i in range(len(a)))
        if len(a) != len(b) or len(a) != len(labels):
            raise ParameterError(
                f"paired vectors must align: |a|={len(a)} |b|={len(b)} |labels|={len(labels)}")
        if len(a) < 2:
            raise ParameterError("need at least 2 pairs")
        if any(not math.isfinite(v) for v in a + b):
            raise ParameterError("non-finite value in paired sample")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return len(self.a)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: float
    p_two_tailed: float
    effect: float  # mean difference (t-test) or r (correlation)

    @property
    def stars(self) -> str:
        return significance_stars(self.p_two_tailed)


def significance_stars(p: float) -> str:
    if p < 0.0001:
        return "****"
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return "ns"


def _beta_cf(x: float, p: float, q: float) -> float:
    """Continued fraction for the incomplete beta, modified Lentz scheme."""
    pq = p + q
    pp1 = p + 1.0
    pm1 = p - 1.0
    c = 1.0
    d = 1.0 - pq * x / pp1
    if abs(d) < _LENTZ_TINY:
        d = _LENTZ_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _LENTZ_MAX_ITER + 1):
        m2 = 2 * m
        # even step
        aa = m * (q - m) * x / ((pm1 + m2) * (p + m2))
        d = 1.0 + aa * d
        if abs(d) < _LENTZ_TINY:
            d = _LENTZ_TINY
        c = 1.0 + aa / c
        if abs(c) < _LENTZ_TINY:
            c = _LENTZ_TINY
        d = 1.0 / d
        h *= d * c
        # odd step
        aa = -(p + m) * (pq + m) * x / ((p + m2) * (pp1 + m2))
        d = 1.0 + aa * d
        if abs(d) < _LENTZ_TINY:
            d = _LENTZ_TINY
        c = 1.0 + aa / c
        if abs(c) < _LENTZ_TINY:
            c = _LENTZ_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _LENTZ_EPS:
            break
    return h


def regularized_incomplete_beta(x: float, p: float, q: float) -> float:
    """I_x(p, q) to absolute error well below 1e-12 over the domain."""
    if not (math.isfinite(x) and math.isfinite(p) and math.isfinite(q)):
        raise DomainError("non-finite argument")
    if p <= 0 or q <= 0:
        raise DomainError(f"shape parameters must be positive, got p={p} q={q}")
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(p + q) - math.lgamma(p) - math.lgamma(q)
        + p * math.log(x) + q * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (p + 1.0) / (p + q + 2.0):
        return front * _beta_cf(x, p, q) / p
    return 1.0 - front * _beta_cf(1.0 - x, q, p) / q


def _student_t_two_tailed(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(x, df / 2.0, 0.5)


def _mean(xs) -> float:
    return sum(xs) / len(xs)


def _sd(xs) -> float:
    """n-1 sample standard deviation."""
    m = _mean(xs)
    return math.sqrt(sum((v - m) ** 2 for v in xs) / (len(xs) - 1))


def paired_t_test(sample: PairedSample) -> TestResult:
    """Two-tailed paired t-test on a - b, df = n - 1."""
    d = [ai - bi for ai, bi in zip(sample.a, sample.b)]
    md = _mean(d)
    sd = _sd(d)
    if sd == 0.0:
        raise DegenerateVarianceError(
            "all paired differences are identical; t undefined", mean_difference=md)
    n = sample.n
    t = md / (sd / math.sqrt(n))
    df = n - 1
    return TestResult(statistic=t, df=float(df),
                      p_two_tailed=_student_t_two_tailed(t, df), effect=md)


def pearson(sample: PairedSample) -> TestResult:
    """Pearson r with the two-tailed t-transform p, df = n - 2."""
    if sample.n < 3:
        raise ParameterError("correlation needs at least 3 pairs")
    ma, mb = _mean(sample.a), _mean(sample.b)
    da = [v - ma for v in sample.a]
    db = [v - mb for v in sample.b]
    ssa = sum(v * v for v in da)
    ssb = sum(v * v for v in db)
    if ssa == 0.0 or ssb == 0.0:
        raise UndefinedCorrelationError("constant vector; correlation undefined")
    r = sum(x * y for x, y in zip(da, db)) / math.sqrt(ssa * ssb)
    r = max(-1.0, min(1.0, r))  # guard against rounding past the bounds
    df = sample.n - 2
    if abs(r) == 1.0:
        t = math.copysign(math.inf, r)
    else:
        t = r * math.sqrt(df / (1.0 - r * r))
    return TestResult(statistic=t, df=float(df),
                      p_two_tailed=_student_t_two_tailed(t, df), effect=r)
