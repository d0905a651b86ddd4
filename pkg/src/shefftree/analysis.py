"""Recovery verification and the exact statistics used in the result tables.

Recovery is a numeric criterion: the hardened formula must match the target
within RMSE 1e-6 on 500 random in-domain points.  Structural (string) identity
is reported alongside for diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from math import comb, lgamma

import numpy as np

from .expr import Expr, evaluate_many, to_string

RECOVERY_RMSE = 1e-6
RECOVERY_POINTS = 500


@dataclass(frozen=True)
class RecoveryVerdict:
    numeric_match: bool
    structural_match: bool
    rmse: float
    points_used: int


@dataclass(frozen=True)
class RateSummary:
    successes: int
    trials: int
    rate: float
    ci_low: float
    ci_high: float


class VerificationImpossible(RuntimeError):
    """The target is invalid on too much of the sampling domain."""


def exact_recovery(
    hardened: Expr,
    target: Expr,
    rng,
    n_points: int = RECOVERY_POINTS,
    domain: tuple[float, float] = (-3.0, 3.0),
) -> RecoveryVerdict:
    """Sample uniform points on the square domain, rejecting points where the
    target is invalid, until ``n_points`` accepted; compare the two formulas
    there."""
    lo, hi = domain
    xs = np.empty(0)
    ys = np.empty(0)
    drawn = 0
    max_draws = max(20 * n_points, 1000)
    while xs.size < n_points:
        if drawn >= max_draws:
            raise VerificationImpossible(
                f"target invalid on most of the domain "
                f"({xs.size}/{drawn} accepted)"
            )
        batch = max(n_points, 256)
        pts = rng.uniform(lo, hi, size=(batch, 2))
        drawn += batch
        _, ok = evaluate_many(target, pts[:, 0], pts[:, 1])
        xs = np.concatenate([xs, pts[ok, 0]])
        ys = np.concatenate([ys, pts[ok, 1]])
    xs = xs[:n_points]
    ys = ys[:n_points]

    tv, _ = evaluate_many(target, xs, ys)
    hv, h_ok = evaluate_many(hardened, xs, ys)
    rmse = float(np.sqrt(np.mean((hv - tv) ** 2)))
    numeric = bool(h_ok.all()) and rmse < RECOVERY_RMSE
    structural = to_string(hardened) == to_string(target)
    return RecoveryVerdict(numeric, structural, rmse, n_points)


# ---------------------------------------------------------------------------
# exact binomial interval


def _binom_cdf_fn(s: int, n: int):
    """P(X <= s) for X ~ Binomial(n, .) as a function of p, with the log
    binomial coefficients precomputed once."""
    k = np.arange(0, s + 1)
    lg = np.array([lgamma(i + 1) for i in range(s + 1)])
    lg_rev = np.array([lgamma(n - i + 1) for i in range(s + 1)])
    logc = lgamma(n + 1) - lg - lg_rev

    def cdf(p: float) -> float:
        if p <= 0.0:
            return 1.0
        if p >= 1.0:
            return 1.0 if s >= n else 0.0
        terms = logc + k * math.log(p) + (n - k) * math.log1p(-p)
        return float(min(1.0, np.exp(terms).sum()))

    return cdf


def clopper_pearson(
    successes: int, trials: int, confidence: float = 0.95
) -> tuple[float, float]:
    """Exact two-sided binomial interval by bisecting the binomial CDF."""
    if not (0 <= successes <= trials) or trials <= 0:
        raise ValueError(f"bad counts {successes}/{trials}")
    if not (0.0 < confidence < 1.0):
        raise ValueError("confidence must be in (0, 1)")
    alpha = (1.0 - confidence) / 2.0

    def bisect(f) -> float:
        # f is increasing in p; returns its root in [0, 1]
        lo, hi = 0.0, 1.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if f(mid) < 0.0:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    if successes == 0:
        low = 0.0
    else:
        cdf_lo = _binom_cdf_fn(successes - 1, trials)
        # P(X >= s | p) grows with p; low solves it equal to alpha
        low = bisect(lambda p: (1.0 - cdf_lo(p)) - alpha)
    if successes == trials:
        high = 1.0
    else:
        cdf_hi = _binom_cdf_fn(successes, trials)
        # P(X <= s | p) falls with p; high solves it equal to alpha
        high = bisect(lambda p: alpha - cdf_hi(p))
    return low, high


# ---------------------------------------------------------------------------
# Fisher exact test


def fisher_exact(a: int, b: int, c: int, d: int) -> float:
    """Two-sided Fisher exact p for the 2x2 table [[a, b], [c, d]], summing all
    tables whose point probability does not exceed the observed one.  The
    hypergeometric terms are exact rationals, so ties are compared exactly."""
    if min(a, b, c, d) < 0:
        raise ValueError("counts must be nonnegative")
    r1, r2 = a + b, c + d
    c1 = a + c
    n = r1 + r2
    if n == 0:
        return 1.0
    denom = comb(n, c1)
    lo = max(0, c1 - r2)
    hi = min(r1, c1)
    p_obs = Fraction(comb(r1, a) * comb(r2, c1 - a), denom)
    total = Fraction(0)
    for k in range(lo, hi + 1):
        p_k = Fraction(comb(r1, k) * comb(r2, c1 - k), denom)
        if p_k <= p_obs:
            total += p_k
    return float(min(total, Fraction(1)))


def summarize(results, confidence: float = 0.95) -> RateSummary:
    """Recovery rate with Clopper-Pearson bounds over a batch of trials."""
    results = list(results)
    successes = sum(1 for r in results if r.recovered)
    return summarize_counts(successes, len(results), confidence)


def summarize_counts(successes: int, trials: int, confidence: float = 0.95) -> RateSummary:
    low, high = clopper_pearson(successes, trials, confidence)
    return RateSummary(successes, trials, successes / trials, low, high)
