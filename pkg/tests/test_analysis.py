import math
from fractions import Fraction

import numpy as np
import pytest
import scipy.stats

from shefftree.analysis import (
    VerificationImpossible,
    clopper_pearson,
    exact_recovery,
    fisher_exact,
    summarize,
    summarize_counts,
)
from shefftree.arch import Family, build_architecture, enumerate_expressible
from shefftree.expr import evaluate_many, parse, to_string
from shefftree.ops import OpKind


def test_exact_recovery_identity():
    e = parse("eml(eml(1,eml(y,x)),1)")
    v = exact_recovery(e, e, np.random.default_rng(0))
    assert v.numeric_match and v.structural_match
    assert v.rmse == 0.0 and v.points_used == 500


def test_exact_recovery_distinguishes_variables():
    v = exact_recovery(
        parse("eml(x,1)"), parse("eml(y,1)"), np.random.default_rng(1)
    )
    assert not v.numeric_match and not v.structural_match
    assert v.rmse > 1e-3


def test_exact_recovery_symmetric_on_shared_domain():
    a = parse("sml(1,sml(x,y))")
    b = parse("sml(sml(x,y),1)")
    v1 = exact_recovery(a, b, np.random.default_rng(7))
    v2 = exact_recovery(b, a, np.random.default_rng(7))
    assert v1.numeric_match == v2.numeric_match


def test_exact_recovery_rejects_unverifiable_target():
    # quintuple exponentiation survives only for x < -2.69, about 5% of the
    # square, below the 10% acceptance floor
    deep = parse("eml(eml(eml(eml(eml(x,1),1),1),1),1)")
    with pytest.raises(VerificationImpossible):
        exact_recovery(parse("eml(1,1)"), deep, np.random.default_rng(2))


def test_functionally_equal_structurally_distinct_pair():
    """Search the enumerable sets for numeric duplicates; the depth-3 grammar
    contains distinct spellings of the zero function, which must count as
    numeric (not structural) recovery."""
    probe = np.array([-2.2, -1.4, -0.6, 0.4, 1.1, 1.9, 2.6])
    px, py = np.meshgrid(probe, probe, indexing="ij")
    px, py = px.ravel(), py.ravel()
    groups = {}
    for s in enumerate_expressible(build_architecture(Family.EQ6, 3, OpKind.EML)):
        e = parse(s)
        vals, ok = evaluate_many(e, px, py)
        if not ok.all():
            continue
        key = tuple(np.round(vals, 9))
        groups.setdefault(key, []).append(e)
    dup_groups = [g for g in groups.values() if len(g) > 1]
    assert dup_groups, "depth-3 eq6 grammar is expected to contain duplicates"
    found = None
    for g in dup_groups:
        for target in g:
            for hardened in g:
                if to_string(hardened) == to_string(target):
                    continue
                v = exact_recovery(hardened, target, np.random.default_rng(3))
                if v.numeric_match:
                    found = v
                    break
            if found:
                break
        if found:
            break
    assert found is not None
    assert found.numeric_match and not found.structural_match


# ---------------------------------------------------------------------------
# Clopper-Pearson


def test_cp_examples():
    low, high = clopper_pearson(0, 3776, 0.95)
    assert low == 0.0
    assert high == pytest.approx(0.000976450782906868, abs=1e-5)
    assert clopper_pearson(0, 10, 0.95)[0] == 0.0
    assert clopper_pearson(10, 10, 0.95)[1] == 1.0
    # frozen from the independent binomial-CDF bisection oracle
    low, high = clopper_pearson(101, 256, 0.95)
    assert low == pytest.approx(0.3342405276064772, abs=1e-9)
    assert high == pytest.approx(0.4572939699378159, abs=1e-9)
    rate = 101 / 256
    assert 0.05 <= max(rate - low, high - rate) <= 0.065  # 5-6 pp half-width


def test_cp_against_beta_quantile_oracle():
    rng = np.random.default_rng(17)
    for _ in range(200):
        n = int(rng.integers(1, 5001))
        s = int(rng.integers(0, n + 1))
        low, high = clopper_pearson(s, n, 0.95)
        want_low = 0.0 if s == 0 else scipy.stats.beta.ppf(0.025, s, n - s + 1)
        want_high = 1.0 if s == n else scipy.stats.beta.ppf(0.975, s + 1, n - s)
        assert abs(low - want_low) < 1e-9
        assert abs(high - want_high) < 1e-9


def test_cp_validation():
    with pytest.raises(ValueError):
        clopper_pearson(5, 3)
    with pytest.raises(ValueError):
        clopper_pearson(1, 10, 1.5)


# ---------------------------------------------------------------------------
# Fisher exact


def test_fisher_examples():
    assert fisher_exact(64, 0, 0, 64) < 1e-15
    assert fisher_exact(1, 1, 1, 1) == 1.0
    assert fisher_exact(5, 251, 0, 256) == pytest.approx(0.06, abs=0.01)
    assert fisher_exact(0, 0, 0, 0) == 1.0


def test_fisher_against_scipy_oracle():
    rng = np.random.default_rng(23)
    checked = 0
    while checked < 200:
        a, b, c, d = (int(v) for v in rng.integers(0, 21, 4))
        if a + b + c + d == 0:
            continue
        mine = fisher_exact(a, b, c, d)
        want = scipy.stats.fisher_exact([[a, b], [c, d]], alternative="two-sided")[1]
        # scipy resolves near-ties with a 1+1e-7 fudge; skip ambiguous tables
        if _has_near_tie(a, b, c, d):
            continue
        assert mine == pytest.approx(min(want, 1.0), abs=1e-10)
        checked += 1


def _has_near_tie(a, b, c, d):
    r1, r2, c1 = a + b, c + d, a + c
    n = r1 + r2
    denom = math.comb(n, c1)
    p_obs = Fraction(math.comb(r1, a) * math.comb(r2, c1 - a), denom)
    if p_obs == 0:
        return False
    lo, hi = max(0, c1 - r2), min(r1, c1)
    for k in range(lo, hi + 1):
        if k == a:
            continue
        p_k = Fraction(math.comb(r1, k) * math.comb(r2, c1 - k), denom)
        if p_k != p_obs and abs(p_k / p_obs - 1) < 1e-6:
            return True
    return False


def test_fisher_validation():
    with pytest.raises(ValueError):
        fisher_exact(-1, 0, 0, 0)


# ---------------------------------------------------------------------------
# rate summaries


class FakeResult:
    def __init__(self, recovered):
        self.recovered = recovered


def test_summarize():
    s = summarize([FakeResult(True)] * 64)
    assert s.rate == 1.0 and s.ci_high == 1.0 and s.successes == 64
    s = summarize([FakeResult(False)] * 64)
    assert s.rate == 0.0 and s.ci_low == 0.0
    s = summarize_counts(5, 256)
    assert s.rate == pytest.approx(5 / 256)
    assert 0 <= s.ci_low <= s.rate <= s.ci_high <= 1
