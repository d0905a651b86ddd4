import itertools
import math

import numpy as np
import pytest

from shefftree.arch import (
    Family,
    NotExpressible,
    UnsupportedDepth,
    build_architecture,
    enumerate_expressible,
    harden,
    one_hot_params,
    selector_weights,
    soft_forward,
    soft_forward_many,
)
from shefftree.expr import evaluate, parse, to_string
from shefftree.ops import OpKind


def spec_for(family, depth=3, op=OpKind.EML):
    return build_architecture(family, depth, op)


def test_depth3_param_counts():
    assert spec_for(Family.EQ6).param_count == 42
    assert spec_for(Family.V16).param_count == 38
    assert spec_for(Family.HYBRID).param_count == 44


def test_other_depth_param_counts():
    # depth 2: eq6 6 sites x 3; v16 6 gates + 4 leaves x 3; hybrid +2x3 on root
    assert spec_for(Family.EQ6, 2).param_count == 18
    assert spec_for(Family.V16, 2).param_count == 18
    assert spec_for(Family.HYBRID, 2).param_count == 24
    # depth 4: eq6 30 x 3; v16 30 gates + 16 leaves x 3; hybrid root widened
    assert spec_for(Family.EQ6, 4).param_count == 90
    assert spec_for(Family.V16, 4).param_count == 78
    assert spec_for(Family.HYBRID, 4).param_count == 84


def test_unsupported_depth():
    with pytest.raises(UnsupportedDepth):
        build_architecture(Family.EQ6, 5, OpKind.EML)
    with pytest.raises(UnsupportedDepth):
        build_architecture(Family.EQ6, 1, OpKind.EML)


def test_variable_slot_maps():
    eq6 = spec_for(Family.EQ6)
    assert len(eq6.x_slots) == 14 and len(eq6.y_slots) == 8
    v16 = spec_for(Family.V16)
    assert len(v16.x_slots) == 8 and len(v16.y_slots) == 8
    hy = spec_for(Family.HYBRID)
    assert len(hy.x_slots) == 10 and len(hy.y_slots) == 10


def test_softmax_weights_normalized_and_positive():
    rng = np.random.default_rng(0)
    for family in Family:
        spec = spec_for(family)
        for tau in (2.5, 0.7, 0.05):
            params = rng.normal(0, 1.5, spec.param_count)
            for w in selector_weights(spec, params, tau):
                assert w.sum() == pytest.approx(1.0, abs=1e-12)
                assert (w >= 0).all()
            # strict positivity for moderate logits
            params = rng.normal(0, 0.5, spec.param_count)
            for w in selector_weights(spec, params, 2.5):
                assert (w > 0).all()


def test_soft_forward_collapses_to_const_tree():
    # all selectors strongly favoring the constant: value equals the all-ones
    # hardened tree at any point
    spec = spec_for(Family.V16)
    params = np.zeros(spec.param_count)
    for sel in spec.selectors:
        if sel.kind == "sigmoid":
            params[sel.offset] = -100.0
        else:
            params[sel.offset] = 100.0
    hard = harden(spec, params)
    for x, y in ((0.3, -2.0), (1.0, 1.0), (-2.7, 0.9)):
        assert soft_forward(spec, params, 1.0, x, y) == pytest.approx(
            evaluate(hard, x, y), rel=1e-9
        )


def test_soft_forward_uniform_blend_matches_straight_line_oracle():
    # independent straight-line recomputation: all-zero logits give 1/3 weights
    # everywhere; at (0,0) every level reduces to the same scalar recursion
    spec = spec_for(Family.EQ6)
    params = np.zeros(spec.param_count)
    v3_in = (1.0 + 0.0 + 0.0) / 3.0
    v3 = math.exp(v3_in) - math.log(abs(v3_in))
    m2 = (1.0 + 0.0 + v3) / 3.0
    v2 = math.exp(m2) - math.log(abs(m2))
    m1 = (1.0 + 0.0 + v2) / 3.0
    v1 = math.exp(m1) - math.log(abs(m1))
    assert soft_forward(spec, params, 2.5, 0.0, 0.0) == pytest.approx(v1, rel=1e-12)


def test_soft_forward_snapped_matches_expression_evaluator():
    expr = parse("eml(eml(1,eml(y,x)),1)")
    for family in (Family.V16, Family.EQ6, Family.HYBRID):
        spec = spec_for(family)
        params = one_hot_params(spec, expr, margin=30.0)
        for x, y in ((1.0, 1.0), (0.5, -2.0), (-1.3, 2.2)):
            want = evaluate(expr, x, y)
            got = soft_forward(spec, params, 0.01, x, y)
            assert got == pytest.approx(want, abs=1e-6)


def test_soft_forward_invalid_on_domain_violation():
    spec = spec_for(Family.EQ6)
    params = one_hot_params(spec, parse("eml(eml(1,eml(y,x)),1)"), margin=30.0)
    # the innermost log argument is x, so x = 0 leaves the domain
    assert soft_forward(spec, params, 0.01, 0.0, 1.0) is None
    assert soft_forward(spec, params, 0.01, 1.0, 1.0) is not None


def test_harden_examples():
    v16 = spec_for(Family.V16)
    params = np.zeros(v16.param_count)
    for sel in v16.selectors:
        if sel.kind == "sigmoid":
            params[sel.offset] = -5.0
        else:
            params[sel.offset] = 5.0
    assert to_string(harden(v16, params)) == "eml(1,1)"

    eq6 = spec_for(Family.EQ6)
    chain = parse("eml(eml(1,eml(y,x)),1)")
    assert to_string(harden(eq6, one_hot_params(eq6, chain))) == to_string(chain)


def test_harden_tie_breaks_to_const():
    for family in Family:
        spec = spec_for(family)
        assert to_string(harden(spec, np.zeros(spec.param_count))) == "eml(1,1)"


def test_harden_reencode_idempotent():
    rng = np.random.default_rng(12)
    for family in Family:
        spec = spec_for(family)
        for _ in range(100):
            params = rng.normal(0, 1.0, spec.param_count)
            h1 = harden(spec, params)
            h2 = harden(spec, one_hot_params(spec, h1))
            assert to_string(h1) == to_string(h2)


def test_soft_hard_consistency_at_low_tau():
    rng = np.random.default_rng(5)
    for family in Family:
        spec = spec_for(family, op=OpKind.SML)  # everywhere-valid operator
        # random logits with a guaranteed >= 2 margin between top-2 candidates
        params = rng.normal(0, 0.3, spec.param_count)
        for sel in spec.selectors:
            if sel.kind == "sigmoid":
                params[sel.offset] = rng.choice([-2.5, 2.5])
            else:
                sl = slice(sel.offset, sel.offset + sel.n_logits)
                block = rng.normal(0, 0.3, sel.n_logits)
                block[rng.integers(sel.n_logits)] += 3.0
                params[sl] = block
        hard = harden(spec, params)
        pts = rng.uniform(-3, 3, size=(100, 2))
        soft, ok = soft_forward_many(spec, params, 0.01, pts[:, 0], pts[:, 1])
        for i in range(100):
            want = evaluate(hard, pts[i, 0], pts[i, 1])
            if want is not None and ok[i]:
                assert abs(soft[i] - want) < 1e-4


def test_pruned_subtree_does_not_affect_soft_forward():
    spec = spec_for(Family.V16)
    base = one_hot_params(spec, parse("eml(1,1)"), margin=50.0)
    poisoned = base.copy()
    # rewrite every leaf selector to pick the constant-0-log trap (y at y=0
    # would be fine; instead push leaves to x and evaluate at x=0 so the
    # pruned branch would be invalid if it leaked)
    for site in spec.sites:
        if site.leaf is not None:
            leaf = spec.selectors[site.leaf]
            poisoned[leaf.offset : leaf.offset + 3] = (-50.0, 50.0, -50.0)
    v0 = soft_forward(spec, base, 0.01, 0.0, 0.0)
    v1 = soft_forward(spec, poisoned, 0.01, 0.0, 0.0)
    assert v0 == v1 == pytest.approx(math.e, rel=1e-12)


def test_one_hot_params_rejects_inexpressible():
    eq6 = spec_for(Family.EQ6)
    with pytest.raises(NotExpressible):
        one_hot_params(eq6, parse("eml(y,1)"))  # y unavailable at the root
    with pytest.raises(NotExpressible):
        one_hot_params(eq6, parse("sml(x,1)"))  # operator mismatch
    d4 = parse("eml(eml(eml(eml(x,y),1),1),1)")
    with pytest.raises(NotExpressible):
        one_hot_params(eq6, d4)  # deeper than the tree


# ---------------------------------------------------------------------------
# expressiveness enumeration


def brute_force_v16_depth2():
    """Oracle: harden every one-hot assignment of the depth-2 v16 layout
    (2^6 sigmoid gates x 3^4 leaf choices) and deduplicate."""
    spec = spec_for(Family.V16, 2)
    gates = [s for s in spec.selectors if s.kind == "sigmoid"]
    leaves = [s for s in spec.selectors if s.kind == "softmax"]
    assert len(gates) == 6 and len(leaves) == 4
    seen = set()
    for gbits in itertools.product((-9.0, 9.0), repeat=6):
        for lpicks in itertools.product(range(3), repeat=4):
            params = np.zeros(spec.param_count)
            for g, bit in zip(gates, gbits):
                params[g.offset] = bit
            for leaf, pick in zip(leaves, lpicks):
                params[leaf.offset : leaf.offset + 3] = -9.0
                params[leaf.offset + pick] = 9.0
            seen.add(to_string(harden(spec, params)))
    return seen


def test_enumeration_matches_brute_force_at_depth2():
    spec = spec_for(Family.V16, 2)
    assert enumerate_expressible(spec) == frozenset(brute_force_v16_depth2())


def test_enumeration_sizes_match_counting_argument():
    # deepest options {1,x,y} -> 9 node forms; each level squares the argument
    # choices; distinct argument pairs give distinct canonical strings
    e3 = 9
    eq6_l2 = (2 + e3) ** 2
    assert len(enumerate_expressible(spec_for(Family.EQ6))) == (2 + eq6_l2) ** 2
    v16_l2 = (1 + e3) ** 2
    assert len(enumerate_expressible(spec_for(Family.V16))) == (1 + v16_l2) ** 2
    assert len(enumerate_expressible(spec_for(Family.HYBRID))) == (3 + v16_l2) ** 2


def test_chain_targets_expressible_by_eq6_and_v16():
    from shefftree.targets import Shape, catalog, instantiate

    eq6 = enumerate_expressible(spec_for(Family.EQ6))
    v16 = enumerate_expressible(spec_for(Family.V16))
    chains = [
        t for t in catalog()
        if t.operator is OpKind.EML and t.shape in (Shape.LR, Shape.RL, Shape.RR)
    ]
    assert len(chains) == 6
    for t in chains:
        s = to_string(instantiate(t))
        assert s in eq6 and s in v16


def test_v16_strictly_inside_eq6():
    eq6 = enumerate_expressible(spec_for(Family.EQ6))
    v16 = enumerate_expressible(spec_for(Family.V16))
    assert v16 < eq6


def test_enumeration_depth_limit():
    with pytest.raises(UnsupportedDepth):
        enumerate_expressible(spec_for(Family.EQ6, 4))
