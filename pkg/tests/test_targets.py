import json
import math

import numpy as np
import pytest

from shefftree.expr import evaluate, parse, to_string
from shefftree.ops import OpKind
from shefftree.targets import (
    BALANCED_VARIANTS,
    GridSpec,
    Shape,
    TargetSpec,
    UnusableTargetError,
    catalog,
    catalog_json,
    get_target,
    instantiate,
    make_dataset,
)


def test_template_examples():
    assert to_string(instantiate(TargetSpec("a", OpKind.EML, Shape.LR, ("y", "x")))) == \
        "eml(eml(1,eml(y,x)),1)"
    assert to_string(instantiate(TargetSpec("b", OpKind.EML, Shape.RL, ("x", "y")))) == \
        "eml(1,eml(eml(x,y),1))"
    assert to_string(instantiate(TargetSpec("c", OpKind.SML, Shape.RR, ("x", "y")))) == \
        "sml(1,sml(1,sml(x,y)))"
    assert to_string(instantiate(TargetSpec("d", OpKind.EML, Shape.LL, ("x", "y")))) == \
        "eml(eml(eml(x,y),1),1)"
    assert to_string(
        instantiate(TargetSpec("e", OpKind.EML, Shape.BALANCED, ("x", "y", "x", "y")))
    ) == "eml(eml(x,y),eml(x,y))"


def test_leaf_arity_enforced():
    with pytest.raises(ValueError):
        TargetSpec("bad", OpKind.EML, Shape.LR, ("x", "y", "x"))
    with pytest.raises(ValueError):
        TargetSpec("bad", OpKind.EML, Shape.BALANCED, ("x", "y"))
    with pytest.raises(ValueError):
        TargetSpec("bad", OpKind.EML, Shape.LR, ("x", "z"))


def test_instantiate_round_trips_through_grammar():
    for t in catalog():
        e = instantiate(t)
        assert to_string(parse(to_string(e))) == to_string(e)


def test_chain_closed_forms():
    # hand-expanded compositions at random points
    rng = np.random.default_rng(2)
    lr = instantiate(get_target("Paper_yx"))
    rl = instantiate(get_target("T1_xy"))
    rr = instantiate(get_target("T4_xy"))
    for _ in range(100):
        x, y = rng.uniform(-3, 3, 2)
        if x == 0 or y == 0:
            continue
        q_yx = math.exp(y) - math.log(abs(x))
        got = evaluate(lr, x, y)
        if got is not None and q_yx != 0:
            want = math.exp(math.e - math.log(abs(q_yx)))
            assert got == pytest.approx(want, rel=1e-12)
        q_xy = math.exp(x) - math.log(abs(y))
        got = evaluate(rl, x, y)
        if got is not None:
            want = math.e - math.log(abs(math.exp(q_xy)))
            assert got == pytest.approx(want, rel=1e-12)
        got = evaluate(rr, x, y)
        if got is not None and q_xy != 0:
            want = math.e - math.log(abs(math.e - math.log(abs(q_xy))))
            assert got == pytest.approx(want, rel=1e-12)


def test_dataset_grid_accounting():
    ds = make_dataset(get_target("Paper_yx"))
    assert len(ds) + ds.n_filtered == 441
    assert np.all(np.isfinite(ds.target))
    assert np.all(np.abs(ds.target) <= 1e8)


def test_eml_chain_datasets_keep_378_points():
    for name in ("Paper_yx", "T1_xy", "T4_xy", "T8_xy", "T1_yx", "T4_yx"):
        ds = make_dataset(get_target(name))
        assert len(ds) >= 378, name


def test_constant_formula_survives_full_grid():
    # the constant tree eml(1,1) never leaves its domain, so a dataset built
    # on it would filter nothing
    from shefftree.expr import evaluate_many

    const = parse("eml(1,1)")
    gx, gy = np.meshgrid(GridSpec().axes(), GridSpec().axes(), indexing="ij")
    v, ok = evaluate_many(const, gx.ravel(), gy.ravel())
    assert ok.all() and v.size == 441
    assert np.allclose(v, math.e)


def test_dataset_deterministic():
    a = make_dataset(get_target("T1_xy"))
    b = make_dataset(get_target("T1_xy"))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.target, b.target)
    assert a.n_filtered == b.n_filtered


def test_unusable_target_error():
    # LL chain double-exponentiates; on a grid pushed far positive nothing
    # survives the cap
    ll = TargetSpec("ll", OpKind.EML, Shape.LL, ("x", "y"))
    with pytest.raises(UnusableTargetError):
        make_dataset(ll, GridSpec(n=10, lo=2.0, hi=3.0))


def test_ll_constructible_but_not_in_catalog():
    ll = TargetSpec("ll", OpKind.EML, Shape.LL, ("x", "y"))
    assert to_string(instantiate(ll)) == "eml(eml(eml(x,y),1),1)"
    assert all(t.shape is not Shape.LL for t in catalog())


def test_catalog_contents():
    rows = catalog()
    eml_chains = [
        t for t in rows
        if t.operator is OpKind.EML and t.shape in (Shape.LR, Shape.RL, Shape.RR)
    ]
    assert sorted(t.name for t in eml_chains) == sorted(
        ["Paper_yx", "T1_xy", "T4_xy", "T8_xy", "T1_yx", "T4_yx"]
    )
    for op in OpKind:
        balanced = [t for t in rows if t.operator is op and t.shape is Shape.BALANCED]
        assert len(balanced) == 4
        assert [t.leaves for t in balanced] == list(BALANCED_VARIANTS)
    sml_chains = [t for t in rows if t.operator is OpKind.SML and t.shape is not Shape.BALANCED]
    assert len(sml_chains) == 6
    # T8 and Paper share the LR shape and differ only in leaf order
    t8, paper = get_target("T8_xy"), get_target("Paper_yx")
    assert t8.shape is paper.shape is Shape.LR
    assert t8.leaves == ("x", "y") and paper.leaves == ("y", "x")


def test_catalog_json_export():
    doc = json.loads(catalog_json())
    assert len(doc) == len(catalog())
    byname = {row["name"]: row for row in doc}
    assert byname["Paper_yx"]["formula"] == "eml(eml(1,eml(y,x)),1)"
    assert byname["S_RR_xy"]["operator"] == "sml"
    assert byname["EML_B2"]["leaves"] == ["y", "x", "y", "x"]


def test_get_target_unknown():
    with pytest.raises(KeyError):
        get_target("nope")
