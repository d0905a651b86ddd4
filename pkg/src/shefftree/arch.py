"""Architecture families: selector layouts over a perfect binary operator tree.

An architecture assigns every operator-node input a selector over candidate
inputs (constant 1, variables, child subtree).  The three families differ in
variable routing:

* ``eq6``    - 3-way softmax {1, x, child} at every input; the deepest level
  swaps the child candidate for y (variable y enters only there).
* ``v16``    - sigmoid gate {1, child} at every input; at the deepest level the
  child is a 3-way leaf softmax {1, x, y} (variables enter only at leaves).
* ``hybrid`` - v16 body, but the two root inputs use a 4-way softmax
  {1, x, y, child}.

Parameter counts at depth 3 are 42 / 38 / 44; the builder asserts them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .expr import Expr, Arg
from .ops import OpKind, forward, forward_and_partials


class Family(str, Enum):
    EQ6 = "eq6"
    V16 = "v16"
    HYBRID = "hybrid"


DEPTH3_PARAM_COUNTS = {Family.EQ6: 42, Family.V16: 38, Family.HYBRID: 44}

# Candidate names; slot order within a selector follows this priority, which is
# also the argmax tie-break order when hardening.
CAND_ORDER = ("1", "x", "y", "child")


@dataclass(frozen=True)
class Selector:
    kind: str  # "softmax" | "sigmoid"
    candidates: tuple[str, ...]
    offset: int

    @property
    def n_logits(self) -> int:
        return 1 if self.kind == "sigmoid" else len(self.candidates)


@dataclass(frozen=True)
class InputSite:
    """One operator-node input: its top selector and, at the deepest level of
    v16/hybrid, the leaf softmax sitting behind the gate's child candidate."""

    node: int
    side: int  # 0 = left, 1 = right
    top: int  # selector index
    leaf: int | None = None  # selector index of the leaf softmax, if any
    child: int | None = None  # BFS index of the child operator node, if any


@dataclass(frozen=True)
class ArchitectureSpec:
    family: Family
    depth: int
    operator: OpKind
    selectors: tuple[Selector, ...]
    sites: tuple[InputSite, ...]  # node-BFS order, left input before right
    param_count: int
    n_nodes: int
    x_slots: tuple[int, ...]
    y_slots: tuple[int, ...]
    # selector offsets grouped by shape, for batched weight computation
    sig_offsets: np.ndarray = field(repr=False, compare=False, default=None)
    sm_offsets: dict = field(repr=False, compare=False, default=None)
    sel_group: tuple = field(repr=False, compare=False, default=None)


class UnsupportedDepth(ValueError):
    pass


def _levels(depth: int):
    """Yield (level, first_index, count) for operator-node levels 1..depth."""
    first = 0
    for level in range(1, depth + 1):
        count = 2 ** (level - 1)
        yield level, first, count
        first += count


def build_architecture(family: Family, depth: int, operator: OpKind) -> ArchitectureSpec:
    if depth not in (2, 3, 4):
        raise UnsupportedDepth(f"depth must be 2..4, got {depth}")
    family = Family(family)
    operator = OpKind(operator)

    n_nodes = 2**depth - 1
    deepest_first = 2 ** (depth - 1) - 1
    selectors: list[Selector] = []
    sites: list[InputSite] = []
    offset = 0

    def add_selector(kind: str, candidates: tuple[str, ...]) -> int:
        nonlocal offset
        sel = Selector(kind, candidates, offset)
        selectors.append(sel)
        offset += sel.n_logits
        return len(selectors) - 1

    for node in range(n_nodes):
        deepest = node >= deepest_first
        for side in (0, 1):
            child = None if deepest else 2 * node + 1 + side
            if family is Family.EQ6:
                cands = ("1", "x", "y") if deepest else ("1", "x", "child")
                top = add_selector("softmax", cands)
                sites.append(InputSite(node, side, top, None, child))
            else:
                if family is Family.HYBRID and node == 0:
                    top = add_selector("softmax", ("1", "x", "y", "child"))
                else:
                    top = add_selector("sigmoid", ("1", "child"))
                leaf = add_selector("softmax", ("1", "x", "y")) if deepest else None
                sites.append(InputSite(node, side, top, leaf, child))

    param_count = offset
    if depth == 3:
        expected = DEPTH3_PARAM_COUNTS[family]
        assert param_count == expected, (family, param_count, expected)

    x_slots, y_slots = _variable_slots(family, selectors, sites, deepest_first)

    sig_offsets = np.array(
        [s.offset for s in selectors if s.kind == "sigmoid"], dtype=np.intp
    )
    sm_offsets = {}
    sel_group = []
    counters = {"sigmoid": 0}
    for sel in selectors:
        if sel.kind == "sigmoid":
            sel_group.append(("sigmoid", counters["sigmoid"]))
            counters["sigmoid"] += 1
        else:
            k = sel.n_logits
            rows = sm_offsets.setdefault(k, [])
            sel_group.append((k, len(rows)))
            rows.append([sel.offset + j for j in range(k)])
    sm_offsets = {k: np.array(v, dtype=np.intp) for k, v in sm_offsets.items()}

    return ArchitectureSpec(
        family=family,
        depth=depth,
        operator=operator,
        selectors=tuple(selectors),
        sites=tuple(sites),
        param_count=param_count,
        n_nodes=n_nodes,
        x_slots=tuple(x_slots),
        y_slots=tuple(y_slots),
        sig_offsets=sig_offsets,
        sm_offsets=sm_offsets,
        sel_group=tuple(sel_group),
    )


def _variable_slots(family, selectors, sites, deepest_first):
    """Slot indices of the variable-selection logits used by the leaf
    gradient ratio: for eq6, every x-candidate logit vs the deepest-level
    y logits; for v16/hybrid, the leaf-selector logits (plus root x/y for
    hybrid)."""
    x_slots: list[int] = []
    y_slots: list[int] = []
    for site in sites:
        top = selectors[site.top]
        if family is Family.EQ6:
            x_slots.append(top.offset + top.candidates.index("x"))
            if "y" in top.candidates:
                y_slots.append(top.offset + top.candidates.index("y"))
        else:
            if site.leaf is not None:
                leaf = selectors[site.leaf]
                x_slots.append(leaf.offset + 1)
                y_slots.append(leaf.offset + 2)
            if top.kind == "softmax" and "x" in top.candidates:
                x_slots.append(top.offset + top.candidates.index("x"))
                y_slots.append(top.offset + top.candidates.index("y"))
    return x_slots, y_slots


# ---------------------------------------------------------------------------
# soft forward pass


class WeightSet:
    """Per-selector mixture weights at a given temperature."""

    __slots__ = ("p_sig", "w_sm", "spec", "tau")

    def __init__(self, spec: ArchitectureSpec, params: np.ndarray, tau: float):
        if params.shape != (spec.param_count,):
            raise ValueError(
                f"expected {spec.param_count} parameters, got {params.shape}"
            )
        if not tau > 0:
            raise ValueError("tau must be positive")
        self.spec = spec
        self.tau = tau
        if spec.sig_offsets.size:
            z = params[spec.sig_offsets] / tau
            with np.errstate(over="ignore"):
                self.p_sig = 1.0 / (1.0 + np.exp(-z))
        else:
            self.p_sig = np.empty(0)
        self.w_sm = {}
        for k, idx in spec.sm_offsets.items():
            z = params[idx] / tau
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            self.w_sm[k] = e / e.sum(axis=1, keepdims=True)

    def weights(self, sel_index: int) -> np.ndarray:
        group, row = self.spec.sel_group[sel_index]
        if group == "sigmoid":
            p = self.p_sig[row]
            return np.array([1.0 - p, p])
        return self.w_sm[group][row]


def selector_weights(spec, params, tau) -> list[np.ndarray]:
    """Mixture weights for every selector, in slot order."""
    ws = WeightSet(spec, np.asarray(params, dtype=float), tau)
    return [ws.weights(i) for i in range(len(spec.selectors))]


class ForwardTrace:
    """Intermediates of one soft forward pass, kept for the backward walk."""

    __slots__ = (
        "weights", "x", "y", "amix", "bmix", "value", "valid",
        "pa", "pb", "leafmix",
    )

    def __init__(self, n_nodes):
        self.amix = [None] * n_nodes
        self.bmix = [None] * n_nodes
        self.value = [None] * n_nodes
        self.valid = [None] * n_nodes
        self.pa = [None] * n_nodes
        self.pb = [None] * n_nodes
        self.leafmix = {}


def forward_pass(
    spec: ArchitectureSpec,
    params: np.ndarray,
    tau: float,
    x: np.ndarray,
    y: np.ndarray,
    want_partials: bool = False,
    saturation: "Saturation | None" = None,
) -> ForwardTrace:
    """Evaluate the temperature-softened tree bottom-up on arrays of points.

    Candidates with exactly zero weight are skipped entirely, so saturated
    (one-hot) selectors fully prune their subtrees from both the value and the
    validity mask.  When ``saturation`` is given, the singular / explosive
    parts of the operators are bounded (training-time landscape smoothing);
    otherwise exact operator semantics apply.
    """
    ws = WeightSet(spec, params, tau)
    tr = ForwardTrace(spec.n_nodes)
    tr.weights = ws
    tr.x = x
    tr.y = y
    ones = np.ones_like(x)

    def site_mix(site: InputSite):
        top = spec.selectors[site.top]
        w = ws.weights(site.top)
        mix = np.zeros_like(x)
        valid = True
        for ci, cand in enumerate(top.candidates):
            wc = float(w[ci])
            if wc == 0.0:
                continue
            if cand == "1":
                mix = mix + wc
            elif cand == "x":
                mix = mix + wc * x
            elif cand == "y":
                mix = mix + wc * y
            else:  # child
                if site.leaf is not None:
                    lw = ws.weights(site.leaf)
                    lmix = lw[0] * ones + lw[1] * x + lw[2] * y
                    tr.leafmix[(site.node, site.side)] = lmix
                    mix = mix + wc * lmix
                else:
                    mix = mix + wc * tr.value[site.child]
                    v = tr.valid[site.child]
                    valid = v if valid is True else (valid & v)
        return mix, valid

    for node in range(spec.n_nodes - 1, -1, -1):
        sl = spec.sites[2 * node]
        sr = spec.sites[2 * node + 1]
        amix, va = site_mix(sl)
        bmix, vb = site_mix(sr)
        if saturation is not None:
            value, pa, pb, ok = saturation.forward_and_partials(
                spec.operator, amix, bmix
            )
            tr.pa[node] = pa
            tr.pb[node] = pb
        elif want_partials:
            value, pa, pb, ok = forward_and_partials(spec.operator, amix, bmix)
            tr.pa[node] = pa
            tr.pb[node] = pb
        else:
            value, ok = forward(spec.operator, amix, bmix)
        if va is not True:
            ok = ok & va
        if vb is not True:
            ok = ok & vb
        tr.amix[node] = amix
        tr.bmix[node] = bmix
        tr.value[node] = np.where(ok, value, 0.0)
        tr.valid[node] = ok
    return tr


def soft_forward_many(spec, params, tau, x, y):
    """Soft tree values on arrays of points; returns (values, valid mask)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    tr = forward_pass(spec, np.asarray(params, dtype=float), tau, x, y)
    return tr.value[0], tr.valid[0]


def soft_forward(spec, params, tau, x: float, y: float) -> float | None:
    """Scalar soft forward value, or None on domain violation/overflow."""
    value, valid = soft_forward_many(
        spec, params, tau, np.atleast_1d(float(x)), np.atleast_1d(float(y))
    )
    return float(value[0]) if bool(valid[0]) else None


# ---------------------------------------------------------------------------
# hardening


def harden(spec: ArchitectureSpec, params: np.ndarray) -> Expr:
    """Snap every selector to its argmax candidate and read out the pruned
    one-hot tree.  Ties resolve to the earlier candidate (1 > x > y > child);
    a sigmoid gate picks its child only when sigmoid(logit) > 0.5."""
    params = np.asarray(params, dtype=float)

    def read_site(site: InputSite) -> Arg:
        top = spec.selectors[site.top]
        if top.kind == "sigmoid":
            cand = "child" if params[top.offset] > 0 else "1"
        else:
            logits = params[top.offset : top.offset + top.n_logits]
            cand = top.candidates[int(np.argmax(logits))]
        if cand != "child":
            return cand
        if site.leaf is not None:
            leaf = spec.selectors[site.leaf]
            logits = params[leaf.offset : leaf.offset + leaf.n_logits]
            return leaf.candidates[int(np.argmax(logits))]
        return read_node(site.child)

    def read_node(node: int) -> Expr:
        return Expr(
            spec.operator,
            read_site(spec.sites[2 * node]),
            read_site(spec.sites[2 * node + 1]),
        )

    return read_node(0)


class NotExpressible(ValueError):
    pass


def one_hot_params(spec: ArchitectureSpec, expr: Expr, margin: float = 30.0) -> np.ndarray:
    """Logits that make harden() read out ``expr`` (and make soft_forward at
    small tau match it).  Raises NotExpressible when the family's routing
    cannot produce the expression.  Untouched selectors stay at zero, which
    hardens to the constant 1."""
    params = np.zeros(spec.param_count)

    def set_selector(sel_index: int, cand: str):
        sel = spec.selectors[sel_index]
        if cand not in sel.candidates:
            raise NotExpressible(f"candidate {cand!r} not offered at this site")
        if sel.kind == "sigmoid":
            params[sel.offset] = margin if cand == "child" else -margin
        else:
            for j in range(sel.n_logits):
                params[sel.offset + j] = -margin
            params[sel.offset + sel.candidates.index(cand)] = margin

    def set_site(site: InputSite, arg: Arg):
        top = spec.selectors[site.top]
        if isinstance(arg, str):
            if arg in top.candidates:
                set_selector(site.top, arg)
            elif site.leaf is not None:
                set_selector(site.top, "child")
                set_selector(site.leaf, arg)
            else:
                raise NotExpressible(
                    f"{spec.family.value} offers no {arg!r} at node {site.node}"
                )
        else:
            if arg.op is not spec.operator:
                raise NotExpressible("operator mismatch")
            if site.child is None:
                raise NotExpressible("expression deeper than the architecture")
            set_selector(site.top, "child")
            set_node(site.child, arg)

    def set_node(node: int, e: Expr):
        set_site(spec.sites[2 * node], e.left)
        set_site(spec.sites[2 * node + 1], e.right)

    if expr.op is not spec.operator:
        raise NotExpressible("operator mismatch")
    set_node(0, expr)
    return params


# ---------------------------------------------------------------------------
# expressiveness enumeration


def enumerate_expressible(spec: ArchitectureSpec) -> frozenset[str]:
    """Canonical strings of every expression reachable by one-hot selector
    assignments, deduplicated.  Quadratic blowup per level; depth <= 3 only."""
    if spec.depth > 3:
        raise UnsupportedDepth("enumeration supported for depth <= 3 only")
    memo: dict[int, frozenset[str]] = {}

    def site_options(site: InputSite) -> frozenset[str]:
        opts: set[str] = set()
        top = spec.selectors[site.top]
        for cand in top.candidates:
            if cand == "child":
                if site.leaf is not None:
                    opts.update(spec.selectors[site.leaf].candidates)
                else:
                    opts.update(node_set(site.child))
            else:
                opts.add(cand)
        return frozenset(opts)

    def node_set(node: int) -> frozenset[str]:
        if node not in memo:
            left = site_options(spec.sites[2 * node])
            right = site_options(spec.sites[2 * node + 1])
            op = spec.operator.value
            memo[node] = frozenset(
                f"{op}({a},{b})" for a in left for b in right
            )
        return memo[node]

    return node_set(0)
