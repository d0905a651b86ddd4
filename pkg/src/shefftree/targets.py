"""Target formulas (shape templates x leaf assignments x operators) and
training datasets on the evaluation grid.

Chain shapes thread the computation down one branch per level; the balanced
shape gives the root two full operator children.  The LL chain double-
exponentiates and is excluded from the default catalog, though it remains
constructible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .expr import Expr, evaluate_many, to_string
from .ops import OpKind, OVERFLOW_CAP


class Shape(str, Enum):
    LR = "LR"
    RL = "RL"
    RR = "RR"
    LL = "LL"
    BALANCED = "balanced"


CHAIN_SHAPES = (Shape.LR, Shape.RL, Shape.RR, Shape.LL)

# shapes excluded from the default catalog (numeric blowup on the grid)
EXCLUDED_SHAPES = (Shape.LL,)

# The four balanced leaf placements: alternating, mirrored, grouped both ways.
BALANCED_VARIANTS = (
    ("x", "y", "x", "y"),
    ("y", "x", "y", "x"),
    ("x", "x", "y", "y"),
    ("y", "y", "x", "x"),
)


@dataclass(frozen=True)
class TargetSpec:
    name: str
    operator: OpKind
    shape: Shape
    leaves: tuple[str, ...]

    def __post_init__(self):
        want = 4 if self.shape is Shape.BALANCED else 2
        if len(self.leaves) != want:
            raise ValueError(
                f"{self.shape.value} takes {want} leaves, got {len(self.leaves)}"
            )
        if any(leaf not in ("x", "y") for leaf in self.leaves):
            raise ValueError("leaves must be 'x' or 'y'")


def instantiate(spec: TargetSpec) -> Expr:
    """The concrete formula: leaves substituted into the shape template."""
    op = spec.operator
    if spec.shape is Shape.BALANCED:
        l1, l2, l3, l4 = spec.leaves
        return Expr(op, Expr(op, l1, l2), Expr(op, l3, l4))
    inner = Expr(op, *spec.leaves)
    if spec.shape is Shape.LR:
        return Expr(op, Expr(op, "1", inner), "1")
    if spec.shape is Shape.RL:
        return Expr(op, "1", Expr(op, inner, "1"))
    if spec.shape is Shape.RR:
        return Expr(op, "1", Expr(op, "1", inner))
    return Expr(op, Expr(op, inner, "1"), "1")  # LL


@dataclass(frozen=True)
class GridSpec:
    n: int = 21
    lo: float = -3.0
    hi: float = 3.0

    def axes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    target: np.ndarray = field(repr=False)
    n_filtered: int
    grid: GridSpec
    spec: TargetSpec
    expr: Expr

    def __len__(self) -> int:
        return self.x.size


class UnusableTargetError(ValueError):
    pass


MIN_DATASET_POINTS = 50


def make_dataset(spec: TargetSpec, grid: GridSpec = GridSpec()) -> Dataset:
    """Evaluate the target on the grid, dropping points that overflow or leave
    the operator domain."""
    if grid.n < 2:
        raise ValueError("grid needs at least 2 points per axis")
    axes = grid.axes()
    gx, gy = np.meshgrid(axes, axes, indexing="ij")
    gx = gx.ravel()
    gy = gy.ravel()
    e = instantiate(spec)
    values, valid = evaluate_many(e, gx, gy)
    keep = valid & (np.abs(values) <= OVERFLOW_CAP)
    n_filtered = int((~keep).sum())
    if keep.sum() < MIN_DATASET_POINTS:
        raise UnusableTargetError(
            f"{spec.name}: only {int(keep.sum())} usable grid points"
        )
    return Dataset(
        x=gx[keep].copy(),
        y=gy[keep].copy(),
        target=values[keep].copy(),
        n_filtered=n_filtered,
        grid=grid,
        spec=spec,
        expr=e,
    )


def eval_expression(expr: Expr, x: float, y: float) -> float | None:
    """Ground-truth scalar evaluation (thin wrapper kept next to the data)."""
    from .expr import evaluate

    return evaluate(expr, x, y)


def _chain_rows(op: OpKind, names: dict[tuple[Shape, str], str]) -> list[TargetSpec]:
    rows = []
    for (shape, order), name in names.items():
        rows.append(TargetSpec(name, op, shape, tuple(order)))
    return rows


def catalog() -> list[TargetSpec]:
    """The named targets behind the published recovery tables."""
    rows: list[TargetSpec] = []
    rows += _chain_rows(
        OpKind.EML,
        {
            (Shape.LR, "yx"): "Paper_yx",
            (Shape.RL, "xy"): "T1_xy",
            (Shape.RR, "xy"): "T4_xy",
            (Shape.LR, "xy"): "T8_xy",
            (Shape.RL, "yx"): "T1_yx",
            (Shape.RR, "yx"): "T4_yx",
        },
    )
    for op, prefix in ((OpKind.SML, "S"), (OpKind.RML, "R")):
        rows += _chain_rows(
            op,
            {
                (Shape.LR, "yx"): f"{prefix}_LR_yx",
                (Shape.LR, "xy"): f"{prefix}_LR_xy",
                (Shape.RL, "xy"): f"{prefix}_RL_xy",
                (Shape.RL, "yx"): f"{prefix}_RL_yx",
                (Shape.RR, "xy"): f"{prefix}_RR_xy",
                (Shape.RR, "yx"): f"{prefix}_RR_yx",
            },
        )
    for op in (OpKind.EML, OpKind.SML, OpKind.RML):
        for i, leaves in enumerate(BALANCED_VARIANTS, start=1):
            rows.append(
                TargetSpec(f"{op.value.upper()}_B{i}", op, Shape.BALANCED, leaves)
            )
    return rows


def get_target(name: str) -> TargetSpec:
    for spec in catalog():
        if spec.name == name:
            return spec
    raise KeyError(f"unknown target {name!r}")


def catalog_json() -> str:
    """Catalog export: name, operator, shape, leaves, canonical formula."""
    return json.dumps(
        [
            {
                "name": t.name,
                "operator": t.operator.value,
                "shape": t.shape.value,
                "leaves": list(t.leaves),
                "formula": to_string(instantiate(t)),
            }
            for t in catalog()
        ],
        indent=2,
    )
