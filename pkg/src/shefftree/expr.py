"""Concrete (hardened) expression trees and the canonical string grammar.

Grammar::

    expr := op "(" arg "," arg ")"
    arg  := "1" | "x" | "y" | expr
    op   := "eml" | "sml" | "rml"
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .ops import OpKind, forward

TERMINALS = ("1", "x", "y")

Arg = Union["Expr", str]


@dataclass(frozen=True)
class Expr:
    """One operator application; arguments are terminals or subtrees."""

    op: OpKind
    left: Arg
    right: Arg

    def __post_init__(self):
        for arg in (self.left, self.right):
            if isinstance(arg, str) and arg not in TERMINALS:
                raise ValueError(f"bad terminal {arg!r}")

    def __str__(self) -> str:
        return to_string(self)


def to_string(node: Arg) -> str:
    if isinstance(node, str):
        return node
    return f"{node.op.value}({to_string(node.left)},{to_string(node.right)})"


def depth(node: Arg) -> int:
    if isinstance(node, str):
        return 0
    return 1 + max(depth(node.left), depth(node.right))


class ParseError(ValueError):
    pass


def parse(text: str) -> Expr:
    """Parse a canonical expression string (whitespace not allowed)."""
    node, pos = _parse_arg(text, 0)
    if pos != len(text):
        raise ParseError(f"trailing input at {pos}: {text[pos:]!r}")
    if isinstance(node, str):
        raise ParseError("expression must be an operator application")
    return node


def _parse_arg(text: str, pos: int) -> tuple[Arg, int]:
    if pos < len(text) and text[pos] in TERMINALS:
        return text[pos], pos + 1
    for kind in OpKind:
        tag = kind.value + "("
        if text.startswith(tag, pos):
            left, pos = _parse_arg(text, pos + len(tag))
            if not text.startswith(",", pos):
                raise ParseError(f"expected ',' at {pos}")
            right, pos = _parse_arg(text, pos + 1)
            if not text.startswith(")", pos):
                raise ParseError(f"expected ')' at {pos}")
            return Expr(kind, left, right), pos + 1
    raise ParseError(f"unexpected input at {pos}: {text[pos:pos + 10]!r}")


def evaluate_many(node: Arg, x, y):
    """Evaluate on arrays of points; returns (values, valid mask)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if isinstance(node, str):
        if node == "1":
            return np.ones_like(x), np.ones_like(x, dtype=bool)
        return (x if node == "x" else y).copy(), np.ones_like(x, dtype=bool)
    la, lv = evaluate_many(node.left, x, y)
    ra, rv = evaluate_many(node.right, x, y)
    value, valid = forward(node.op, la, ra)
    return value, valid & lv & rv


def evaluate(node: Arg, x: float, y: float) -> float | None:
    """Scalar evaluation; None when any sub-expression leaves its domain."""
    value, valid = evaluate_many(node, np.float64(x), np.float64(y))
    return float(value) if bool(valid) else None
