"""The three binary operators: forward values, exact partials, domain guards.

All three share the subtraction form f(a) - g(b).  ``eml`` amplifies the left
input (d/da = e^a) and attenuates the right (d/db = -1/b); ``sml`` keeps that
direction with bounded right-side attenuation; ``rml`` reverses it.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

# Any intermediate or final value with magnitude above this cap, or non-finite,
# is treated as invalid (out of numeric domain).
OVERFLOW_CAP = 1e8


class OpKind(str, Enum):
    EML = "eml"  # e^a - ln|b|, invalid at b = 0
    SML = "sml"  # sinh(a) - arctan(b)
    RML = "rml"  # arctan(a) - sinh(b)


def _ok(v):
    return np.isfinite(v) & (np.abs(v) <= OVERFLOW_CAP)


def forward(op: OpKind, a, b):
    """Vectorized operator value.

    Returns ``(value, valid)``; ``value`` is forced to 0.0 where invalid so
    callers never propagate inf/nan through later arithmetic.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        if op is OpKind.EML:
            fa = np.exp(a)
            gb = np.log(np.abs(b))
            valid = (b != 0) & _ok(fa) & _ok(gb)
        elif op is OpKind.SML:
            fa = np.sinh(a)
            gb = np.arctan(b)
            valid = _ok(fa)
        else:
            fa = np.arctan(a)
            gb = np.sinh(b)
            valid = _ok(gb)
        value = fa - gb
        valid = valid & _ok(value)
    return np.where(valid, value, 0.0), valid


def forward_and_partials(op: OpKind, a, b):
    """Value plus analytic partials (d/da, d/db), zeroed where invalid."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        if op is OpKind.EML:
            fa = np.exp(a)
            gb = np.log(np.abs(b))
            valid = (b != 0) & _ok(fa) & _ok(gb)
            da = fa
            db = -1.0 / b
        elif op is OpKind.SML:
            fa = np.sinh(a)
            gb = np.arctan(b)
            valid = _ok(fa)
            da = np.cosh(a)
            db = -1.0 / (1.0 + b * b)
        else:
            fa = np.arctan(a)
            gb = np.sinh(b)
            valid = _ok(gb)
            da = 1.0 / (1.0 + a * a)
            db = -np.cosh(b)
        value = fa - gb
        valid = valid & _ok(value)
        zero = np.zeros_like(value)
    return (
        np.where(valid, value, zero),
        np.where(valid, da, zero),
        np.where(valid, db, zero),
        valid,
    )


class Saturation:
    """Bounded training-time variants of the operators.

    The exponential-side arguments are ceilinged and the log argument floored,
    so the soft training landscape has no singular walls or double-exponential
    blowups; derivatives are the exact a.e. derivatives of the saturated
    functions (zero on the flat regions).  Evaluation and recovery checking
    always use the exact operators above.
    """

    __slots__ = ("exp_arg_max", "ln_floor")

    def __init__(self, exp_arg_max: float = 11.5, ln_floor: float = 1e-3):
        self.exp_arg_max = exp_arg_max
        self.ln_floor = ln_floor

    def forward_and_partials(self, op: OpKind, a, b):
        amax, eps = self.exp_arg_max, self.ln_floor
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            if op is OpKind.EML:
                fa = np.exp(np.minimum(a, amax))
                gb = np.log(np.maximum(np.abs(b), eps))
                da = np.where(a < amax, fa, 0.0)
                db = np.where(np.abs(b) > eps, -1.0 / np.where(b == 0, 1.0, b), 0.0)
            elif op is OpKind.SML:
                ac = np.clip(a, -amax, amax)
                fa = np.sinh(ac)
                gb = np.arctan(b)
                da = np.where(np.abs(a) < amax, np.cosh(ac), 0.0)
                db = -1.0 / (1.0 + b * b)
            else:
                bc = np.clip(b, -amax, amax)
                fa = np.arctan(a)
                gb = np.sinh(bc)
                da = 1.0 / (1.0 + a * a)
                db = np.where(np.abs(b) < amax, -np.cosh(bc), 0.0)
            value = fa - gb
        return value, da, db, np.ones(np.shape(value), dtype=bool)


def eval_op(op: OpKind, a: float, b: float) -> float | None:
    """Scalar operator value, or None when (a, b) falls outside the domain."""
    value, valid = forward(op, a, b)
    return float(value) if bool(valid) else None


def grad_op(op: OpKind, a: float, b: float) -> tuple[float, float] | None:
    """Scalar analytic partials (d/da, d/db), or None outside the domain."""
    _, da, db, valid = forward_and_partials(op, a, b)
    return (float(da), float(db)) if bool(valid) else None
