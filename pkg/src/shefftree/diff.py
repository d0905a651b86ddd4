"""Reverse-mode gradient of the training loss with respect to the logits.

The loss is the mean squared residual of the soft forward pass over a dataset,
optionally plus selector-sharpening penalties (entropy of softmax weights,
p(1-p) binarity of sigmoid gates).  Points where the soft tree leaves its
numeric domain contribute a fixed clipped residual and no gradient, so a
transiently invalid region cannot poison the optimizer.
"""

from __future__ import annotations

import math

import numpy as np

from .arch import ArchitectureSpec, forward_pass

# Residual charged to points where the soft forward pass is invalid.
INVALID_RESIDUAL = 1e4


class TrainingDivergence(RuntimeError):
    """Raised when no dataset point remains valid under the current params."""


def loss_and_grad(
    spec: ArchitectureSpec,
    params: np.ndarray,
    tau: float,
    dataset,
    penalty_weight: float = 0.0,
    saturation=None,
):
    """Loss and its exact gradient w.r.t. the flat parameter vector.

    ``dataset`` needs array attributes ``x``, ``y``, ``target``.  With
    ``saturation`` the operators are bounded (see ops.Saturation), which is
    how training runs; without it the loss reflects exact operator semantics
    with invalid points contributing the fixed clipped residual.
    """
    params = np.asarray(params, dtype=float)
    x, y, target = dataset.x, dataset.y, dataset.target
    n = x.size
    if n == 0:
        raise TrainingDivergence("empty dataset")

    tr = forward_pass(spec, params, tau, x, y, want_partials=True, saturation=saturation)
    ws = tr.weights
    root_valid = tr.valid[0]
    if not root_valid.any():
        raise TrainingDivergence("soft forward invalid at every dataset point")

    resid = np.where(root_valid, tr.value[0] - target, INVALID_RESIDUAL)
    loss = float(resid @ resid) / n
    grad = np.zeros_like(params)

    d_val = [None] * spec.n_nodes
    d_val[0] = np.where(root_valid, (2.0 / n) * resid, 0.0)

    for node in range(spec.n_nodes):
        dv = d_val[node]
        if dv is None:
            continue
        for site, dmix in (
            (spec.sites[2 * node], dv * tr.pa[node]),
            (spec.sites[2 * node + 1], dv * tr.pb[node]),
        ):
            top = spec.selectors[site.top]
            w = ws.weights(site.top)
            dw = np.zeros(len(top.candidates))
            for ci, cand in enumerate(top.candidates):
                if cand == "1":
                    dw[ci] = dmix.sum()
                elif cand == "x":
                    dw[ci] = dmix @ x
                elif cand == "y":
                    dw[ci] = dmix @ y
                else:  # child
                    wc = float(w[ci])
                    if site.leaf is not None:
                        lmix = tr.leafmix.get((site.node, site.side))
                        if lmix is not None:
                            dw[ci] = dmix @ lmix
                        if wc != 0.0:
                            dl = wc * dmix
                            lw = ws.weights(site.leaf)
                            dlw = np.array([dl.sum(), dl @ x, dl @ y])
                            _softmax_backward(
                                grad, spec.selectors[site.leaf], lw, dlw, tau
                            )
                    else:
                        child_val = tr.value[site.child]
                        dw[ci] = dmix @ child_val
                        if wc != 0.0:
                            d_val[site.child] = wc * dmix
            if top.kind == "sigmoid":
                p = float(w[1])
                grad[top.offset] += (dw[1] - dw[0]) * p * (1.0 - p) / tau
            else:
                _softmax_backward(grad, top, w, dw, tau)

    if penalty_weight != 0.0:
        pen, pen_grad = penalty_and_grad(spec, params, tau)
        loss += penalty_weight * pen
        grad += penalty_weight * pen_grad

    return loss, grad


def _softmax_backward(grad, sel, w, dw, tau):
    # d loss / d logit_j = w_j * (dw_j - sum_c dw_c w_c) / tau
    inner = float(dw @ w)
    grad[sel.offset : sel.offset + sel.n_logits] += w * (dw - inner) / tau


def penalty_and_grad(spec: ArchitectureSpec, params: np.ndarray, tau: float):
    """Entropy over softmax selectors plus p(1-p) over sigmoid gates, with the
    exact gradient.  Both terms are >= 0 and vanish at one-hot weights."""
    params = np.asarray(params, dtype=float)
    grad = np.zeros_like(params)
    total = 0.0

    if spec.sig_offsets.size:
        z = params[spec.sig_offsets] / tau
        with np.errstate(over="ignore"):
            p = 1.0 / (1.0 + np.exp(-z))
        q = p * (1.0 - p)
        total += float(q.sum())
        np.add.at(grad, spec.sig_offsets, (1.0 - 2.0 * p) * q / tau)

    for k, idx in spec.sm_offsets.items():
        z = params[idx] / tau
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        w = e / e.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore"):
            lw = np.where(w > 0, np.log(w), 0.0)
        total += float(-(w * lw).sum())
        dw = np.where(w > 0, -(lw + 1.0), 0.0)
        inner = (dw * w).sum(axis=1, keepdims=True)
        np.add.at(grad, idx, w * (dw - inner) / tau)

    return total, grad


def grad_norms(grad: np.ndarray, spec: ArchitectureSpec) -> tuple[float, float]:
    """L2 norms of the gradient over the x- and y-variable selection slots."""
    gx = float(np.linalg.norm(grad[list(spec.x_slots)]))
    gy = float(np.linalg.norm(grad[list(spec.y_slots)]))
    return gx, gy


def leaf_grad_ratio(grad: np.ndarray, spec: ArchitectureSpec) -> float:
    """||grad_x|| / ||grad_y|| over variable-selection logits; +inf when the
    y-norm is zero."""
    gx, gy = grad_norms(grad, spec)
    return gx / gy if gy > 0.0 else math.inf
