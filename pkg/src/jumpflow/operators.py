"""Nonlocal jump operators acting on evaluable functions.

Both operators integrate shifted differences of u against the atomic mark
measure, so every evaluation is an exact weighted sum over atoms:

    B u(t,x) = sum_a w_a gamma(t,x,e_a) (u(t, x + beta(t,x,e_a)) - u(t,x))
    K u(t,x) = sum_a w_a (u(t, x + beta_a) - u(t,x) - beta_a . grad_u(t,x))
"""

from __future__ import annotations

import numpy as np

from .exceptions import EvaluationError
from .measure import LevyMeasure


def _as_points(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _eval(u, t, x):
    vals = np.asarray(u(t, x), dtype=float).reshape(x.shape[0])
    if not np.all(np.isfinite(vals)):
        raise EvaluationError(f"function evaluated to a non-finite value at t={t}")
    return vals


def op_B(u, gamma, beta, measure: LevyMeasure, t: float, x):
    """Weighted nonlocal difference operator.

    u(t, x)->(n,) is any evaluable function, gamma(t, x, e)->(n,) the weight,
    beta(t, x, e)->(n, k) the jump size. x may be one point (k,) or a batch
    (n, k); the result matches (scalar or (n,)).
    """
    pts, single = _as_points(x)
    base = _eval(u, t, pts)
    total = np.zeros(pts.shape[0])
    for a in range(measure.n_atoms):
        e = measure.marks[a]
        shifted = pts + np.asarray(beta(t, pts, e), dtype=float).reshape(pts.shape)
        g = np.asarray(gamma(t, pts, e), dtype=float).reshape(pts.shape[0])
        total += measure.weights[a] * g * (_eval(u, t, shifted) - base)
    return float(total[0]) if single else total


def finite_difference_gradient(u, t, x, h_scale: float = 1e-4):
    """Central-difference gradient of u with step h = h_scale * (1 + |x|)."""
    pts, single = _as_points(x)
    n, k = pts.shape
    h = h_scale * (1.0 + np.sqrt(np.sum(pts**2, axis=1)))
    grad = np.empty((n, k))
    for i in range(k):
        bump = np.zeros_like(pts)
        bump[:, i] = h
        grad[:, i] = (_eval(u, t, pts + bump) - _eval(u, t, pts - bump)) / (2.0 * h)
    return grad[0] if single else grad


def op_K(u, grad_u, beta, measure: LevyMeasure, t: float, x):
    """Compensated nonlocal operator (second-order remainder of u).

    grad_u(t, x)->(n, k) supplies the exact gradient when available; pass
    None to fall back to central differences of u.
    """
    pts, single = _as_points(x)
    base = _eval(u, t, pts)
    if grad_u is None:
        grad = np.asarray(finite_difference_gradient(u, t, pts), dtype=float)
    else:
        grad = np.asarray(grad_u(t, pts), dtype=float)
    grad = grad.reshape(pts.shape)
    total = np.zeros(pts.shape[0])
    for a in range(measure.n_atoms):
        e = measure.marks[a]
        bta = np.asarray(beta(t, pts, e), dtype=float).reshape(pts.shape)
        total += measure.weights[a] * (_eval(u, t, pts + bta) - base - np.sum(bta * grad, axis=1))
    return float(total[0]) if single else total
