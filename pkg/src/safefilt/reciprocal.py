"""Filters phrased through a reciprocal barrier B, finite and positive
inside the safe set and unbounded at its boundary (B = 1/h for the
running example). Disturbance-free plants only: dx = (f + g u) dt.

Safety keeps dB/dt <= alpha_bar(1/B); the margin

    omega_tilde = L_{f+g u0} B - alpha_bar(1/B)

is positive where the nominal pushes toward the boundary, and the
filters cancel exactly that excess. Everything dualizes to the h-form
with omega = -h^2 * omega_tilde, which the tests exploit.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .systems import FD_STEP, _as_state
from .filters import GRAD_ZERO_TOL, Weight


class RcbfViolation(RuntimeError):
    """Boundary contact, or positive margin with no control authority."""


@dataclass(frozen=True)
class RcbfSpec:
    sys: object
    B: Callable
    alpha_bar: object
    u0: Callable
    gradB: Optional[Callable] = None
    Rbar: Optional[Callable] = None
    beta_gain: float = 2.0

    def __post_init__(self):
        if self.sys.m1 != 0:
            raise ValueError("reciprocal filters assume no disturbance "
                             "channel (m1 = 0), got m1 = %d" % self.sys.m1)
        if self.beta_gain < 2.0:
            raise ValueError("beta_gain %g < 2" % self.beta_gain)


def _grad_b(spec, x):
    if spec.gradB is not None:
        return np.atleast_1d(np.asarray(spec.gradB(x), dtype=float))
    n = x.size
    g = np.empty(n)
    for i in range(n):
        step = FD_STEP * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (float(spec.B(xp)) - float(spec.B(xm))) / (2.0 * step)
    return g


def _b_data(spec, x, t):
    x = _as_state(x, spec.sys.n)
    Bv = float(spec.B(x))
    if not (Bv > 0.0 and math.isfinite(Bv)):
        raise RcbfViolation("boundary contact: B = %g at x = %s" % (Bv, x))
    grad = _grad_b(spec, x)
    LfB = float(grad @ spec.sys.f_at(x))
    LgB = np.atleast_1d(grad @ spec.sys.g2_at(x))
    u0v = np.atleast_1d(np.asarray(spec.u0(x, t), dtype=float))
    return Bv, LfB, LgB, u0v


def omega_tilde(spec, x, t):
    Bv, LfB, LgB, u0v = _b_data(spec, x, t)
    return LfB + float(LgB @ u0v) - spec.alpha_bar(1.0 / Bv)


def rcbf_qp_filter(spec, x, t):
    """Full control: nominal minus beta times the min-norm excess."""
    Bv, LfB, LgB, u0v = _b_data(spec, x, t)
    om = LfB + float(LgB @ u0v) - spec.alpha_bar(1.0 / Bv)
    if om <= 0.0:
        return u0v
    q = float(LgB @ LgB)
    if math.sqrt(q) < GRAD_ZERO_TOL:
        raise RcbfViolation("margin %g > 0 with ||LgB|| ~ 0" % om)
    return u0v - spec.beta_gain * (om / q) * LgB


def _rbar_at(spec, x, u0v):
    m2 = spec.sys.m2
    if spec.Rbar is None:
        return np.eye(m2)
    R = np.asarray(spec.Rbar(x, u0v), dtype=float).reshape(m2, m2)
    np.linalg.cholesky(R)
    return R


def rcbf_inverse_optimal(spec, x, t):
    """u = u0 - beta * Rbar^{-1} LgB'."""
    _, _, LgB, u0v = _b_data(spec, x, t)
    R = _rbar_at(spec, x, u0v)
    return u0v - spec.beta_gain * np.linalg.solve(R, LgB)


def rcbf_condition(spec, x, t):
    """Margin alpha_bar(1/B) - L_{f+g u0}B + Sbar; >= 0 certifies the
    scaled correction keeps B finite."""
    Bv, LfB, LgB, u0v = _b_data(spec, x, t)
    R = _rbar_at(spec, x, u0v)
    Sbar = float(LgB @ np.linalg.solve(R, LgB))
    return spec.alpha_bar(1.0 / Bv) - (LfB + float(LgB @ u0v)) + Sbar


def rcbf_weights(spec, x, t):
    """Min-norm certificate weight Rbar = ||LgB||^2 / max{0, omega_tilde}
    (infinite off the constraint) and the matching state penalty."""
    Bv, LfB, LgB, u0v = _b_data(spec, x, t)
    om = LfB + float(LgB @ u0v) - spec.alpha_bar(1.0 / Bv)
    pos = max(0.0, om)
    if pos == 0.0:
        R = Weight(math.inf, True)
    else:
        R = Weight(float(LgB @ LgB) / pos)
    return R, rcbf_penalty_l(spec, x, t)


def rcbf_penalty_l(spec, x, t):
    """State penalty of the cost the min-norm filter minimizes.

    In h = 1/B coordinates:

        lbar = h^2 (-2 beta alpha_bar(h)
                    + beta max{(beta-2) omega_tilde, -2 omega_tilde})

    so lbar >= -(2 beta / B^2) alpha_bar(1/B), tight on the constraint.
    """
    beta = spec.beta_gain
    Bv, LfB, LgB, u0v = _b_data(spec, x, t)
    om = LfB + float(LgB @ u0v) - spec.alpha_bar(1.0 / Bv)
    h = 1.0 / Bv
    return h * h * (-2.0 * beta * spec.alpha_bar(h)
                    + beta * max((beta - 2.0) * om, -2.0 * om))


def rcbf_penalty_bound_gap(spec, x, t):
    """lbar minus its floor -(2 beta/B^2) alpha_bar(1/B); nonnegative."""
    Bv = float(spec.B(_as_state(x, spec.sys.n)))
    floor = -(2.0 * spec.beta_gain / (Bv * Bv)) * spec.alpha_bar(1.0 / Bv)
    return rcbf_penalty_l(spec, x, t) - floor
