"""Cost functionals and certificates evaluated on recorded trajectories.

Every cost here is the one its filter provably optimizes, so the
numbers double as correctness checks: the running+terminal sum is
invariant along optimal play, perturbing the control moves the total
the right way, and the disturbance-to-state bound holds sample by
sample.

Weights that blow up off the constraint set never enter float
arithmetic. A deviation paired with an infinite weight contributes
zero when the deviation is (numerically) zero and otherwise makes the
whole cost infinite with the sign the term carries in that cost.

Cost kinds ("selector" strings accepted from configs):

    intro-min, intro-sontag       scalar introduction loops, value x0
    disturbance-game              general weights, terminal 2*beta*h
    qp-weighted                   min-norm displayed weights (drifts)
    qp-exact                      disturbance-free exact certificate
    reciprocal-min                minimized mirror, terminal -2*beta*h
    stochastic-value              Ito value, E J = 2*beta*h(x0)
    noise-game                    covariance-adversarial variant
    projection-min                estimate updates, terminal -2*beta*h
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .comparison import kl_solve_grid
from .filters import state_penalty_l
from .projection import PROJ_GRAD_TOL
from .reciprocal import _b_data
from .sim import integrate_ode
from .stochastic import nssf_state_penalty_l, stoch_state_penalty_l
from .systems import lie_data

DSSF_PASS_TOL = 1e-4        # disturbance-to-state margin may dip this far
PROBE_TOL = 1e-6            # optimality probes must not beat J_opt by more
PAIR_TOL = 1e-12            # deviation norm counted as zero against inf

COST_KINDS = ("intro-min", "intro-sontag", "disturbance-game",
              "qp-weighted", "qp-exact", "reciprocal-min",
              "stochastic-value", "noise-game", "projection-min")

# +1: filter minimizes the cost, -1: filter maximizes it
COST_DIRECTION = {
    "intro-min": +1, "intro-sontag": +1,
    "disturbance-game": -1, "qp-weighted": -1, "qp-exact": -1,
    "stochastic-value": -1, "noise-game": -1,
    "reciprocal-min": +1, "projection-min": +1,
}


@dataclass(frozen=True)
class CostSpec:
    kind: str
    spec: Optional[object] = None
    beta_gain: float = 2.0
    lam: float = 2.0
    cov: Optional[object] = None

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ValueError("unknown cost kind %r (known: %s)"
                             % (self.kind, ", ".join(COST_KINDS)))


@dataclass
class CostValue:
    total: float
    infinite: bool
    running: np.ndarray


def _dev_sq(traj):
    d = traj.controls - traj.nominal
    return np.einsum("ij,ij->i", d, d)


def _intro_min_terms(traj):
    x = traj.states[:, 0]
    u = traj.controls[:, 0]
    u0 = traj.nominal[:, 0]
    m = np.maximum(0.0, u0 + x)
    num = (u - u0) ** 2
    vals = np.maximum(x, -u0)
    with np.errstate(divide="ignore", invalid="ignore"):
        quot = num / (4.0 * m)
    zero_m = m == 0.0
    paired = zero_m & (num <= PAIR_TOL ** 2)
    pos_inf = zero_m & ~paired
    quot[zero_m] = 0.0
    vals = vals + quot
    return vals, pos_inf, np.zeros_like(pos_inf), x.copy()


def _intro_sontag_terms(traj):
    x = traj.states[:, 0]
    u = traj.controls[:, 0]
    u0 = traj.nominal[:, 0]
    Q = np.hypot(u0 + x, 1.0)
    vals = 0.5 * (-u0 + x + Q) + (u - u0) ** 2 / (2.0 * (u0 + x + Q))
    none = np.zeros(x.size, dtype=bool)
    return vals, none, none.copy(), x.copy()


def _disturbance_game_terms(traj, cost):
    iospec = cost.spec
    beta, lam = iospec.beta_gain, iospec.lam
    base = iospec.base
    N = traj.times.size
    vals = np.zeros(N)
    for k in range(N):
        x = traj.states[k]
        t = traj.times[k]
        l = state_penalty_l(iospec, x, t)
        dev = traj.controls[k] - traj.nominal[k]
        if iospec.R2 is None:
            R2 = np.eye(base.sys.m2)
        else:
            R2 = np.asarray(iospec.R2(x, traj.nominal[k]),
                            dtype=float).reshape(base.sys.m2, base.sys.m2)
        quad = float(dev @ R2 @ dev)
        dnorm = float(np.linalg.norm(traj.disturbances[k]))
        pen = beta * lam * iospec.gamma.gamma(dnorm / lam)
        vals[k] = l - quad + pen
    none = np.zeros(N, dtype=bool)
    return vals, none, none.copy(), 2.0 * beta * traj.h_values


def _qp_weighted_terms(traj, cost):
    spec = cost.spec
    beta, lam = cost.beta_gain, cost.lam
    N = traj.times.size
    vals = np.zeros(N)
    pos_inf = np.zeros(N, dtype=bool)
    neg_inf = np.zeros(N, dtype=bool)
    dev_sq = _dev_sq(traj)
    for k in range(N):
        x = traj.states[k]
        t = traj.times[k]
        ld = lie_data(spec.sys, spec.bf, x)
        u0v = traj.nominal[k]
        rinv = spec.rho.inverse(max(0.0, -ld.h_val))
        omega = (ld.Lfh + float(ld.Lg2h @ u0v)
                 - float(np.linalg.norm(ld.Lg1h)) * rinv
                 + spec.alpha(ld.h_val))
        l = (2.0 * beta * spec.alpha(ld.h_val)
             + beta * min(beta * omega, -2.0 * omega)
             - beta * (2.0 - lam) * float(np.linalg.norm(ld.Lg1h)) * rinv)
        vals[k] = l
        # control term, weight ||Lg2h||^2 / max{0, -omega}
        neg = max(0.0, -omega)
        if neg == 0.0:
            if dev_sq[k] > PAIR_TOL ** 2:
                neg_inf[k] = True
        else:
            vals[k] -= float(ld.Lg2h @ ld.Lg2h) / neg * dev_sq[k]
        # disturbance term, weight 1 / rho^{-1}(max{0, -h})
        d_sq = float(traj.disturbances[k] @ traj.disturbances[k])
        if rinv == 0.0:
            if d_sq > PAIR_TOL ** 2:
                pos_inf[k] = True
        else:
            vals[k] += (beta / lam) / rinv * d_sq
    return vals, pos_inf, neg_inf, 2.0 * beta * traj.h_values


def _qp_exact_terms(traj, cost):
    spec = cost.spec
    beta = cost.beta_gain
    N = traj.times.size
    vals = np.zeros(N)
    pos_inf = np.zeros(N, dtype=bool)
    neg_inf = np.zeros(N, dtype=bool)
    dev_sq = _dev_sq(traj)
    for k in range(N):
        x = traj.states[k]
        ld = lie_data(spec.sys, spec.bf, x)
        u0v = traj.nominal[k]
        om2 = ld.Lfh + float(ld.Lg2h @ u0v) + spec.alpha(ld.h_val)
        vals[k] = (2.0 * beta * spec.alpha(ld.h_val)
                   + beta * min((beta - 2.0) * om2, -2.0 * om2))
        if om2 >= 0.0:
            if dev_sq[k] > PAIR_TOL ** 2:
                neg_inf[k] = True
        else:
            vals[k] -= float(ld.Lg2h @ ld.Lg2h) / (-om2) * dev_sq[k]
    return vals, pos_inf, neg_inf, 2.0 * beta * traj.h_values


def _reciprocal_min_terms(traj, cost):
    spec = cost.spec
    beta = spec.beta_gain
    N = traj.times.size
    vals = np.zeros(N)
    pos_inf = np.zeros(N, dtype=bool)
    dev_sq = _dev_sq(traj)
    terms = np.zeros(N)
    for k in range(N):
        x = traj.states[k]
        t = traj.times[k]
        Bv, LfB, LgB, u0v = _b_data(spec, x, t)
        om = LfB + float(LgB @ u0v) - spec.alpha_bar(1.0 / Bv)
        h = 1.0 / Bv
        vals[k] = h * h * (-2.0 * beta * spec.alpha_bar(h)
                           + beta * max((beta - 2.0) * om, -2.0 * om))
        pos = max(0.0, om)
        if pos == 0.0:
            if dev_sq[k] > PAIR_TOL ** 2:
                pos_inf[k] = True
        else:
            r2_eff = h * h * float(LgB @ LgB) / pos
            vals[k] += r2_eff * dev_sq[k]
        terms[k] = -2.0 * beta * h
    return vals, pos_inf, np.zeros(N, dtype=bool), terms


def _stochastic_value_terms(traj, cost):
    spec = cost.spec
    beta = spec.beta_gain
    if spec.gamma2 is None:
        raise ValueError("stochastic-value needs gamma2 on the spec")
    N = traj.times.size
    vals = np.zeros(N)
    for k in range(N):
        x = traj.states[k]
        t = traj.times[k]
        l = stoch_state_penalty_l(spec, x, t)
        dev = traj.controls[k] - traj.nominal[k]
        if spec.R2 is None:
            quad = float(dev @ dev)
        else:
            R2 = np.asarray(spec.R2(x, traj.nominal[k]), dtype=float)
            R2 = R2.reshape(spec.sys.m2, spec.sys.m2)
            quad = float(dev @ R2 @ dev)
        vals[k] = l - beta * beta * spec.gamma2.gamma(
            (2.0 / beta) * math.sqrt(max(0.0, quad)))
    none = np.zeros(N, dtype=bool)
    return vals, none, none.copy(), 2.0 * beta * traj.h_values


def _noise_game_terms(traj, cost):
    spec = cost.spec
    beta, lam = spec.beta_gain, spec.lam
    if spec.gamma1 is None or spec.gamma2 is None:
        raise ValueError("noise-game needs gamma1 and gamma2 on the spec")
    if cost.cov is None:
        raise ValueError("noise-game needs the covariance schedule")
    N = traj.times.size
    vals = np.zeros(N)
    for k in range(N):
        x = traj.states[k]
        t = traj.times[k]
        l = nssf_state_penalty_l(spec, x, t)
        dev = traj.controls[k] - traj.nominal[k]
        if spec.R2 is None:
            quad = float(dev @ dev)
        else:
            R2 = np.asarray(spec.R2(x, traj.nominal[k]), dtype=float)
            R2 = R2.reshape(spec.sys.m2, spec.sys.m2)
            quad = float(dev @ R2 @ dev)
        S = cost.cov.at(t)
        frob = float(np.linalg.norm(S @ S.T, "fro"))
        vals[k] = (l
                   - beta * beta * spec.gamma2.gamma(
                       (2.0 / beta) * math.sqrt(max(0.0, quad)))
                   + beta * lam * spec.gamma1.gamma(frob / lam))
    none = np.zeros(N, dtype=bool)
    return vals, none, none.copy(), 2.0 * beta * traj.h_values


def _projection_min_terms(traj, cost):
    spec = cost.spec
    beta = spec.beta_gain
    N = traj.times.size
    vals = np.zeros(N)
    pos_inf = np.zeros(N, dtype=bool)
    dev_sq = _dev_sq(traj)
    for k in range(N):
        th = traj.states[k]
        h = spec.bf.value(th)
        g = spec.bf.gradient(th)
        gu = float(g @ traj.nominal[k])
        m = max(0.0, -gu - spec.alpha(h))
        vals[k] = 2.0 * beta * gu + beta * beta * m
        if m == 0.0:
            if dev_sq[k] > PAIR_TOL ** 2:
                pos_inf[k] = True
        else:
            q = float(g @ g)
            if math.sqrt(q) < PROJ_GRAD_TOL:
                raise ValueError("flat gradient on an active sample")
            vals[k] += q * dev_sq[k] / m
    return vals, pos_inf, np.zeros(N, dtype=bool), -2.0 * beta * traj.h_values


_EVALUATORS = {
    "intro-min": lambda traj, cost: _intro_min_terms(traj),
    "intro-sontag": lambda traj, cost: _intro_sontag_terms(traj),
    "disturbance-game": _disturbance_game_terms,
    "qp-weighted": _qp_weighted_terms,
    "qp-exact": _qp_exact_terms,
    "reciprocal-min": _reciprocal_min_terms,
    "stochastic-value": _stochastic_value_terms,
    "noise-game": _noise_game_terms,
    "projection-min": _projection_min_terms,
}


def _terms(traj, cost):
    if traj.escape_time is not None:
        raise ValueError("cost undefined on an escaped record")
    return _EVALUATORS[cost.kind](traj, cost)


def evaluate_cost(traj, cost):
    """Trapezoid of the integrand plus the terminal at the last sample.

    A single-sample record is terminal-only. Tagged infinities make the
    total +-inf (by the sign the term carries); conflicting signs are an
    error, not a number.
    """
    vals, pos_inf, neg_inf, terms = _terms(traj, cost)
    if vals.size > 1:
        running = cumulative_trapezoid(vals, traj.times, initial=0.0)
    else:
        running = np.zeros(1)
    has_pos = bool(np.any(pos_inf))
    has_neg = bool(np.any(neg_inf))
    if has_pos and has_neg:
        raise ValueError("cost has infinite terms of both signs")
    if has_pos or has_neg:
        return CostValue(math.inf if has_pos else -math.inf, True, running)
    return CostValue(float(running[-1] + terms[-1]), False, running)


def cost_invariance_check(traj, cost):
    """Max over samples of |terminal_k + running_k - terminal_0|.

    Zero (to integration accuracy) exactly when the recorded loop plays
    the optimal pair of the cost.
    """
    vals, pos_inf, neg_inf, terms = _terms(traj, cost)
    if np.any(pos_inf) or np.any(neg_inf):
        raise ValueError("invariance undefined with infinite samples")
    running = cumulative_trapezoid(vals, traj.times, initial=0.0)
    return float(np.max(np.abs(terms + running - terms[0])))


# ---------------------------------------------------------------------------
# state bounds
# ---------------------------------------------------------------------------

def certify_dssf_bound(traj, alpha, rho, d_history=None):
    """Sample-wise disturbance-to-state safety margin.

        margin_k = h_k - klbound(alpha, h_0, t_k) + rho(sup_{j<=k} |d_j|)

    Returns (margins, min_margin, passed) with the pass line at
    -DSSF_PASS_TOL to absorb integration error.
    """
    h = traj.h_values
    kl = kl_solve_grid(alpha, h[0], traj.times)
    d = traj.disturbances if d_history is None else np.asarray(d_history)
    dn = np.linalg.norm(np.atleast_2d(d), axis=1)
    sup = np.maximum.accumulate(dn)
    gains = np.array([rho(v) for v in sup])
    margins = h - kl + gains
    mn = float(np.min(margins))
    return margins, mn, mn >= -DSSF_PASS_TOL


def ibssf_check(traj, alpha, gamma, lam):
    """Integral safety value h_T + int alpha(h) + (lam/2) int gamma(|d|/lam);
    nonnegative (within DSSF_PASS_TOL) along any filtered run."""
    a_vals = np.array([alpha(v) for v in traj.h_values])
    dn = np.linalg.norm(traj.disturbances, axis=1)
    g_vals = np.array([gamma.gamma(v / lam) for v in dn])
    ia = float(trapezoid(a_vals, traj.times))
    ig = float(trapezoid(g_vals, traj.times))
    value = float(traj.h_values[-1]) + ia + 0.5 * lam * ig
    return value, value >= -DSSF_PASS_TOL


# ---------------------------------------------------------------------------
# optimality probes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeSetup:
    sys: object
    bf: object
    u_star: object            # (x, t) -> (m2,), the certified policy
    u0: object                # (x, t) -> (m2,), recorded as nominal
    d_star: Optional[object]  # (x, t) -> (m1,), worst-case feedback
    x0: object
    cost: CostSpec
    direction: int            # +1 minimized, -1 maximized


def standard_perturbations(T):
    return {
        "const": lambda t: 1.0,
        "flip": lambda t: 1.0 if t < 0.5 * T else -1.0,
        "slow-sine": math.sin,
        "fast-sine": lambda t: math.sin(3.0 * t),
    }


def optimality_probe(setup, cfg, perturbations=None,
                     amplitudes=(-0.2, -0.05, 0.05, 0.2)):
    """Integrate the certified loop, then re-integrate with the control
    perturbed by eps*delta(t), and demand the total never beats it.

    Returns {"j_opt", "margins", "worst", "passed"}; each margin is
    direction * (J_pert - J_opt) and must clear -PROBE_TOL.
    """
    if perturbations is None:
        perturbations = standard_perturbations(cfg.T)
    base = integrate_ode(setup.sys, setup.bf, setup.u_star, setup.u0,
                         setup.x0, setup.d_star, cfg)
    j_opt = evaluate_cost(base, setup.cost)
    if j_opt.infinite:
        raise ValueError("certified loop produced an infinite cost")
    margins = {}
    for name, delta in perturbations.items():
        for eps in amplitudes:
            def control(x, t, _d=delta, _e=eps):
                u = np.atleast_1d(np.asarray(setup.u_star(x, t), dtype=float))
                return u + _e * _d(t)
            traj = integrate_ode(setup.sys, setup.bf, control, setup.u0,
                                 setup.x0, setup.d_star, cfg)
            j = evaluate_cost(traj, setup.cost)
            # +-inf totals fall through the same arithmetic correctly
            margins["%s@%+g" % (name, eps)] = (
                setup.direction * (j.total - j_opt.total))
    worst = min(margins.values())
    return {"j_opt": j_opt.total, "margins": margins, "worst": worst,
            "passed": worst >= -PROBE_TOL}


def mc_summary(totals):
    """(mean, standard error) of per-path cost totals."""
    totals = np.asarray(totals, dtype=float)
    mean = float(np.mean(totals))
    se = float(np.std(totals, ddof=1) / math.sqrt(totals.size))
    return mean, se
